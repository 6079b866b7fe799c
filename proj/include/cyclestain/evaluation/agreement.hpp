#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cyclestain/core/error.hpp"

namespace cyclestain {

/// Subjects x categories count table; every row sums to the rater count.
struct RatingMatrix {
  std::vector<std::string> subjects;
  std::vector<std::string> categories;
  std::vector<std::vector<int>> counts;

  int raters() const;
  void validate() const;
};

struct Rating {
  std::string subject;
  std::string rater;
  std::string category;
};

/// Tallies ratings into a matrix. Subjects are ordered by id; categories follow
/// `categories` when given, otherwise sorted by label. Throws DataError when
/// subjects have unequal rater counts or a label is outside `categories`.
RatingMatrix tally(const std::vector<Rating>& ratings, std::vector<std::string> categories = {});

class UndefinedKappa : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Throws UndefinedKappa when expected agreement is 1 (a single category used).
double fleiss_kappa(const RatingMatrix& m);

struct KappaInterval {
  double low = 0.0;
  double high = 0.0;
  int used = 0;     // resamples with a defined kappa
  int skipped = 0;  // resamples where every rating fell in one category
};

/// Percentile bootstrap over subjects (type-7 quantiles), clamped to [-1, 1].
KappaInterval kappa_ci(const RatingMatrix& m, double level = 0.95, int resamples = 1000,
                       std::uint64_t seed = 7);

/// Interpretation label for kappa rounded to two decimals.
std::string kappa_band(double kappa);

struct AgreementResult {
  double kappa = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::string band;
  KappaInterval interval;
};

/// Kappa, its bootstrap interval widened to contain the point estimate, and band.
AgreementResult agreement(const RatingMatrix& m, double level = 0.95, int resamples = 1000,
                          std::uint64_t seed = 7);

struct PeiScore {
  std::string record_id;
  std::string rater;
  std::string domain;
  int score = 0;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample (n-1); 0 for n = 1
  std::size_t n = 0;
};

MeanStd mean_std(const std::vector<double>& v);

struct PeiSummary {
  std::vector<std::string> domains;
  std::vector<std::string> raters;
  std::vector<std::vector<MeanStd>> per_rater;  // [domain][rater]
  std::vector<MeanStd> total;                   // [domain]
};

/// Groups scores by domain and rater. Domains and raters keep the order given,
/// or first-appearance order when empty. Throws DataError naming the record for
/// a score outside 1..5.
PeiSummary pei_summary(const std::vector<PeiScore>& scores, std::vector<std::string> domains = {},
                       std::vector<std::string> raters = {});

}  // namespace cyclestain
