#pragma once

#include <string>
#include <vector>

#include "cyclestain/evaluation/agreement.hpp"
#include "cyclestain/evaluation/perceptual.hpp"

namespace cyclestain {

/// "0.41 ± 0.07"
std::string format_mean_std(double mean, double std, int decimals = 2);
std::string format_mean_std(const MeanStd& s, int decimals = 2);
/// "0.52 (0.42,0.62)"
std::string format_interval(double value, double low, double high, int decimals = 2);
std::string format_interval(const AgreementResult& a, int decimals = 2);

/// Display label used in the tables: FF -> "Frozen", vFFPE -> "Virtual FFPE".
std::string domain_display_name(const std::string& domain);

/// Tab-separated table: one row per domain, one column per rater, then Total.
std::string render_pei_table(const PeiSummary& s);

struct AgreementRow {
  std::string domain;
  AgreementResult benign_vs_cancer;
  AgreementResult grading;
};
std::string render_agreement_table(const std::vector<AgreementRow>& rows);

struct LpipsRow {
  std::string domain;
  DistanceSummary summary;
};
std::string render_lpips_table(const std::vector<LpipsRow>& rows);

}  // namespace cyclestain
