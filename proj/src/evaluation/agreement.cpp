#include "cyclestain/evaluation/agreement.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>

#include "cyclestain/core/rng.hpp"

namespace cyclestain {
namespace {

double type7_quantile(std::vector<double> sorted_values, double q) {
  std::sort(sorted_values.begin(), sorted_values.end());
  const double h = (static_cast<double>(sorted_values.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted_values.size() - 1);
  return sorted_values[lo] + (h - static_cast<double>(lo)) * (sorted_values[hi] - sorted_values[lo]);
}

// Kappa over the rows listed in `rows` (with repetition); nullopt when undefined.
std::optional<double> kappa_rows(const RatingMatrix& m, const std::vector<std::size_t>& rows) {
  const int n = m.raters();
  const std::size_t k = m.categories.size();
  std::vector<long> column(k, 0);
  double p_bar = 0.0;
  for (std::size_t r : rows) {
    long sq = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const long c = m.counts[r][j];
      sq += c * c;
      column[j] += c;
    }
    p_bar += static_cast<double>(sq - n) / (static_cast<double>(n) * (n - 1));
  }
  const long total = static_cast<long>(rows.size()) * n;
  if (std::any_of(column.begin(), column.end(), [&](long c) { return c == total; })) return std::nullopt;
  p_bar /= static_cast<double>(rows.size());
  double p_e = 0.0;
  for (long c : column) {
    const double p = static_cast<double>(c) / static_cast<double>(total);
    p_e += p * p;
  }
  return (p_bar - p_e) / (1.0 - p_e);
}

}  // namespace

int RatingMatrix::raters() const {
  if (counts.empty()) return 0;
  int n = 0;
  for (int c : counts.front()) n += c;
  return n;
}

void RatingMatrix::validate() const {
  if (counts.size() < 2) throw ContractError("rating matrix needs at least 2 subjects");
  if (categories.empty()) throw ContractError("rating matrix needs at least one category");
  if (!subjects.empty() && subjects.size() != counts.size())
    throw ContractError("rating matrix subject labels do not match its rows");
  const int n = raters();
  if (n < 2) throw ContractError("rating matrix needs at least 2 raters per subject");
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const auto& row = counts[i];
    if (row.size() != categories.size())
      throw ContractError("rating matrix row " + std::to_string(i) + " has the wrong width");
    int sum = 0;
    for (int c : row) {
      if (c < 0) throw ContractError("rating matrix row " + std::to_string(i) + " has a negative count");
      sum += c;
    }
    if (sum != n)
      throw ContractError("rating matrix row " + std::to_string(i) + " sums to " + std::to_string(sum) +
                          ", expected " + std::to_string(n));
  }
}

RatingMatrix tally(const std::vector<Rating>& ratings, std::vector<std::string> categories) {
  if (categories.empty()) {
    std::set<std::string> labels;
    for (const Rating& r : ratings) labels.insert(r.category);
    categories.assign(labels.begin(), labels.end());
  }
  std::map<std::string, std::size_t> col;
  for (std::size_t j = 0; j < categories.size(); ++j) col[categories[j]] = j;

  std::map<std::string, std::vector<int>> rows;
  std::set<std::pair<std::string, std::string>> seen;
  for (const Rating& r : ratings) {
    const auto it = col.find(r.category);
    if (it == col.end()) throw DataError("rating for subject " + r.subject + " uses unknown category '" + r.category + "'");
    if (!seen.emplace(r.subject, r.rater).second)
      throw DataError("rater " + r.rater + " rated subject " + r.subject + " more than once");
    auto& row = rows[r.subject];
    row.resize(categories.size(), 0);
    ++row[it->second];
  }
  RatingMatrix m;
  m.categories = std::move(categories);
  for (auto& [subject, row] : rows) {
    m.subjects.push_back(subject);
    m.counts.push_back(std::move(row));
  }
  for (std::size_t i = 1; i < m.counts.size(); ++i) {
    int a = 0;
    int b = 0;
    for (int c : m.counts[0]) a += c;
    for (int c : m.counts[i]) b += c;
    if (a != b)
      throw DataError("subject " + m.subjects[i] + " has " + std::to_string(b) + " ratings, subject " +
                      m.subjects[0] + " has " + std::to_string(a));
  }
  return m;
}

double fleiss_kappa(const RatingMatrix& m) {
  m.validate();
  std::vector<std::size_t> rows(m.counts.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  const auto k = kappa_rows(m, rows);
  if (!k) throw UndefinedKappa("fleiss_kappa: every rating falls in one category; kappa is undefined");
  return *k;
}

KappaInterval kappa_ci(const RatingMatrix& m, double level, int resamples, std::uint64_t seed) {
  m.validate();
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("kappa_ci: level must be in (0, 1)");
  if (resamples < 200) throw ConfigError("kappa_ci: at least 200 resamples are required");
  Rng rng(derive_seed(seed, "kappa-bootstrap"));
  const std::size_t n = m.counts.size();
  std::vector<std::size_t> rows(n);
  std::vector<double> values;
  KappaInterval out;
  for (int b = 0; b < resamples; ++b) {
    for (auto& r : rows) r = rng.below(n);
    if (const auto k = kappa_rows(m, rows)) values.push_back(*k);
    else ++out.skipped;
  }
  if (values.empty()) throw UndefinedKappa("kappa_ci: every bootstrap resample had undefined kappa");
  out.used = static_cast<int>(values.size());
  const double alpha = 1.0 - level;
  out.low = std::clamp(type7_quantile(values, alpha / 2.0), -1.0, 1.0);
  out.high = std::clamp(type7_quantile(values, 1.0 - alpha / 2.0), -1.0, 1.0);
  return out;
}

std::string kappa_band(double kappa) {
  if (!(kappa >= -1.0 && kappa <= 1.0)) throw ContractError("kappa_band: kappa must lie in [-1, 1]");
  const double r = std::round(kappa * 100.0) / 100.0;
  if (r <= 0.0) return "chance";
  if (r <= 0.20) return "none to slight";
  if (r <= 0.40) return "fair";
  if (r <= 0.60) return "moderate";
  if (r <= 0.80) return "substantial";
  return "almost perfect";
}

AgreementResult agreement(const RatingMatrix& m, double level, int resamples, std::uint64_t seed) {
  AgreementResult a;
  a.kappa = fleiss_kappa(m);
  a.interval = kappa_ci(m, level, resamples, seed);
  a.ci_low = std::min(a.interval.low, a.kappa);
  a.ci_high = std::max(a.interval.high, a.kappa);
  a.band = kappa_band(a.kappa);
  return a;
}

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd s;
  s.n = v.size();
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

PeiSummary pei_summary(const std::vector<PeiScore>& scores, std::vector<std::string> domains,
                       std::vector<std::string> raters) {
  if (scores.empty()) throw ContractError("pei_summary: no scores");
  auto add_unique = [](std::vector<std::string>& list, const std::string& v) {
    if (std::find(list.begin(), list.end(), v) == list.end()) list.push_back(v);
  };
  const bool fixed_domains = !domains.empty();
  const bool fixed_raters = !raters.empty();
  for (const PeiScore& s : scores) {
    if (s.score < 1 || s.score > 5)
      throw DataError("PEI score " + std::to_string(s.score) + " out of range 1..5 in record " + s.record_id);
    if (!fixed_domains) add_unique(domains, s.domain);
    if (!fixed_raters) add_unique(raters, s.rater);
  }
  auto index_of = [](const std::vector<std::string>& list, const std::string& v, const char* what,
                     const std::string& record) {
    const auto it = std::find(list.begin(), list.end(), v);
    if (it == list.end()) throw DataError(std::string("unknown ") + what + " '" + v + "' in record " + record);
    return static_cast<std::size_t>(it - list.begin());
  };
  std::vector<std::vector<std::vector<double>>> cells(domains.size(), std::vector<std::vector<double>>(raters.size()));
  std::vector<std::vector<double>> totals(domains.size());
  for (const PeiScore& s : scores) {
    const std::size_t d = index_of(domains, s.domain, "domain", s.record_id);
    const std::size_t r = index_of(raters, s.rater, "rater", s.record_id);
    cells[d][r].push_back(s.score);
    totals[d].push_back(s.score);
  }
  PeiSummary out;
  out.domains = domains;
  out.raters = raters;
  for (std::size_t d = 0; d < domains.size(); ++d) {
    out.per_rater.emplace_back();
    for (std::size_t r = 0; r < raters.size(); ++r) out.per_rater.back().push_back(mean_std(cells[d][r]));
    out.total.push_back(mean_std(totals[d]));
  }
  return out;
}

}  // namespace cyclestain
