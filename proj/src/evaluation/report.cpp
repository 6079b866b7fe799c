#include "cyclestain/evaluation/report.hpp"

#include <cmath>
#include <cstdio>

namespace cyclestain {
namespace {

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  std::string s(buf);
  // Avoid printing "-0.00" for tiny negatives.
  if (s.front() == '-' && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
  return s;
}

}  // namespace

std::string format_mean_std(double mean, double std, int decimals) {
  return fixed(mean, decimals) + " ± " + fixed(std, decimals);
}

std::string format_mean_std(const MeanStd& s, int decimals) { return format_mean_std(s.mean, s.std, decimals); }

std::string format_interval(double value, double low, double high, int decimals) {
  return fixed(value, decimals) + " (" + fixed(low, decimals) + "," + fixed(high, decimals) + ")";
}

std::string format_interval(const AgreementResult& a, int decimals) {
  return format_interval(a.kappa, a.ci_low, a.ci_high, decimals);
}

std::string domain_display_name(const std::string& domain) {
  if (domain == "FF") return "Frozen";
  if (domain == "vFFPE" || domain == "virtualFFPE") return "Virtual FFPE";
  return domain;
}

std::string render_pei_table(const PeiSummary& s) {
  std::string out;
  for (const auto& r : s.raters) out += "\t" + r;
  out += "\tTotal\n";
  for (std::size_t d = 0; d < s.domains.size(); ++d) {
    out += domain_display_name(s.domains[d]);
    for (const MeanStd& c : s.per_rater[d]) out += "\t" + (c.n ? format_mean_std(c) : std::string("-"));
    out += "\t" + format_mean_std(s.total[d]) + "\n";
  }
  return out;
}

std::string render_agreement_table(const std::vector<AgreementRow>& rows) {
  std::string out = "\tBenign vs cancer\tGrading\n";
  for (const auto& r : rows)
    out += domain_display_name(r.domain) + "\t" + format_interval(r.benign_vs_cancer) + "\t" +
           format_interval(r.grading) + "\n";
  return out;
}

std::string render_lpips_table(const std::vector<LpipsRow>& rows) {
  std::string out = "\tLPIPS metric\n";
  for (const auto& r : rows)
    out += domain_display_name(r.domain) + "\t" + format_mean_std(r.summary.mean, r.summary.std) + "\n";
  return out;
}

}  // namespace cyclestain
