#pragma once

#include <vector>

#include "cyclestain/evaluation/agreement.hpp"

namespace cyclestain::testing {

/// Spreadsheet-style Fleiss kappa: per-row agreement, column shares, then the ratio.
inline double kappa_oracle(const std::vector<std::vector<int>>& rows) {
  const double n = [&] {
    int s = 0;
    for (int c : rows.front()) s += c;
    return static_cast<double>(s);
  }();
  const std::size_t k = rows.front().size();
  double pbar = 0.0;
  std::vector<double> col(k, 0.0);
  for (const auto& r : rows) {
    double sq = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      sq += static_cast<double>(r[j]) * r[j];
      col[j] += r[j];
    }
    pbar += (sq - n) / (n * (n - 1.0));
  }
  pbar /= static_cast<double>(rows.size());
  double pe = 0.0;
  for (double c : col) {
    const double p = c / (n * static_cast<double>(rows.size()));
    pe += p * p;
  }
  return (pbar - pe) / (1.0 - pe);
}

inline RatingMatrix matrix_of(const std::vector<std::vector<int>>& rows,
                              std::vector<std::string> categories) {
  RatingMatrix m;
  m.categories = std::move(categories);
  m.counts = rows;
  for (std::size_t i = 0; i < rows.size(); ++i) m.subjects.push_back("s" + std::to_string(i));
  return m;
}

/// Four subjects, three raters, three categories.
inline const std::vector<std::vector<int>> kFixtureRows = {{3, 0, 0}, {1, 2, 0}, {0, 1, 2}, {1, 1, 1}};
/// P-bar = 5/12 and expected agreement 50/144 give 5/47.
inline constexpr double kFixtureKappa = 5.0 / 47.0;

}  // namespace cyclestain::testing
