#pragma once

#include <map>
#include <string>
#include <vector>

#include "cyclestain/imaging/image_io.hpp"
#include "cyclestain/survey/survey.hpp"
#include "support.hpp"

namespace cyclestain::testing {

inline const std::vector<std::string> kFixtureReviewers = {"R1", "R2", "R3", "R4", "R5"};

struct FixtureRow {
  std::string source;  // file stem
  std::string domain;
  std::vector<std::string> grades;  // one per reviewer
  std::vector<int> scores;
};

// Hand-written answers for three items per domain.
inline const std::vector<FixtureRow> kFixtureAnswers = {
    {"s01", "FF", {"benign", "benign", "benign", "G1", "benign"}, {1, 2, 1, 1, 2}},
    {"s02", "FF", {"G2", "G2", "G3", "G2", "defer"}, {2, 1, 1, 2, 3}},
    {"s03", "FF", {"G1", "G1", "G1", "G1", "G1"}, {1, 1, 2, 1, 1}},
    {"s04", "vFFPE", {"benign", "benign", "benign", "benign", "benign"}, {3, 4, 3, 4, 3}},
    {"s05", "vFFPE", {"G3", "G3", "G4", "G3", "G3"}, {4, 4, 5, 4, 4}},
    {"s06", "vFFPE", {"G1", "G2", "G1", "G2", "G1"}, {3, 3, 4, 3, 3}},
    {"s07", "FFPE", {"G4", "G4", "G4", "G4", "G3"}, {5, 4, 5, 5, 4}},
    {"s08", "FFPE", {"benign", "G1", "benign", "benign", "benign"}, {4, 5, 4, 4, 5}},
    {"s09", "FFPE", {"G2", "G2", "G2", "G2", "G2"}, {5, 5, 5, 4, 5}},
};

// Tallied by hand over (benign, G1, G2, G3, G4, defer).
inline const std::map<std::string, std::vector<std::vector<int>>> kFixtureMatrices = {
    {"FF", {{4, 1, 0, 0, 0, 0}, {0, 0, 3, 1, 0, 1}, {0, 5, 0, 0, 0, 0}}},
    {"vFFPE", {{5, 0, 0, 0, 0, 0}, {0, 0, 0, 4, 1, 0}, {0, 3, 2, 0, 0, 0}}},
    {"FFPE", {{0, 0, 0, 1, 4, 0}, {4, 1, 0, 0, 0, 0}, {0, 0, 5, 0, 0, 0}}},
};

/// Writes one small PNG per fixture row under root/<domain>/ and returns the pools.
inline std::map<std::string, std::vector<std::filesystem::path>> write_fixture_pools(
    const std::filesystem::path& root) {
  std::map<std::string, std::vector<std::filesystem::path>> pools;
  std::uint64_t seed = 1;
  for (const FixtureRow& r : kFixtureAnswers) {
    const auto dir = root / r.domain;
    std::filesystem::create_directories(dir);
    const auto path = dir / (r.source + ".png");
    write_image(path, random_image(seed++, 16, 16, ValueRange::Unit));
    pools[r.domain].push_back(path);
  }
  return pools;
}

inline const FixtureRow& fixture_row(const SurveyItem& item) {
  const std::string stem = std::filesystem::path(item.source).stem().string();
  for (const FixtureRow& r : kFixtureAnswers)
    if (r.source == stem) return r;
  throw std::runtime_error("no fixture row for " + item.source);
}

/// Plan with every fixture item for the five reviewers.
inline SurveyPlan fixture_plan(const std::filesystem::path& root, std::uint64_t seed = 11) {
  return build_survey(write_fixture_pools(root), {{"FF", 3}, {"vFFPE", 3}, {"FFPE", 3}}, kFixtureReviewers, seed);
}

/// Records every fixture answer in `store`.
inline void record_fixture(const SurveyPlan& plan, ResponseStore& store) {
  for (const SurveyItem& item : plan.items) {
    const FixtureRow& row = fixture_row(item);
    for (std::size_t r = 0; r < kFixtureReviewers.size(); ++r)
      store.record({kFixtureReviewers[r], item.id, row.scores[r], row.grades[r], ""});
  }
}

}  // namespace cyclestain::testing
