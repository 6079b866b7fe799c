#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "cyclestain/evaluation/agreement.hpp"
#include "json.hpp"

namespace cyclestain {

/// Hidden source labels of survey items.
inline constexpr const char* kSurveyDomains[] = {"FF", "vFFPE", "FFPE"};

struct QuestionSchema {
  int q1_min = 1;
  int q1_max = 5;
  std::vector<std::string> q2_options{"benign", "G1", "G2", "G3", "G4", "defer"};
};

struct SurveyItem {
  std::string id;      // opaque, safe to show
  std::string domain;  // hidden; never leaves the server before export
  std::string source;  // hidden
  nlohmann::json fov;  // hidden field-of-view metadata
};

struct ReviewerPlan {
  std::string id;
  std::uint64_t seed = 0;
  std::vector<std::string> order;  // item ids
};

struct SurveyPlan {
  std::uint64_t seed = 0;
  QuestionSchema questions;
  std::vector<SurveyItem> items;  // sorted by id
  std::vector<ReviewerPlan> reviewers;

  const SurveyItem* find_item(std::string_view id) const;
  const ReviewerPlan* find_reviewer(std::string_view id) const;
};

void to_json(nlohmann::json& j, const SurveyPlan& p);
void from_json(const nlohmann::json& j, SurveyPlan& p);
void save_plan(const std::filesystem::path& path, const SurveyPlan& p);
SurveyPlan load_plan(const std::filesystem::path& path);

/// Lower-case words that must never appear in a client payload.
const std::vector<std::string>& blinding_terms();
/// First blinding term found in `text` (case-insensitive), if any.
std::optional<std::string> find_blinding_term(std::string_view text);

/// Samples counts[d] items from pools[d] without replacement for every domain
/// and gives each reviewer a seeded permutation. Throws DataError naming the
/// domain when a pool is too small, ConfigError for unusable reviewer ids.
SurveyPlan build_survey(const std::map<std::string, std::vector<std::filesystem::path>>& pools,
                        const std::map<std::string, int>& counts, const std::vector<std::string>& reviewers,
                        std::uint64_t seed, QuestionSchema questions = {});

struct Response {
  std::string reviewer;
  std::string image_id;
  int q1 = 0;
  std::string q2;
  std::string timestamp;  // server-assigned, ISO-8601 UTC

  /// Same answer ignoring the timestamp.
  bool same_answer(const Response& o) const {
    return reviewer == o.reviewer && image_id == o.image_id && q1 == o.q1 && q2 == o.q2;
  }
};

void to_json(nlohmann::json& j, const Response& r);
void from_json(const nlohmann::json& j, Response& r);

/// Rejections thrown by the store, carrying the HTTP status to report.
class SurveyError : public Error {
 public:
  SurveyError(int status, const std::string& what) : Error(what), status(status) {}
  int status;
};

enum class RecordOutcome { Created, Duplicate, Overwritten };

/// Append-only response log (responses.jsonl in `dir`). Every accepted write is
/// fsynced before it is acknowledged; the log is replayed on open and a torn
/// final line is ignored. Readers get immutable snapshots.
class ResponseStore {
 public:
  using Key = std::pair<std::string, std::string>;  // (reviewer, image)
  using Snapshot = std::map<Key, Response>;

  ResponseStore(const SurveyPlan& plan, const std::filesystem::path& dir);
  ~ResponseStore();
  ResponseStore(const ResponseStore&) = delete;
  ResponseStore& operator=(const ResponseStore&) = delete;

  /// Validates against the plan. Unknown reviewer or image -> 404, bad
  /// answers -> 400, differing answer without overwrite -> 409.
  std::pair<RecordOutcome, Response> record(Response r, bool overwrite = false);

  std::shared_ptr<const Snapshot> snapshot() const;
  /// Revisions (overwrites) seen since the log began, in order.
  std::vector<Response> revisions() const;
  std::filesystem::path log_path() const { return path_; }

 private:
  void append(const nlohmann::json& line);

  SurveyPlan plan_;
  std::filesystem::path path_;
  int fd_ = -1;
  mutable std::mutex write_mutex_;
  std::shared_ptr<const Snapshot> snapshot_;
  std::vector<Response> revisions_;
};

enum class Question { Q1, Q2 };
Question parse_question(std::string_view s);

struct MissingPair {
  std::string reviewer;
  std::string image_id;
};

/// Unblinded export. Ratings carry subject = item id, rater = reviewer,
/// category = grade (Q2) or score (Q1).
struct RatingExport {
  Question question = Question::Q2;
  std::vector<Rating> ratings;
  std::vector<std::string> rating_domains;  // parallel to ratings
  std::vector<MissingPair> missing;
};

/// Throws DataError listing missing (reviewer, image) pairs unless allow_partial.
RatingExport export_ratings(const SurveyPlan& plan, const ResponseStore::Snapshot& responses, Question q,
                            bool allow_partial = false);

/// CSV with header subject_id,rater_id,category,domain.
std::string export_csv(const RatingExport& e);

/// Q2 rating matrix per domain (or one "all" matrix). Under a partial export,
/// subjects without the full rater count are left out.
std::map<std::string, RatingMatrix> rating_matrices(const RatingExport& e, const QuestionSchema& schema,
                                                    bool group_by_domain = true);
/// Q1 scores for pei_summary.
std::vector<PeiScore> pei_scores(const RatingExport& e);

/// Benign vs cancer view of a grade matrix: G1..G4 merge into "cancer";
/// "benign" and "defer" keep their own columns.
RatingMatrix benign_vs_cancer(const RatingMatrix& grades);

}  // namespace cyclestain
