#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "cyclestain/survey/survey.hpp"

namespace cyclestain {

struct HttpRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::map<std::string, std::string> headers;  // lower-case names
  std::string body;
};

struct HttpReply {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

inline constexpr const char* kAdminTokenEnv = "CYCLESTAIN_ADMIN_TOKEN";

/// HTTP surface of the survey, independent of the socket layer:
///   GET  /api/survey/:reviewer   ordered opaque items, question ranges, answered ids
///   GET  /api/image/:id          PNG re-encoded without metadata
///   POST /api/response           {reviewer, image_id, q1, q2, overwrite?}
///   GET  /api/export?question=Q1|Q2&format=csv|json[&partial=1]   bearer token
class SurveyService {
 public:
  SurveyService(SurveyPlan plan, const std::filesystem::path& store_dir,
                std::optional<std::string> admin_token = std::nullopt);

  HttpReply handle(const HttpRequest& req);

  const SurveyPlan& plan() const { return plan_; }
  ResponseStore& store() { return store_; }

  /// Blocks serving on host:port until stop() is called. Port 0 picks a free port.
  void listen(const std::string& host, int port);
  void stop();
  /// Port accepted on once listening, 0 before.
  int bound_port() const { return bound_port_.load(); }

 private:
  HttpReply survey(const std::string& reviewer);
  HttpReply image(const std::string& id);
  HttpReply response(const std::string& body);
  HttpReply export_(const HttpRequest& req);

  SurveyPlan plan_;
  ResponseStore store_;
  std::optional<std::string> admin_token_;
  std::mutex image_mutex_;
  std::map<std::string, std::string> image_cache_;
  std::atomic<void*> server_{nullptr};
  std::atomic<int> bound_port_{0};
};

/// Names of the chunks in a PNG stream; empty when the signature is wrong.
std::vector<std::string> png_chunk_types(const std::string& bytes);

struct BlindingFinding {
  std::string endpoint;
  std::string problem;
};

struct BlindingReport {
  std::size_t payloads_scanned = 0;
  std::vector<BlindingFinding> findings;
  /// Smallest permutation-test p-value over reviewers for an association
  /// between presentation position and hidden label.
  double min_order_p_value = 1.0;
  bool clean() const { return findings.empty(); }
};

/// Exercises every client-facing endpoint against a scratch copy of the store
/// (survey listing for each reviewer, every image, accepted, duplicate,
/// conflicting and invalid submissions, unknown ids) and scans each payload for
/// blinding terms, item sources and PNG metadata chunks.
BlindingReport audit_blinding(const SurveyPlan& plan, const std::filesystem::path& scratch_dir,
                              int permutations = 2000);

}  // namespace cyclestain
