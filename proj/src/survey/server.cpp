#include "cyclestain/survey/server.hpp"

#include <algorithm>
#include <cstdlib>

#include "cyclestain/core/rng.hpp"
#include "cyclestain/imaging/image_io.hpp"
#include "httplib.h"

namespace cyclestain {
namespace {

using nlohmann::json;

HttpReply json_reply(int status, const json& body) { return {status, "application/json", body.dump()}; }
HttpReply error_reply(int status, const std::string& msg) { return json_reply(status, {{"error", msg}}); }

std::optional<std::string> path_suffix(const std::string& path, std::string_view prefix) {
  if (path.rfind(prefix, 0) != 0) return std::nullopt;
  std::string rest = path.substr(prefix.size());
  if (rest.empty() || rest.find('/') != std::string::npos) return std::nullopt;
  return rest;
}

std::string status_word(RecordOutcome o) {
  switch (o) {
    case RecordOutcome::Created: return "created";
    case RecordOutcome::Duplicate: return "duplicate";
    case RecordOutcome::Overwritten: return "revised";
  }
  return "";
}

}  // namespace

SurveyService::SurveyService(SurveyPlan plan, const std::filesystem::path& store_dir,
                             std::optional<std::string> admin_token)
    : plan_(std::move(plan)), store_(plan_, store_dir), admin_token_(std::move(admin_token)) {
  if (admin_token_ && admin_token_->empty()) admin_token_.reset();
}

HttpReply SurveyService::handle(const HttpRequest& req) {
  try {
    if (req.method == "GET") {
      if (auto r = path_suffix(req.path, "/api/survey/")) return survey(*r);
      if (auto id = path_suffix(req.path, "/api/image/")) return image(*id);
      if (req.path == "/api/export") return export_(req);
    } else if (req.method == "POST" && req.path == "/api/response") {
      return response(req.body);
    }
    return error_reply(404, "no such endpoint");
  } catch (const SurveyError& e) {
    return error_reply(e.status, e.what());
  } catch (const DataError& e) {
    return error_reply(409, e.what());
  } catch (const std::exception& e) {
    return error_reply(500, "internal error");
  }
}

HttpReply SurveyService::survey(const std::string& reviewer) {
  const ReviewerPlan* rp = plan_.find_reviewer(reviewer);
  if (!rp) return error_reply(404, "unknown reviewer");
  const auto snap = store_.snapshot();
  json items = json::array();
  json answered = json::array();
  for (std::size_t i = 0; i < rp->order.size(); ++i) {
    const std::string& id = rp->order[i];
    items.push_back({{"id", id}, {"position", i + 1}, {"image_url", "/api/image/" + id}});
    if (snap->count({rp->id, id})) answered.push_back(id);
  }
  const json body = {{"reviewer", rp->id},
                     {"items", items},
                     {"questions",
                      {{"q1", {{"min", plan_.questions.q1_min}, {"max", plan_.questions.q1_max}}},
                       {"q2", {{"options", plan_.questions.q2_options}}}}},
                     {"answered", answered},
                     {"progress", {{"answered", answered.size()}, {"total", rp->order.size()}}}};
  return json_reply(200, body);
}

HttpReply SurveyService::image(const std::string& id) {
  const SurveyItem* item = plan_.find_item(id);
  if (!item) return error_reply(404, "unknown image");
  std::lock_guard lock(image_mutex_);
  auto it = image_cache_.find(id);
  if (it == image_cache_.end()) {
    const std::vector<std::uint8_t> png = encode_png(read_image(item->source));
    it = image_cache_.emplace(id, std::string(png.begin(), png.end())).first;
  }
  return {200, "image/png", it->second};
}

HttpReply SurveyService::response(const std::string& body) {
  Response r;
  bool overwrite = false;
  try {
    const json j = json::parse(body);
    r = j.get<Response>();
    overwrite = j.value("overwrite", false);
  } catch (const json::exception&) {
    return error_reply(400, "body must be a JSON object with reviewer, image_id, integer q1 and string q2");
  }
  const auto [outcome, stored] = store_.record(r, overwrite);
  return json_reply(outcome == RecordOutcome::Created ? 201 : 200,
                    {{"status", status_word(outcome)}, {"response", stored}});
}

HttpReply SurveyService::export_(const HttpRequest& req) {
  if (!admin_token_) return error_reply(403, "export is disabled: no admin token configured");
  const auto auth = req.headers.find("authorization");
  if (auth == req.headers.end() || auth->second != "Bearer " + *admin_token_)
    return error_reply(401, "admin bearer token required");
  const auto qit = req.query.find("question");
  Question q = Question::Q2;
  try {
    q = parse_question(qit == req.query.end() ? "Q2" : qit->second);
  } catch (const ConfigError& e) {
    return error_reply(400, e.what());
  }
  const auto fit = req.query.find("format");
  const std::string format = fit == req.query.end() ? "csv" : fit->second;
  const auto pit = req.query.find("partial");
  const bool partial = pit != req.query.end() && (pit->second == "1" || pit->second == "true");
  const RatingExport e = export_ratings(plan_, *store_.snapshot(), q, partial);
  if (format == "csv") return {200, "text/csv", export_csv(e)};
  if (format == "json") {
    json rows = json::array();
    for (std::size_t i = 0; i < e.ratings.size(); ++i)
      rows.push_back({{"subject_id", e.ratings[i].subject},
                      {"rater_id", e.ratings[i].rater},
                      {"category", e.ratings[i].category},
                      {"domain", e.rating_domains[i]}});
    return json_reply(200, {{"question", q == Question::Q1 ? "Q1" : "Q2"}, {"ratings", rows}, {"missing", e.missing.size()}});
  }
  return error_reply(400, "format must be csv or json");
}

void SurveyService::listen(const std::string& host, int port) {
  httplib::Server svr;
  auto adapt = [this](const httplib::Request& in, httplib::Response& out) {
    HttpRequest req;
    req.method = in.method;
    req.path = in.path;
    for (const auto& [k, v] : in.params) req.query.emplace(k, v);
    for (const auto& [k, v] : in.headers) {
      std::string name = k;
      std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
      req.headers.emplace(name, v);
    }
    req.body = in.body;
    const HttpReply reply = handle(req);
    out.status = reply.status;
    out.set_content(reply.body, reply.content_type);
  };
  svr.Get(".*", adapt);
  svr.Post(".*", adapt);
  const int bound = port == 0 ? svr.bind_to_any_port(host) : (svr.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw DataError("survey service could not listen on " + host + ":" + std::to_string(port));
  server_.store(&svr);
  bound_port_.store(bound);
  const bool ok = svr.listen_after_bind();
  bound_port_.store(0);
  server_.store(nullptr);
  if (!ok) throw DataError("survey service could not listen on " + host + ":" + std::to_string(port));
}

void SurveyService::stop() {
  if (auto* s = static_cast<httplib::Server*>(server_.load())) s->stop();
}

std::vector<std::string> png_chunk_types(const std::string& bytes) {
  static const std::string signature("\x89PNG\r\n\x1a\n", 8);
  std::vector<std::string> types;
  if (bytes.compare(0, 8, signature) != 0) return types;
  std::size_t pos = 8;
  while (pos + 8 <= bytes.size()) {
    const auto b = [&](std::size_t i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i])); };
    const std::uint32_t len = (b(pos) << 24) | (b(pos + 1) << 16) | (b(pos + 2) << 8) | b(pos + 3);
    types.push_back(bytes.substr(pos + 4, 4));
    pos += 12 + static_cast<std::size_t>(len);
  }
  return types;
}

BlindingReport audit_blinding(const SurveyPlan& plan, const std::filesystem::path& scratch_dir, int permutations) {
  std::filesystem::remove_all(scratch_dir);
  SurveyService svc(plan, scratch_dir);
  BlindingReport report;

  std::vector<std::string> hints;
  for (const auto& item : plan.items) {
    const std::filesystem::path p(item.source);
    hints.push_back(p.string());
    if (p.stem().string().size() >= 4) hints.push_back(p.stem().string());
  }
  auto scan = [&](const std::string& endpoint, const HttpReply& reply) {
    ++report.payloads_scanned;
    if (reply.content_type == "image/png") {
      for (const auto& t : png_chunk_types(reply.body))
        if (t != "IHDR" && t != "PLTE" && t != "IDAT" && t != "IEND")
          report.findings.push_back({endpoint, "PNG carries a " + t + " chunk"});
      return;
    }
    if (const auto term = find_blinding_term(reply.body))
      report.findings.push_back({endpoint, "payload contains '" + *term + "'"});
    for (const auto& h : hints)
      if (reply.body.find(h) != std::string::npos) report.findings.push_back({endpoint, "payload leaks source name " + h});
  };
  auto get = [&](const std::string& path) {
    const HttpReply r = svc.handle({"GET", path, {}, {}, {}});
    scan("GET " + path, r);
    return r;
  };
  auto post = [&](const json& body) {
    const HttpReply r = svc.handle({"POST", "/api/response", {}, {}, body.dump()});
    scan("POST /api/response", r);
    return r;
  };

  for (const auto& rev : plan.reviewers) get("/api/survey/" + rev.id);
  for (const auto& item : plan.items) get("/api/image/" + item.id);
  get("/api/survey/nobody");
  get("/api/image/000000000000");
  get("/api/unknown");
  svc.handle({"GET", "/api/export", {}, {}, {}});  // admin surface, not client-facing

  if (!plan.reviewers.empty() && !plan.items.empty()) {
    const auto& rev = plan.reviewers.front();
    const std::string& opt = plan.questions.q2_options.front();
    for (const auto& id : rev.order)
      post({{"reviewer", rev.id}, {"image_id", id}, {"q1", plan.questions.q1_min}, {"q2", opt}});
    post({{"reviewer", rev.id}, {"image_id", rev.order.front()}, {"q1", plan.questions.q1_min}, {"q2", opt}});
    post({{"reviewer", rev.id}, {"image_id", rev.order.front()}, {"q1", plan.questions.q1_max}, {"q2", opt}});
    post({{"reviewer", rev.id}, {"image_id", rev.order.front()}, {"q1", plan.questions.q1_max + 1}, {"q2", opt}});
    post({{"reviewer", rev.id}, {"image_id", rev.order.front()}, {"q1", plan.questions.q1_min}, {"q2", "?"}});
    post({{"reviewer", "nobody"}, {"image_id", rev.order.front()}, {"q1", 1}, {"q2", opt}});
    post({{"reviewer", rev.id}, {"image_id", "000000000000"}, {"q1", 1}, {"q2", opt}});
    post(json("not an object"));
    get("/api/survey/" + rev.id);
  }

  // Association between presentation position and hidden label, per reviewer.
  for (const auto& rev : plan.reviewers) {
    std::vector<std::string> labels;
    for (const auto& id : rev.order) labels.push_back(plan.find_item(id)->domain);
    auto statistic = [](const std::vector<std::string>& l) {
      std::map<std::string, std::pair<double, int>> acc;
      for (std::size_t i = 0; i < l.size(); ++i) {
        acc[l[i]].first += static_cast<double>(i);
        acc[l[i]].second += 1;
      }
      const double centre = (static_cast<double>(l.size()) - 1.0) / 2.0;
      double s = 0.0;
      for (const auto& [k, v] : acc) {
        const double m = v.first / v.second;
        s += v.second * (m - centre) * (m - centre);
      }
      return s;
    };
    const double observed = statistic(labels);
    Rng rng(derive_seed(plan.seed, "blinding-audit:" + rev.id));
    int extreme = 0;
    for (int p = 0; p < permutations; ++p) {
      for (std::size_t i = labels.size(); i > 1; --i) std::swap(labels[i - 1], labels[rng.below(i)]);
      if (statistic(labels) >= observed - 1e-12) ++extreme;
    }
    report.min_order_p_value =
        std::min(report.min_order_p_value, (1.0 + extreme) / (1.0 + static_cast<double>(permutations)));
  }
  return report;
}

}  // namespace cyclestain
