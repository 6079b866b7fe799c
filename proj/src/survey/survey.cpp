#include "cyclestain/survey/survey.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include "cyclestain/core/rng.hpp"

namespace cyclestain {
namespace {

using nlohmann::json;

// No f, i, l, o or u: ids can never spell a blinding term.
constexpr std::string_view kIdAlphabet = "0123456789abcdeghjkmnpqrstvwxyz";
constexpr int kIdLength = 12;

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

}  // namespace

const SurveyItem* SurveyPlan::find_item(std::string_view id) const {
  const auto it = std::lower_bound(items.begin(), items.end(), id,
                                   [](const SurveyItem& a, std::string_view b) { return a.id < b; });
  return it != items.end() && it->id == id ? &*it : nullptr;
}

const ReviewerPlan* SurveyPlan::find_reviewer(std::string_view id) const {
  for (const auto& r : reviewers)
    if (r.id == id) return &r;
  return nullptr;
}

void to_json(json& j, const SurveyPlan& p) {
  j = json{{"format", "cyclestain-survey-plan"},
           {"version", 1},
           {"seed", p.seed},
           {"questions",
            {{"q1_min", p.questions.q1_min}, {"q1_max", p.questions.q1_max}, {"q2_options", p.questions.q2_options}}},
           {"items", json::array()},
           {"reviewers", json::array()}};
  for (const auto& it : p.items)
    j["items"].push_back({{"id", it.id}, {"domain", it.domain}, {"source", it.source}, {"fov", it.fov}});
  for (const auto& r : p.reviewers) j["reviewers"].push_back({{"id", r.id}, {"seed", r.seed}, {"order", r.order}});
}

void from_json(const json& j, SurveyPlan& p) {
  if (j.value("format", "") != "cyclestain-survey-plan") throw DataError("not a survey plan");
  p.seed = j.at("seed").get<std::uint64_t>();
  const auto& q = j.at("questions");
  p.questions.q1_min = q.at("q1_min").get<int>();
  p.questions.q1_max = q.at("q1_max").get<int>();
  p.questions.q2_options = q.at("q2_options").get<std::vector<std::string>>();
  p.items.clear();
  for (const auto& it : j.at("items"))
    p.items.push_back({it.at("id").get<std::string>(), it.at("domain").get<std::string>(),
                       it.at("source").get<std::string>(), it.value("fov", json::object())});
  std::sort(p.items.begin(), p.items.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  p.reviewers.clear();
  for (const auto& r : j.at("reviewers"))
    p.reviewers.push_back(
        {r.at("id").get<std::string>(), r.at("seed").get<std::uint64_t>(), r.at("order").get<std::vector<std::string>>()});
}

void save_plan(const std::filesystem::path& path, const SurveyPlan& p) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write survey plan " + path.string());
  out << json(p).dump(2) << '\n';
}

SurveyPlan load_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open survey plan " + path.string());
  try {
    return json::parse(in).get<SurveyPlan>();
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": malformed survey plan: " + e.what());
  }
}

const std::vector<std::string>& blinding_terms() {
  static const std::vector<std::string> terms{"ff", "virtual", "frozen", "paraffin", "domain", "fixed"};
  return terms;
}

std::optional<std::string> find_blinding_term(std::string_view text) {
  const std::string low = lower(text);
  for (const auto& t : blinding_terms())
    if (low.find(t) != std::string::npos) return t;
  return std::nullopt;
}

SurveyPlan build_survey(const std::map<std::string, std::vector<std::filesystem::path>>& pools,
                        const std::map<std::string, int>& counts, const std::vector<std::string>& reviewers,
                        std::uint64_t seed, QuestionSchema questions) {
  if (reviewers.empty()) throw ConfigError("build_survey: at least one reviewer is required");
  std::set<std::string> unique_reviewers;
  for (const auto& r : reviewers) {
    if (r.empty() || !std::all_of(r.begin(), r.end(), [](unsigned char c) { return std::isalnum(c) || c == '-' || c == '_'; }))
      throw ConfigError("reviewer id '" + r + "' must be non-empty [A-Za-z0-9_-]");
    if (const auto t = find_blinding_term(r)) throw ConfigError("reviewer id '" + r + "' contains '" + *t + "'");
    if (!unique_reviewers.insert(r).second) throw ConfigError("duplicate reviewer id '" + r + "'");
  }
  for (const auto& opt : questions.q2_options)
    if (const auto t = find_blinding_term(opt)) throw ConfigError("Q2 option '" + opt + "' contains '" + *t + "'");

  SurveyPlan plan;
  plan.seed = seed;
  plan.questions = std::move(questions);
  std::set<std::string> used_ids;
  Rng id_rng(derive_seed(seed, "survey-item-ids"));
  for (const auto& [domain, count] : counts) {
    if (count < 0) throw ConfigError("negative item count for " + domain);
    const auto pool_it = pools.find(domain);
    const std::size_t have = pool_it == pools.end() ? 0 : pool_it->second.size();
    if (have < static_cast<std::size_t>(count))
      throw DataError("survey pool for " + domain + " has " + std::to_string(have) + " images, " +
                      std::to_string(count) + " requested");
    if (count == 0) continue;
    std::vector<std::filesystem::path> pool = pool_it->second;
    std::sort(pool.begin(), pool.end());
    Rng rng(derive_seed(seed, "survey-sample:" + domain));
    shuffle(pool, rng);
    for (int k = 0; k < count; ++k) {
      std::string id;
      do {
        id.clear();
        for (int c = 0; c < kIdLength; ++c) id += kIdAlphabet[id_rng.below(kIdAlphabet.size())];
      } while (!used_ids.insert(id).second);
      plan.items.push_back({id, domain, pool[k].string(), json::object()});
    }
  }
  if (plan.items.empty()) throw ConfigError("build_survey: no items requested");
  std::sort(plan.items.begin(), plan.items.end(), [](const auto& a, const auto& b) { return a.id < b.id; });

  for (const auto& r : reviewers) {
    ReviewerPlan rp;
    rp.id = r;
    rp.seed = derive_seed(seed, "survey-reviewer:" + r);
    for (const auto& it : plan.items) rp.order.push_back(it.id);
    Rng rng(rp.seed);
    shuffle(rp.order, rng);
    plan.reviewers.push_back(std::move(rp));
  }
  return plan;
}

void to_json(json& j, const Response& r) {
  j = json{{"reviewer", r.reviewer}, {"image_id", r.image_id}, {"q1", r.q1}, {"q2", r.q2}, {"timestamp", r.timestamp}};
}

void from_json(const json& j, Response& r) {
  r.reviewer = j.at("reviewer").get<std::string>();
  r.image_id = j.at("image_id").get<std::string>();
  r.q1 = j.at("q1").get<int>();
  r.q2 = j.at("q2").get<std::string>();
  r.timestamp = j.value("timestamp", "");
}

ResponseStore::ResponseStore(const SurveyPlan& plan, const std::filesystem::path& dir)
    : plan_(plan), path_(dir / "responses.jsonl") {
  std::filesystem::create_directories(dir);
  auto snap = std::make_shared<Snapshot>();
  std::optional<std::streamoff> torn_at;
  {
    std::ifstream in(path_, std::ios::binary);
    std::string line;
    std::streamoff start = 0;
    while (std::getline(in, line)) {
      const bool terminated = !in.eof();
      const std::streamoff line_start = start;
      start = terminated ? static_cast<std::streamoff>(in.tellg()) : line_start + static_cast<std::streamoff>(line.size());
      if (line.empty()) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception&) {
        // Only a torn final line is tolerated; it is cut off below.
        if (in.peek() == EOF) {
          torn_at = line_start;
          break;
        }
        throw DataError(path_.string() + ": corrupt response log line");
      }
      Response r = j.at("response").get<Response>();
      if (j.value("overwrite", false)) revisions_.push_back(r);
      (*snap)[{r.reviewer, r.image_id}] = r;
    }
  }
  snapshot_ = std::move(snap);
  fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) throw DataError("cannot open response log " + path_.string());
  if (torn_at && ::ftruncate(fd_, *torn_at) != 0) throw DataError("cannot repair response log");
  const auto size = std::filesystem::file_size(path_);
  if (size > 0) {
    std::ifstream tail(path_, std::ios::binary);
    tail.seekg(static_cast<std::streamoff>(size - 1));
    if (tail.get() != '\n' && ::write(fd_, "\n", 1) != 1) throw DataError("cannot repair response log");
  }
}

ResponseStore::~ResponseStore() {
  if (fd_ >= 0) ::close(fd_);
}

void ResponseStore::append(const json& line) {
  const std::string text = line.dump() + "\n";
  std::size_t done = 0;
  while (done < text.size()) {
    const ssize_t n = ::write(fd_, text.data() + done, text.size() - done);
    if (n < 0) throw DataError("response log write failed");
    done += static_cast<std::size_t>(n);
  }
  if (::fsync(fd_) != 0) throw DataError("response log fsync failed");
}

std::pair<RecordOutcome, Response> ResponseStore::record(Response r, bool overwrite) {
  const ReviewerPlan* reviewer = plan_.find_reviewer(r.reviewer);
  if (!reviewer) throw SurveyError(404, "unknown reviewer");
  if (!plan_.find_item(r.image_id)) throw SurveyError(404, "unknown image");
  if (r.q1 < plan_.questions.q1_min || r.q1 > plan_.questions.q1_max)
    throw SurveyError(400, "q1 must be an integer from " + std::to_string(plan_.questions.q1_min) + " to " +
                               std::to_string(plan_.questions.q1_max));
  const auto& opts = plan_.questions.q2_options;
  if (std::find(opts.begin(), opts.end(), r.q2) == opts.end()) throw SurveyError(400, "q2 is not one of the listed options");

  std::lock_guard lock(write_mutex_);
  const auto current = std::atomic_load(&snapshot_);
  const Key key{r.reviewer, r.image_id};
  const auto existing = current->find(key);
  RecordOutcome outcome = RecordOutcome::Created;
  if (existing != current->end()) {
    if (existing->second.same_answer(r)) return {RecordOutcome::Duplicate, existing->second};
    if (!overwrite) throw SurveyError(409, "another answer is already stored for this image");
    outcome = RecordOutcome::Overwritten;
  }
  r.timestamp = utc_now();
  append({{"response", r}, {"overwrite", outcome == RecordOutcome::Overwritten}});
  auto next = std::make_shared<Snapshot>(*current);
  (*next)[key] = r;
  std::atomic_store(&snapshot_, std::shared_ptr<const Snapshot>(std::move(next)));
  if (outcome == RecordOutcome::Overwritten) revisions_.push_back(r);
  return {outcome, r};
}

std::shared_ptr<const ResponseStore::Snapshot> ResponseStore::snapshot() const { return std::atomic_load(&snapshot_); }

std::vector<Response> ResponseStore::revisions() const {
  std::lock_guard lock(write_mutex_);
  return revisions_;
}

Question parse_question(std::string_view s) {
  const std::string q = lower(s);
  if (q == "q1") return Question::Q1;
  if (q == "q2") return Question::Q2;
  throw ConfigError("question must be Q1 or Q2");
}

RatingExport export_ratings(const SurveyPlan& plan, const ResponseStore::Snapshot& responses, Question q,
                            bool allow_partial) {
  RatingExport e;
  e.question = q;
  for (const auto& item : plan.items) {
    for (const auto& rev : plan.reviewers) {
      const auto it = responses.find({rev.id, item.id});
      if (it == responses.end()) {
        e.missing.push_back({rev.id, item.id});
        continue;
      }
      const Response& r = it->second;
      e.ratings.push_back({item.id, rev.id, q == Question::Q2 ? r.q2 : std::to_string(r.q1)});
      e.rating_domains.push_back(item.domain);
    }
  }
  if (!e.missing.empty() && !allow_partial) {
    std::string msg = "export incomplete: " + std::to_string(e.missing.size()) + " missing (reviewer, image) pairs:";
    for (std::size_t i = 0; i < e.missing.size(); ++i) {
      if (i == 20) {
        msg += " ...";
        break;
      }
      msg += " (" + e.missing[i].reviewer + ", " + e.missing[i].image_id + ")";
    }
    throw DataError(msg);
  }
  return e;
}

std::string export_csv(const RatingExport& e) {
  std::ostringstream out;
  out << "subject_id,rater_id,category,domain\n";
  for (std::size_t i = 0; i < e.ratings.size(); ++i)
    out << e.ratings[i].subject << ',' << e.ratings[i].rater << ',' << e.ratings[i].category << ','
        << e.rating_domains[i] << '\n';
  return out.str();
}

std::map<std::string, RatingMatrix> rating_matrices(const RatingExport& e, const QuestionSchema& schema,
                                                    bool group_by_domain) {
  std::vector<std::string> categories;
  if (e.question == Question::Q2) {
    categories = schema.q2_options;
  } else {
    for (int s = schema.q1_min; s <= schema.q1_max; ++s) categories.push_back(std::to_string(s));
  }
  std::map<std::string, std::vector<Rating>> groups;
  std::map<std::string, int> per_subject;
  int max_raters = 0;
  for (const Rating& r : e.ratings) max_raters = std::max(max_raters, ++per_subject[r.subject]);
  for (std::size_t i = 0; i < e.ratings.size(); ++i) {
    if (per_subject[e.ratings[i].subject] != max_raters) continue;
    groups[group_by_domain ? e.rating_domains[i] : "all"].push_back(e.ratings[i]);
  }
  std::map<std::string, RatingMatrix> out;
  for (const auto& [g, ratings] : groups) out[g] = tally(ratings, categories);
  return out;
}

std::vector<PeiScore> pei_scores(const RatingExport& e) {
  if (e.question != Question::Q1) throw ContractError("pei_scores: export is not a Q1 export");
  std::vector<PeiScore> out;
  for (std::size_t i = 0; i < e.ratings.size(); ++i)
    out.push_back({e.ratings[i].subject + "/" + e.ratings[i].rater, e.ratings[i].rater, e.rating_domains[i],
                   std::stoi(e.ratings[i].category)});
  return out;
}

RatingMatrix benign_vs_cancer(const RatingMatrix& grades) {
  RatingMatrix m;
  m.subjects = grades.subjects;
  m.categories = {"benign", "cancer"};
  bool has_defer = false;
  for (const auto& c : grades.categories)
    if (c == "defer") has_defer = true;
  if (has_defer) m.categories.push_back("defer");
  for (const auto& row : grades.counts) {
    std::vector<int> r(m.categories.size(), 0);
    for (std::size_t j = 0; j < row.size(); ++j) {
      const std::string& c = grades.categories[j];
      if (c == "benign") r[0] += row[j];
      else if (c == "defer") r[2] += row[j];
      else r[1] += row[j];
    }
    m.counts.push_back(std::move(r));
  }
  return m;
}

}  // namespace cyclestain
