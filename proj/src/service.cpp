#include "humankernel/service.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>
#include <stdexcept>

#include <httplib.h>

#include "humankernel/experiments.hpp"
#include "humankernel/rng.hpp"

namespace hk {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kStudyFile = "study.json";
constexpr const char* kStimuliFile = "stimuli.jsonl";
constexpr const char* kTasksFile = "tasks.jsonl";
constexpr const char* kResponsesFile = "responses.jsonl";
constexpr const char* kRankingsFile = "rankings.jsonl";

// Client-visible failure with an HTTP status and the offending field.
struct RequestError {
  int status;
  std::string message;
  std::string field;
};

HttpResponse json_response(int status, const json& body) { return {status, "application/json", body.dump()}; }

HttpResponse error_response(int status, const std::string& message, const std::string& field = {}) {
  return json_response(status, {{"error", message}, {"field", field.empty() ? json(nullptr) : json(field)}});
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::size_t pos = 0;
  while (pos <= path.size()) {
    const std::size_t slash = path.find('/', pos);
    const std::size_t end = slash == std::string::npos ? path.size() : slash;
    if (end > pos) parts.push_back(path.substr(pos, end - pos));
    if (slash == std::string::npos) break;
    pos = slash + 1;
  }
  return parts;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t shuffle_key(std::uint64_t study_seed, const std::string& participant_id, const std::string& task_id) {
  // the NUL keeps ("ab", "c") and ("a", "bc") apart
  return derive_seed(study_seed, fnv1a(participant_id + '\0' + task_id));
}

json parse_body(const std::string& body) {
  try {
    json j = json::parse(body);
    if (!j.is_object()) throw RequestError{400, "request body must be a JSON object", "body"};
    return j;
  } catch (const json::exception& e) {
    throw RequestError{400, std::string("malformed JSON: ") + e.what(), "body"};
  }
}

std::string require_string(const json& j, const char* field) {
  if (!j.contains(field) || !j.at(field).is_string() || j.at(field).get<std::string>().empty())
    throw RequestError{400, std::string(field) + " must be a non-empty string", field};
  return j.at(field).get<std::string>();
}

std::int64_t system_clock_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

// Complete lines only: anything after the last newline is an append in flight.
std::string completed_records(const fs::path& path) {
  if (!fs::exists(path)) return {};
  std::string text = read_file(path);
  const std::size_t nl = text.rfind('\n');
  text.resize(nl == std::string::npos ? 0 : nl + 1);
  return text;
}

}  // namespace

void to_json(json& j, const StudyDefinition& d) {
  json items = json::array();
  for (const auto& it : d.items)
    items.push_back({{"type", it.type == StudyItemType::Stimulus ? "stimulus" : "occam"}, {"id", it.id}});
  j = {{"seed", d.seed}, {"items", std::move(items)}};
}

void from_json(const json& j, StudyDefinition& d) {
  d.seed = j.at("seed").get<std::uint64_t>();
  d.items.clear();
  for (const auto& it : j.at("items")) {
    const std::string type = it.at("type").get<std::string>();
    StudyItem item;
    if (type == "stimulus")
      item.type = StudyItemType::Stimulus;
    else if (type == "occam")
      item.type = StudyItemType::Occam;
    else
      throw std::invalid_argument("study item type must be 'stimulus' or 'occam', got '" + type + "'");
    item.id = it.at("id").get<std::string>();
    if (item.id.empty()) throw std::invalid_argument("study item id is empty");
    d.items.push_back(std::move(item));
  }
}

void write_study(const fs::path& root, const StudyDefinition& def, const std::vector<Stimulus>& stimuli,
                 const std::vector<OccamTask>& tasks) {
  if (fs::exists(root / kStudyFile)) throw std::invalid_argument("a study already exists in " + root.string());
  std::set<std::string> stim_ids, task_ids;
  for (const auto& s : stimuli) {
    s.validate();
    if (!stim_ids.insert(s.id).second) throw std::invalid_argument("duplicate stimulus id " + s.id);
  }
  for (const auto& t : tasks)
    if (!task_ids.insert(t.id).second) throw std::invalid_argument("duplicate occam task id " + t.id);
  for (const auto& it : def.items) {
    const auto& ids = it.type == StudyItemType::Stimulus ? stim_ids : task_ids;
    if (!ids.count(it.id)) throw std::invalid_argument("study item references unknown id " + it.id);
  }
  fs::create_directories(root);
  save_records(root / kStimuliFile, stimuli);
  save_records(root / kTasksFile, tasks);
  write_file_atomic(root / kResponsesFile, "");
  write_file_atomic(root / kRankingsFile, "");
  write_file_atomic(root / kStudyFile, json(def).dump(2) + "\n");
}

void init_default_study(const fs::path& root, std::uint64_t seed, int occam_tasks) {
  if (occam_tasks < 0) throw std::invalid_argument("occam task count must be >= 0");
  StudyDefinition def;
  def.seed = seed;
  std::vector<Stimulus> stimuli;
  const ProgressiveConfig prog;
  for (const auto* set : {&prog.set_a, &prog.set_b})
    for (auto& s : make_progressive_stimuli(*set, derive_seed(seed, set == &prog.set_a ? 1 : 2))) {
      def.items.push_back({StudyItemType::Stimulus, s.id});
      stimuli.push_back(std::move(s));
    }
  const UnconventionalConfig unc;
  stimuli.push_back(make_sawtooth("sawtooth", unc.period, unc.amplitude, unc.grid));
  stimuli.push_back(make_step("step", unc.breakpoints, unc.levels, unc.grid));
  def.items.push_back({StudyItemType::Stimulus, "sawtooth"});
  def.items.push_back({StudyItemType::Stimulus, "step"});

  const OccamConfig occ;
  std::vector<OccamTask> tasks;
  for (int i = 0; i < occam_tasks; ++i) {
    tasks.push_back(build_occam_task(occ.family, derive_seed(derive_seed(seed, 3), static_cast<std::uint64_t>(i)),
                                     occ.offsets, occ.task, occam_task_id(i)));
    def.items.push_back({StudyItemType::Occam, tasks.back().id});
  }
  write_study(root, def, stimuli, tasks);
}

std::array<int, kOccamCandidates> presentation_order(std::uint64_t study_seed, const std::string& participant_id,
                                                     const std::string& task_id) {
  std::array<int, kOccamCandidates> order{};
  for (int i = 0; i < kOccamCandidates; ++i) order[static_cast<std::size_t>(i)] = i + 1;
  // Fisher-Yates over a SplitMix64 stream; spelled out so the order does not
  // depend on the standard library's distribution implementations.
  std::uint64_t state = shuffle_key(study_seed, participant_id, task_id);
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    state = mix64(state);
    const std::size_t j = static_cast<std::size_t>(state % (i + 1));
    std::swap(order[i], order[j]);
  }
  return order;
}

std::string shuffle_token(std::uint64_t study_seed, const std::string& participant_id, const std::string& task_id) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(mix64(shuffle_key(study_seed, participant_id, task_id) ^ 0x746f6b656eULL)));
  return buf;
}

StudyService::StudyService(fs::path root, Clock clock) : root_(std::move(root)), clock_(std::move(clock)) {
  if (!clock_) clock_ = system_clock_ms;
  try {
    def_ = json::parse(read_file(root_ / kStudyFile)).get<StudyDefinition>();
  } catch (const json::exception& e) {
    throw std::invalid_argument("cannot read " + (root_ / kStudyFile).string() + ": " + e.what());
  }
  for (auto& s : load_records<Stimulus>(root_ / kStimuliFile)) {
    const std::string id = s.id;
    if (!stimuli_.emplace(id, std::move(s)).second) throw std::invalid_argument("duplicate stimulus id " + id);
  }
  for (auto& t : load_records<OccamTask>(root_ / kTasksFile)) {
    const std::string id = t.id;
    if (!tasks_.emplace(id, std::move(t)).second) throw std::invalid_argument("duplicate occam task id " + id);
  }
  for (const auto& it : def_.items) {
    const bool known = it.type == StudyItemType::Stimulus ? stimuli_.count(it.id) > 0 : tasks_.count(it.id) > 0;
    if (!known) throw std::invalid_argument("study item references unknown id " + it.id);
  }
  repair_torn_tail(root_ / kResponsesFile);
  repair_torn_tail(root_ / kRankingsFile);
  for (const auto& r : load_records<ResponseRecord>(root_ / kResponsesFile)) {
    if (!stimuli_.count(r.stimulus_id))
      throw std::invalid_argument("stored response references unknown stimulus " + r.stimulus_id);
    ++response_counts_[{r.participant_id, r.stimulus_id}];
  }
  for (const auto& r : load_records<RankingRecord>(root_ / kRankingsFile)) {
    if (!tasks_.count(r.task_id)) throw std::invalid_argument("stored ranking references unknown task " + r.task_id);
    ++ranking_counts_[{r.participant_id, r.task_id}];
  }
}

HttpResponse StudyService::handle(const HttpRequest& req) {
  const std::vector<std::string> p = split_path(req.path);
  const bool get = req.method == "GET", post = req.method == "POST";
  auto route = [&](bool method_ok, auto&& fn) -> HttpResponse {
    if (!method_ok) return error_response(405, "method " + req.method + " not allowed on " + req.path);
    return fn();
  };
  try {
    if (p.empty() || p[0] != "api") return error_response(404, "no route for " + req.path);
    if (p.size() == 2 && p[1] == "health") return route(get, [&] { return json_response(200, {{"status", "ok"}}); });
    if (p.size() == 4 && p[1] == "study" && p[3] == "next") return route(get, [&] { return next_item(p[2]); });
    if (p.size() == 3 && p[1] == "stimuli") return route(get, [&] { return get_stimulus(p[2]); });
    if (p.size() == 2 && p[1] == "responses") return route(post, [&] { return post_response(req.body); });
    if (p.size() == 3 && p[1] == "occam") return route(get, [&] { return get_occam(p[2], req); });
    if (p.size() == 2 && p[1] == "rankings") return route(post, [&] { return post_ranking(req.body); });
    if (p.size() == 3 && p[1] == "export") {
      if (p[2] == "responses") return route(get, [&] { return export_store(root_ / kResponsesFile); });
      if (p[2] == "rankings") return route(get, [&] { return export_store(root_ / kRankingsFile); });
      return error_response(404, "unknown export " + p[2]);
    }
    return error_response(404, "no route for " + req.path);
  } catch (const RequestError& e) {
    return error_response(e.status, e.message, e.field);
  } catch (const std::exception& e) {
    return error_response(500, std::string("storage error: ") + e.what());
  }
}

HttpResponse StudyService::next_item(const std::string& participant_id) {
  // An item listed k times counts as answered once k records exist for it.
  std::map<std::string, int> seen;
  for (std::size_t i = 0; i < def_.items.size(); ++i) {
    const StudyItem& it = def_.items[i];
    const int occurrence = ++seen[(it.type == StudyItemType::Stimulus ? "s:" : "o:") + it.id];
    int answered = 0;
    if (it.type == StudyItemType::Stimulus) {
      std::lock_guard<std::mutex> lock(responses_mu_);
      const auto c = response_counts_.find({participant_id, it.id});
      answered = c == response_counts_.end() ? 0 : c->second;
    } else {
      std::lock_guard<std::mutex> lock(rankings_mu_);
      const auto c = ranking_counts_.find({participant_id, it.id});
      answered = c == ranking_counts_.end() ? 0 : c->second;
    }
    if (answered >= occurrence) continue;
    json out = {{"done", false}, {"index", i}, {"total", def_.items.size()}, {"id", it.id}};
    if (it.type == StudyItemType::Stimulus) {
      out["type"] = "stimulus";
      out["stimulus"] = stimuli_.at(it.id);
    } else {
      out["type"] = "occam";
      out["occam"] = occam_presentation(tasks_.at(it.id), participant_id);
    }
    return json_response(200, out);
  }
  return json_response(200, {{"done", true}, {"total", def_.items.size()}});
}

HttpResponse StudyService::get_stimulus(const std::string& id) const {
  const auto it = stimuli_.find(id);
  if (it == stimuli_.end()) throw RequestError{404, "unknown stimulus " + id, "id"};
  return json_response(200, it->second);
}

HttpResponse StudyService::post_response(const std::string& body) {
  const json j = parse_body(body);
  ResponseRecord r;
  r.participant_id = require_string(j, "participant_id");
  r.stimulus_id = require_string(j, "stimulus_id");
  const auto sit = stimuli_.find(r.stimulus_id);
  if (sit == stimuli_.end()) throw RequestError{404, "unknown stimulus " + r.stimulus_id, "stimulus_id"};
  const Eigen::Index m = sit->second.x_test.size();
  if (!j.contains("y_star") || !j.at("y_star").is_array())
    throw RequestError{400, "y_star must be an array of numbers", "y_star"};
  const json& ys = j.at("y_star");
  if (static_cast<Eigen::Index>(ys.size()) != m)
    throw RequestError{400, "y_star has " + std::to_string(ys.size()) + " values, expected " + std::to_string(m), "y_star"};
  r.y_star.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const json& v = ys[static_cast<std::size_t>(i)];
    if (!v.is_number() || !std::isfinite(v.get<double>()))
      throw RequestError{400, "y_star[" + std::to_string(i) + "] is not a finite number", "y_star"};
    r.y_star[i] = v.get<double>();
  }
  if (!j.contains("response_time_s") || !j.at("response_time_s").is_number() ||
      !std::isfinite(j.at("response_time_s").get<double>()) || j.at("response_time_s").get<double>() < 0.0)
    throw RequestError{400, "response_time_s must be a finite non-negative number", "response_time_s"};
  r.response_time_s = j.at("response_time_s").get<double>();
  r.submitted_at = clock_();

  std::lock_guard<std::mutex> lock(responses_mu_);
  append_record(root_ / kResponsesFile, r);
  ++response_counts_[{r.participant_id, r.stimulus_id}];
  return json_response(201, r);
}

json StudyService::occam_presentation(const OccamTask& task, const std::string& participant_id) const {
  const auto order = presentation_order(def_.seed, participant_id, task.id);
  json curves = json::array();
  for (std::size_t s = 0; s < order.size(); ++s) {
    const Eigen::VectorXd& c = task.candidate_curves[static_cast<std::size_t>(order[s] - 1)];
    curves.push_back({{"slot", s + 1}, {"y", std::vector<double>(c.data(), c.data() + c.size())}});
  }
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return {{"task_id", task.id},
          {"participant_id", participant_id},
          {"x", vec(task.x)},
          {"y", vec(task.y)},
          {"display_x", vec(task.display_x)},
          {"curves", std::move(curves)},
          {"shuffle_token", shuffle_token(def_.seed, participant_id, task.id)}};
}

HttpResponse StudyService::get_occam(const std::string& task_id, const HttpRequest& req) const {
  const auto it = tasks_.find(task_id);
  if (it == tasks_.end()) throw RequestError{404, "unknown occam task " + task_id, "task_id"};
  const auto pid = req.query.find("participant_id");
  if (pid == req.query.end() || pid->second.empty())
    throw RequestError{400, "participant_id query parameter is required", "participant_id"};
  return json_response(200, occam_presentation(it->second, pid->second));
}

HttpResponse StudyService::post_ranking(const std::string& body) {
  const json j = parse_body(body);
  RankingRecord r;
  r.participant_id = require_string(j, "participant_id");
  r.task_id = require_string(j, "task_id");
  if (!tasks_.count(r.task_id)) throw RequestError{404, "unknown occam task " + r.task_id, "task_id"};
  const std::string token = require_string(j, "shuffle_token");
  if (token != shuffle_token(def_.seed, r.participant_id, r.task_id))
    throw RequestError{409, "shuffle_token does not match this participant and task", "shuffle_token"};

  if (!j.contains("order") || !j.at("order").is_array() || j.at("order").size() != kOccamCandidates)
    throw RequestError{400, "order must list the 7 presented slots", "order"};
  std::vector<int> slots;
  for (const auto& v : j.at("order")) {
    if (!v.is_number_integer()) throw RequestError{400, "order entries must be integers", "order"};
    slots.push_back(v.get<int>());
  }
  std::set<int> distinct(slots.begin(), slots.end());
  if (distinct.size() != kOccamCandidates || *distinct.begin() != 1 || *distinct.rbegin() != kOccamCandidates)
    throw RequestError{400, "order must be a permutation of 1..7", "order"};

  if (j.contains("plausibility_answer") && !j.at("plausibility_answer").is_null()) {
    const json& a = j.at("plausibility_answer");
    const std::string s = a.is_string() ? a.get<std::string>() : std::string();
    if (s == "likely")
      r.plausibility_answer = Plausibility::Likely;
    else if (s == "unlikely")
      r.plausibility_answer = Plausibility::Unlikely;
    else
      throw RequestError{400, "plausibility_answer must be \"likely\", \"unlikely\" or null", "plausibility_answer"};
  }

  const auto presented = presentation_order(def_.seed, r.participant_id, r.task_id);
  for (int s : slots) r.order.push_back(presented[static_cast<std::size_t>(s - 1)]);
  r.submitted_at = clock_();

  std::lock_guard<std::mutex> lock(rankings_mu_);
  append_record(root_ / kRankingsFile, r);
  ++ranking_counts_[{r.participant_id, r.task_id}];
  // the internal labels stay server-side
  return json_response(201, {{"participant_id", r.participant_id}, {"task_id", r.task_id}, {"submitted_at", r.submitted_at}});
}

HttpResponse StudyService::export_store(const fs::path& path) const {
  return {200, "application/x-ndjson", completed_records(path)};
}

struct HttpServer::Impl {
  StudyService& service;
  httplib::Server server;

  explicit Impl(StudyService& s) : service(s) {}

  void forward(const httplib::Request& req, httplib::Response& res) {
    HttpRequest r{req.method, req.path, {}, req.body};
    for (const auto& [k, v] : req.params) r.query.emplace(k, v);
    const HttpResponse out = service.handle(r);
    res.status = out.status;
    res.set_content(out.body, out.content_type);
  }
};

HttpServer::HttpServer(StudyService& service, std::optional<fs::path> static_dir)
    : impl_(std::make_unique<Impl>(service)) {
  auto& srv = impl_->server;
  if (static_dir && !srv.set_mount_point("/", static_dir->string()))
    throw std::invalid_argument("cannot serve static files from " + static_dir->string());
  auto fwd = [this](const httplib::Request& req, httplib::Response& res) { impl_->forward(req, res); };
  srv.Get("/api/.*", fwd);
  srv.Post("/api/.*", fwd);
  srv.Put("/api/.*", fwd);
  srv.Delete("/api/.*", fwd);
  srv.Patch("/api/.*", fwd);
  srv.Options(".*", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  srv.set_post_routing_handler([](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  auto& srv = impl_->server;
  if (port == 0) {
    const int p = srv.bind_to_any_port(host);
    if (p <= 0) throw std::runtime_error("cannot bind to " + host);
    return p;
  }
  if (!srv.bind_to_port(host, port)) throw std::runtime_error("cannot bind to " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace hk
