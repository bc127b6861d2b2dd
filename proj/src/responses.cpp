#include "humankernel/responses.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <system_error>

#include "humankernel/errors.hpp"
#include "humankernel/format.hpp"

namespace hk {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool same_vec(const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return a.size() == b.size() && a == b; }

void check_increasing(const Eigen::VectorXd& v, const char* name) {
  if (!v.allFinite()) throw std::invalid_argument(std::string(name) + " must be finite");
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (!(v[i] > v[i - 1])) throw std::invalid_argument(std::string(name) + " must be strictly increasing");
}

Eigen::VectorXd vec_from_json(const json& j, const char* name) {
  if (!j.is_array()) throw std::invalid_argument(std::string(name) + " must be an array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw std::invalid_argument(std::string(name) + " must be an array of numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

json vec_to_json(const Eigen::VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

void throw_errno(const std::string& what, const fs::path& p) {
  throw std::system_error(errno, std::generic_category(), what + " " + p.string());
}

void write_all(int fd, const std::string& data, const fs::path& p) {
  const char* ptr = data.data();
  std::size_t left = data.size();
  while (left > 0) {
    const ssize_t n = ::write(fd, ptr, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("write failed:", p);
    }
    ptr += n;
    left -= static_cast<std::size_t>(n);
  }
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void Stimulus::validate() const {
  if (id.empty()) throw std::invalid_argument("stimulus id is empty");
  if (x_train.size() != y_train.size()) throw std::invalid_argument("X_train and y_train differ in length");
  if (x_test.size() < 1) throw std::invalid_argument("X_test is empty");
  check_increasing(x_train, "X_train");
  check_increasing(x_test, "X_test");
  if (!y_train.allFinite()) throw std::invalid_argument("y_train must be finite");
  for (double x : x_test)
    if (std::find(x_train.begin(), x_train.end(), x) != x_train.end())
      throw std::invalid_argument("X_test overlaps X_train");
}

bool Stimulus::operator==(const Stimulus& o) const {
  return id == o.id && same_vec(x_train, o.x_train) && same_vec(y_train, o.y_train) && same_vec(x_test, o.x_test) &&
         family == o.family && generator_params == o.generator_params && y_range == o.y_range;
}

void ResponseRecord::validate() const {
  if (participant_id.empty()) throw std::invalid_argument("participant_id is empty");
  if (stimulus_id.empty()) throw std::invalid_argument("stimulus_id is empty");
  if (y_star.size() < 1 || !y_star.allFinite()) throw std::invalid_argument("y_star must be nonempty and finite");
  if (!(response_time_s > 0.0) || !std::isfinite(response_time_s))
    throw std::invalid_argument("response_time_s must be positive");
}

bool ResponseRecord::operator==(const ResponseRecord& o) const {
  return participant_id == o.participant_id && stimulus_id == o.stimulus_id && same_vec(y_star, o.y_star) &&
         response_time_s == o.response_time_s && submitted_at == o.submitted_at;
}

void RankingRecord::validate() const {
  if (participant_id.empty()) throw std::invalid_argument("participant_id is empty");
  if (task_id.empty()) throw std::invalid_argument("task_id is empty");
  if (order.size() != static_cast<std::size_t>(kOccamCandidates))
    throw std::invalid_argument("order must list 7 labels");
  std::vector<int> s = order;
  std::sort(s.begin(), s.end());
  for (int i = 0; i < kOccamCandidates; ++i)
    if (s[static_cast<std::size_t>(i)] != i + 1) throw std::invalid_argument("order must be a permutation of 1..7");
}

std::string to_string(StimulusFamily f) {
  switch (f) {
    case StimulusFamily::GpSample: return "gp-sample";
    case StimulusFamily::Sawtooth: return "sawtooth";
    case StimulusFamily::Step: return "step";
  }
  return "gp-sample";
}

StimulusFamily stimulus_family_from_string(const std::string& s) {
  if (s == "gp-sample") return StimulusFamily::GpSample;
  if (s == "sawtooth") return StimulusFamily::Sawtooth;
  if (s == "step") return StimulusFamily::Step;
  throw std::invalid_argument("unknown stimulus family '" + s + "'");
}

void to_json(json& j, const Stimulus& s) {
  j = {{"id", s.id},
       {"X_train", vec_to_json(s.x_train)},
       {"y_train", vec_to_json(s.y_train)},
       {"X_test", vec_to_json(s.x_test)},
       {"family", to_string(s.family)},
       {"generator_params", s.generator_params}};
  if (s.y_range) j["y_range"] = {s.y_range->first, s.y_range->second};
}

void from_json(const json& j, Stimulus& s) {
  s.id = j.at("id").get<std::string>();
  s.x_train = vec_from_json(j.at("X_train"), "X_train");
  s.y_train = vec_from_json(j.at("y_train"), "y_train");
  s.x_test = vec_from_json(j.at("X_test"), "X_test");
  s.family = stimulus_family_from_string(j.value("family", std::string("gp-sample")));
  s.generator_params = j.value("generator_params", json::object());
  s.y_range.reset();
  if (j.contains("y_range") && !j["y_range"].is_null()) {
    const auto r = j["y_range"].get<std::vector<double>>();
    if (r.size() != 2) throw std::invalid_argument("y_range must have two entries");
    s.y_range = std::make_pair(r[0], r[1]);
  }
  s.validate();
}

void to_json(json& j, const ResponseRecord& r) {
  j = {{"participant_id", r.participant_id},
       {"stimulus_id", r.stimulus_id},
       {"y_star", vec_to_json(r.y_star)},
       {"response_time_s", r.response_time_s},
       {"submitted_at", r.submitted_at}};
}

void from_json(const json& j, ResponseRecord& r) {
  r.participant_id = j.at("participant_id").get<std::string>();
  r.stimulus_id = j.at("stimulus_id").get<std::string>();
  r.y_star = vec_from_json(j.at("y_star"), "y_star");
  r.response_time_s = j.at("response_time_s").get<double>();
  r.submitted_at = j.value("submitted_at", std::int64_t{0});
  r.validate();
}

void to_json(json& j, const RankingRecord& r) {
  j = {{"participant_id", r.participant_id},
       {"task_id", r.task_id},
       {"order", r.order},
       {"plausibility_answer", nullptr},
       {"submitted_at", r.submitted_at}};
  if (r.plausibility_answer)
    j["plausibility_answer"] = *r.plausibility_answer == Plausibility::Likely ? "likely" : "unlikely";
}

void from_json(const json& j, RankingRecord& r) {
  r.participant_id = j.at("participant_id").get<std::string>();
  r.task_id = j.at("task_id").get<std::string>();
  r.order = j.at("order").get<std::vector<int>>();
  r.plausibility_answer.reset();
  if (j.contains("plausibility_answer") && !j["plausibility_answer"].is_null()) {
    const std::string a = j["plausibility_answer"].get<std::string>();
    if (a == "likely")
      r.plausibility_answer = Plausibility::Likely;
    else if (a == "unlikely")
      r.plausibility_answer = Plausibility::Unlikely;
    else
      throw std::invalid_argument("plausibility_answer must be 'likely' or 'unlikely'");
  }
  r.submitted_at = j.value("submitted_at", std::int64_t{0});
  r.validate();
}

AlignedDraws to_drawset(const Stimulus& stimulus, const std::vector<ResponseRecord>& responses) {
  if (responses.empty()) throw std::invalid_argument("to_drawset: no responses");
  for (const auto& r : responses)
    if (r.stimulus_id != stimulus.id)
      throw std::invalid_argument("to_drawset: response from " + r.participant_id + " references stimulus " +
                                  r.stimulus_id + ", expected " + stimulus.id);

  std::vector<std::size_t> idx(responses.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const auto& ra = responses[a];
    const auto& rb = responses[b];
    if (ra.participant_id != rb.participant_id) return ra.participant_id < rb.participant_id;
    return ra.submitted_at < rb.submitted_at;
  });

  AlignedDraws out;
  std::vector<std::size_t> kept;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto& r = responses[idx[k]];
    if (k + 1 < idx.size() && responses[idx[k + 1]].participant_id == r.participant_id) {
      out.warnings.push_back("duplicate response from " + r.participant_id + " for " + stimulus.id +
                             " (submitted_at " + std::to_string(r.submitted_at) + ") superseded by a later one");
      continue;
    }
    kept.push_back(idx[k]);
  }

  out.draws.x_train = stimulus.x_train;
  out.draws.y_train = stimulus.y_train;
  out.draws.x_test = stimulus.x_test;
  out.draws.y_test.resize(stimulus.x_test.size(), static_cast<Eigen::Index>(kept.size()));
  for (std::size_t c = 0; c < kept.size(); ++c) {
    const auto& r = responses[kept[c]];
    if (r.y_star.size() != stimulus.x_test.size())
      throw std::invalid_argument("to_drawset: response from " + r.participant_id + " has " +
                                  std::to_string(r.y_star.size()) + " values, X_test has " +
                                  std::to_string(stimulus.x_test.size()));
    out.draws.y_test.col(static_cast<Eigen::Index>(c)) = r.y_star;
    out.participants.push_back(r.participant_id);
  }
  return out;
}

double total_variation(const Eigen::VectorXd& y) {
  if (y.size() < 2) return 0.0;
  return (y.tail(y.size() - 1) - y.head(y.size() - 1)).cwiseAbs().sum();
}

double value_range(const Eigen::VectorXd& y) { return y.size() == 0 ? 0.0 : y.maxCoeff() - y.minCoeff(); }

FilterResult filter_responses(const std::vector<ResponseRecord>& responses, const FilterThresholds& t) {
  if (!(t.rt_min_s > 0.0) || !(t.rt_max_s > t.rt_min_s) || !(t.variation_max > 0.0))
    throw std::invalid_argument("filter thresholds must be positive with rt_min < rt_max");
  FilterResult out;
  for (const auto& r : responses) {
    const double v = t.measure == VariationMeasure::TotalVariation ? total_variation(r.y_star) : value_range(r.y_star);
    const bool ok = r.response_time_s >= t.rt_min_s && r.response_time_s <= t.rt_max_s && v <= t.variation_max;
    (ok ? out.pass : out.fail).push_back(r);
  }
  return out;
}

std::vector<int> agglomerative_cluster(const Eigen::MatrixXd& points, int k) {
  const Eigen::Index n = points.rows();
  if (k < 1 || k > n) throw std::invalid_argument("agglomerative_cluster: need 1 <= k <= number of responses");
  if (!points.allFinite()) throw std::invalid_argument("agglomerative_cluster: points must be finite");

  // Average linkage kept as pairwise distance sums, so every cluster distance
  // is the mean over the original point pairs.
  Eigen::MatrixXd sum(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) sum(i, j) = (points.row(i) - points.row(j)).norm();
  std::vector<Eigen::Index> size(static_cast<std::size_t>(n), 1);
  std::vector<bool> alive(static_cast<std::size_t>(n), true);
  std::vector<Eigen::Index> owner(static_cast<std::size_t>(n));
  std::iota(owner.begin(), owner.end(), 0);

  // A cluster is identified by its smallest member index, which is the slot
  // that survives a merge.
  for (Eigen::Index clusters = n; clusters > k; --clusters) {
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index bi = -1, bj = -1;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!alive[static_cast<std::size_t>(i)]) continue;
      for (Eigen::Index j = i + 1; j < n; ++j) {
        if (!alive[static_cast<std::size_t>(j)]) continue;
        const double d = sum(i, j) / static_cast<double>(size[static_cast<std::size_t>(i)] * size[static_cast<std::size_t>(j)]);
        if (d < best) {
          best = d;
          bi = i;
          bj = j;
        }
      }
    }
    sum.row(bi) += sum.row(bj);
    sum.col(bi) += sum.col(bj);
    size[static_cast<std::size_t>(bi)] += size[static_cast<std::size_t>(bj)];
    alive[static_cast<std::size_t>(bj)] = false;
    for (auto& o : owner)
      if (o == bj) o = bi;
  }

  std::map<Eigen::Index, int> label;
  std::vector<int> out(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    auto it = label.find(owner[static_cast<std::size_t>(i)]);
    if (it == label.end()) it = label.emplace(owner[static_cast<std::size_t>(i)], static_cast<int>(label.size())).first;
    out[static_cast<std::size_t>(i)] = it->second;
  }
  return out;
}

std::vector<int> agglomerative_cluster(const std::vector<ResponseRecord>& responses, int k) {
  if (responses.empty()) throw std::invalid_argument("agglomerative_cluster: no responses");
  const Eigen::Index d = responses.front().y_star.size();
  Eigen::MatrixXd pts(static_cast<Eigen::Index>(responses.size()), d);
  for (std::size_t i = 0; i < responses.size(); ++i) {
    if (responses[i].y_star.size() != d)
      throw std::invalid_argument("agglomerative_cluster: response from " + responses[i].participant_id +
                                  " has a different length");
    pts.row(static_cast<Eigen::Index>(i)) = responses[i].y_star.transpose();
  }
  return agglomerative_cluster(pts, k);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw_errno("cannot create", tmp);
  try {
    write_all(fd, content, tmp);
    if (::fsync(fd) != 0) throw_errno("fsync failed:", tmp);
  } catch (...) {
    ::close(fd);
    fs::remove(tmp);
    throw;
  }
  ::close(fd);
  fs::rename(tmp, path);
}

std::vector<JsonLine> load_json_lines(const fs::path& path) {
  std::vector<JsonLine> out;
  if (!fs::exists(path)) return out;
  const std::string text = read_file(path);
  std::size_t pos = 0, line = 0;
  while (pos < text.size()) {
    ++line;
    const std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) break;  // torn append
    const std::string_view body(text.data() + pos, nl - pos);
    pos = nl + 1;
    if (body.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      out.push_back({line, json::parse(body)});
    } catch (const std::exception& e) {
      throw ParseError(line, std::string("malformed record in ") + path.string() + ": " + e.what());
    }
  }
  return out;
}

void save_json_lines(const fs::path& path, const std::vector<json>& values) {
  std::string text;
  for (const auto& v : values) {
    text += v.dump();
    text += '\n';
  }
  write_file_atomic(path, text);
}

namespace {

// Truncates everything after the last newline. Returns true if bytes were cut.
bool cut_torn_tail(int fd, const fs::path& path) {
  const off_t end = ::lseek(fd, 0, SEEK_END);
  if (end <= 0) return false;
  char last = '\n';
  if (::pread(fd, &last, 1, end - 1) != 1) throw_errno("read failed:", path);
  if (last == '\n') return false;
  off_t cut = end;
  char c = 0;
  while (cut > 0 && ::pread(fd, &c, 1, cut - 1) == 1 && c != '\n') --cut;
  if (::ftruncate(fd, cut) != 0) throw_errno("truncate failed:", path);
  return true;
}

}  // namespace

bool repair_torn_tail(const fs::path& path) {
  if (!fs::exists(path)) return false;
  const int fd = ::open(path.c_str(), O_RDWR | O_CLOEXEC);
  if (fd < 0) throw_errno("cannot open", path);
  bool cut = false;
  try {
    cut = cut_torn_tail(fd, path);
    if (cut && ::fsync(fd) != 0) throw_errno("fsync failed:", path);
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
  return cut;
}

void append_json_line(const fs::path& path, const json& value) {
  const std::string line = value.dump() + "\n";
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const int fd = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd < 0) throw_errno("cannot open", path);
  try {
    // the new record must start on its own line
    cut_torn_tail(fd, path);
    ::lseek(fd, 0, SEEK_END);
    write_all(fd, line, path);
    if (::fsync(fd) != 0) throw_errno("fsync failed:", path);
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
}

std::vector<ResponseRecord> load_responses(const fs::path& path) { return load_records<ResponseRecord>(path); }
void save_responses(const fs::path& path, const std::vector<ResponseRecord>& records) { save_records(path, records); }
std::vector<Stimulus> load_stimuli(const fs::path& path) { return load_records<Stimulus>(path); }
void save_stimuli(const fs::path& path, const std::vector<Stimulus>& records) { save_records(path, records); }
std::vector<RankingRecord> load_rankings(const fs::path& path) { return load_records<RankingRecord>(path); }
void save_rankings(const fs::path& path, const std::vector<RankingRecord>& records) { save_records(path, records); }

std::string responses_csv(const std::vector<Stimulus>& stimuli, const std::vector<ResponseRecord>& responses) {
  std::map<std::string, const Stimulus*> by_id;
  for (const auto& s : stimuli) by_id[s.id] = &s;
  std::string out = "participant_id,stimulus_id,x,y,response_time_s\n";
  for (const auto& r : responses) {
    const auto it = by_id.find(r.stimulus_id);
    if (it == by_id.end()) throw std::invalid_argument("response references unknown stimulus " + r.stimulus_id);
    const Stimulus& s = *it->second;
    if (r.y_star.size() != s.x_test.size())
      throw std::invalid_argument("response from " + r.participant_id + " does not match the X_test length");
    const std::string pid = csv_field(r.participant_id), sid = csv_field(r.stimulus_id);
    const std::string rt = format_double(r.response_time_s);
    for (Eigen::Index i = 0; i < s.x_test.size(); ++i)
      out += pid + "," + sid + "," + format_double(s.x_test[i]) + "," + format_double(r.y_star[i]) + "," + rt + "\n";
  }
  return out;
}

}  // namespace hk
