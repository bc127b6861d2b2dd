#pragma once

// HTTP study service: serves stimuli and Occam ranking tasks to participants
// and appends their responses and rankings to line-delimited stores under a
// study root:
//
//   study.json      {"seed": s, "items": [{"type": "stimulus"|"occam", "id": ...}, ...]}
//   stimuli.jsonl   Stimulus records
//   tasks.jsonl     OccamTask records
//   responses.jsonl ResponseRecord records (appended)
//   rankings.jsonl  RankingRecord records (appended, internal labels)
//
// Error bodies are {"error": message, "field": name-or-null}.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "humankernel/occam.hpp"
#include "humankernel/responses.hpp"

namespace hk {

struct HttpRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
};

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

enum class StudyItemType { Stimulus, Occam };

struct StudyItem {
  StudyItemType type = StudyItemType::Stimulus;
  std::string id;
};

struct StudyDefinition {
  std::uint64_t seed = 0;
  std::vector<StudyItem> items;  // presentation order
};

void to_json(nlohmann::json& j, const StudyDefinition& d);
void from_json(const nlohmann::json& j, StudyDefinition& d);

// Writes a fresh study root. Fails if the root already holds a study.json.
void write_study(const std::filesystem::path& root, const StudyDefinition& def, const std::vector<Stimulus>& stimuli,
                 const std::vector<OccamTask>& tasks);

// The default study: progressive sets A and B in order, the sawtooth and step
// stimuli, then `occam_tasks` ranking tasks.
void init_default_study(const std::filesystem::path& root, std::uint64_t seed, int occam_tasks);

// Presentation order for one participant and task: slot s (1-based) shows
// internal label order[s - 1]. Stable for a given (study seed, participant, task).
std::array<int, kOccamCandidates> presentation_order(std::uint64_t study_seed, const std::string& participant_id,
                                                     const std::string& task_id);
// 16 lowercase hex digits identifying the presentation order above.
std::string shuffle_token(std::uint64_t study_seed, const std::string& participant_id, const std::string& task_id);

class StudyService {
 public:
  using Clock = std::function<std::int64_t()>;  // milliseconds since the Unix epoch

  // Loads the study root, cutting any torn final line left in the append
  // stores. Throws if a record references an unknown stimulus or task.
  explicit StudyService(std::filesystem::path root, Clock clock = {});

  // Thread-safe.
  HttpResponse handle(const HttpRequest& req);

  const StudyDefinition& definition() const { return def_; }
  const std::filesystem::path& root() const { return root_; }

 private:
  struct Key {
    std::string participant;
    std::string id;
    bool operator<(const Key& o) const { return participant != o.participant ? participant < o.participant : id < o.id; }
  };

  HttpResponse next_item(const std::string& participant_id);
  HttpResponse get_stimulus(const std::string& id) const;
  HttpResponse post_response(const std::string& body);
  HttpResponse get_occam(const std::string& task_id, const HttpRequest& req) const;
  HttpResponse post_ranking(const std::string& body);
  HttpResponse export_store(const std::filesystem::path& path) const;
  nlohmann::json occam_presentation(const OccamTask& task, const std::string& participant_id) const;

  std::filesystem::path root_;
  Clock clock_;
  StudyDefinition def_;
  std::map<std::string, Stimulus> stimuli_;
  std::map<std::string, OccamTask> tasks_;

  // One writer per append store; the count maps mirror what is on disk.
  std::mutex responses_mu_;
  std::mutex rankings_mu_;
  std::map<Key, int> response_counts_;
  std::map<Key, int> ranking_counts_;
};

// Binds an HTTP server to a StudyService. All routes are forwarded to
// StudyService::handle; responses carry a permissive CORS header.
class HttpServer {
 public:
  explicit HttpServer(StudyService& service, std::optional<std::filesystem::path> static_dir = {});
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Port 0 picks a free port. Returns the bound port; throws on failure.
  int bind(const std::string& host, int port);
  // Blocks until stop() is called.
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace hk
