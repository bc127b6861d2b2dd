#pragma once

// Extrapolation responses: records, line-delimited JSON stores, alignment to
// DrawSets, response filtering and clustering.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "humankernel/errors.hpp"
#include "humankernel/gp.hpp"

namespace hk {

enum class StimulusFamily { GpSample, Sawtooth, Step };

struct Stimulus {
  std::string id;
  Eigen::VectorXd x_train;
  Eigen::VectorXd y_train;
  Eigen::VectorXd x_test;
  StimulusFamily family = StimulusFamily::GpSample;
  nlohmann::json generator_params = nlohmann::json::object();
  // Fixed y-axis range for presentation; derived from the data when absent.
  std::optional<std::pair<double, double>> y_range;

  // Throws std::invalid_argument when grids are unsorted, repeated or overlap.
  void validate() const;
  bool operator==(const Stimulus& o) const;
};

struct ResponseRecord {
  std::string participant_id;
  std::string stimulus_id;
  Eigen::VectorXd y_star;
  double response_time_s = 0.0;
  std::int64_t submitted_at = 0;  // milliseconds since the Unix epoch

  void validate() const;
  bool operator==(const ResponseRecord& o) const;
};

enum class Plausibility { Likely, Unlikely };

struct RankingRecord {
  std::string participant_id;
  std::string task_id;
  std::vector<int> order;  // order[0] is the label ranked best, labels 1..7
  std::optional<Plausibility> plausibility_answer;
  std::int64_t submitted_at = 0;

  void validate() const;
  bool operator==(const RankingRecord&) const = default;
};

inline constexpr int kOccamCandidates = 7;

void to_json(nlohmann::json& j, const Stimulus& s);
void from_json(const nlohmann::json& j, Stimulus& s);
void to_json(nlohmann::json& j, const ResponseRecord& r);
void from_json(const nlohmann::json& j, ResponseRecord& r);
void to_json(nlohmann::json& j, const RankingRecord& r);
void from_json(const nlohmann::json& j, RankingRecord& r);

std::string to_string(StimulusFamily f);
StimulusFamily stimulus_family_from_string(const std::string& s);

struct AlignedDraws {
  DrawSet draws;
  std::vector<std::string> participants;  // column order of draws.y_test
  std::vector<std::string> warnings;
};

// Stacks responses into a DrawSet, one column per participant in ascending
// (participant_id, submitted_at) order. Duplicate submissions by the same
// participant keep the latest and are reported as warnings.
AlignedDraws to_drawset(const Stimulus& stimulus, const std::vector<ResponseRecord>& responses);

// Sum of absolute successive differences.
double total_variation(const Eigen::VectorXd& y);
// max - min
double value_range(const Eigen::VectorXd& y);

enum class VariationMeasure { TotalVariation, Range };

struct FilterThresholds {
  double rt_min_s = 50.0;
  double rt_max_s = 200.0;
  double variation_max = 3.0;
  VariationMeasure measure = VariationMeasure::TotalVariation;
};

struct FilterResult {
  std::vector<ResponseRecord> pass;
  std::vector<ResponseRecord> fail;
};

// Pass iff rt_min <= rt <= rt_max and the variation is at most variation_max.
FilterResult filter_responses(const std::vector<ResponseRecord>& responses, const FilterThresholds& t = {});

// Average-linkage agglomerative clustering on the Euclidean distance between
// rows of `points` (one response per row). Returns a label per row; labels
// are numbered by the smallest row index in each cluster.
std::vector<int> agglomerative_cluster(const Eigen::MatrixXd& points, int k);
std::vector<int> agglomerative_cluster(const std::vector<ResponseRecord>& responses, int k);

// Line-delimited JSON stores. Saving writes a temporary file and renames it
// over the target. Loading throws ParseError citing the first malformed line;
// a final line without a terminating newline is treated as a torn append and
// skipped.
struct JsonLine {
  std::size_t line = 0;  // 1-based
  nlohmann::json value;
};
std::vector<JsonLine> load_json_lines(const std::filesystem::path& path);
void save_json_lines(const std::filesystem::path& path, const std::vector<nlohmann::json>& values);
// Appends one line and flushes it to disk before returning.
void append_json_line(const std::filesystem::path& path, const nlohmann::json& value);
// Cuts a torn final line left by an interrupted append. Returns true if the
// file was changed.
bool repair_torn_tail(const std::filesystem::path& path);

template <class T>
std::vector<T> load_records(const std::filesystem::path& path) {
  std::vector<T> out;
  for (auto& l : load_json_lines(path)) {
    try {
      out.push_back(l.value.get<T>());
    } catch (const std::exception& e) {
      throw ParseError(l.line, "malformed record in " + path.string() + ": " + e.what());
    }
  }
  return out;
}
template <class T>
void save_records(const std::filesystem::path& path, const std::vector<T>& records) {
  std::vector<nlohmann::json> v;
  v.reserve(records.size());
  for (const auto& r : records) v.emplace_back(r);
  save_json_lines(path, v);
}
template <class T>
void append_record(const std::filesystem::path& path, const T& record) {
  append_json_line(path, nlohmann::json(record));
}

std::vector<ResponseRecord> load_responses(const std::filesystem::path& path);
void save_responses(const std::filesystem::path& path, const std::vector<ResponseRecord>& records);
std::vector<Stimulus> load_stimuli(const std::filesystem::path& path);
void save_stimuli(const std::filesystem::path& path, const std::vector<Stimulus>& records);
std::vector<RankingRecord> load_rankings(const std::filesystem::path& path);
void save_rankings(const std::filesystem::path& path, const std::vector<RankingRecord>& records);

// Writes `content` to path via a sibling temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

// CSV with columns participant_id,stimulus_id,x,y,response_time_s; one row
// per grid point. Responses whose stimulus is unknown raise.
std::string responses_csv(const std::vector<Stimulus>& stimuli, const std::vector<ResponseRecord>& responses);

}  // namespace hk
