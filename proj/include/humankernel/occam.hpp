#pragma once

// Occam ranking tasks: a five-point dataset with seven candidate GP fits that
// differ in length-scale, and aggregation of participant rankings.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "humankernel/experiments.hpp"
#include "humankernel/gp.hpp"
#include "humankernel/report.hpp"
#include "humankernel/responses.hpp"

namespace hk {

struct OccamTaskOptions {
  double domain_lo = 0.0;
  double domain_hi = 5.0;
  int pool_points = 50;  // the dataset is subsampled from this grid
  int subsample = 5;
  int display_points = 101;
  // Label 1 optimizes the length-scale and signal variance; the noise stays
  // at the family value unless this is set.
  bool learn_noise = false;
  FitSettings fit{5, 500, 1e-8};
};

// Labels are 1-based: 1 = maximum marginal likelihood fit, 2 = generating
// hyperparameters, 3..7 = label-1 fit with log length-scale offsets.
struct OccamTask {
  std::string id;
  std::uint64_t seed = 0;
  Eigen::VectorXd x;
  Eigen::VectorXd y;
  Eigen::VectorXd display_x;
  std::vector<Eigen::VectorXd> candidate_curves;  // 7 posterior means on display_x
  std::vector<GPModel> candidate_configs;
  std::vector<double> log_ls_offsets;  // for labels 3..7
  std::vector<double> lml;             // data log marginal likelihood per label
  int refits = 0;                      // label-1 refits triggered by a better candidate

  // 1-based rank of each label by LML, highest first; ties go to the lower label.
  std::vector<int> lml_ranks() const;
  // LML strictly decreasing along the negative offsets taken in order.
  bool monotone_in_negative_offsets() const;
};

void to_json(nlohmann::json& j, const OccamTask& t);
void from_json(const nlohmann::json& j, OccamTask& t);

// `family` must be an RBF model; its hyperparameters generate the data.
// Offsets must be five strictly decreasing values with both signs present.
OccamTask build_occam_task(const GPModel& family, std::uint64_t seed, const std::vector<double>& offsets,
                           const OccamTaskOptions& opts = {}, const std::string& id = "occam");

struct RankingAggregate {
  int n = 0;
  std::array<int, kOccamCandidates> first_place_votes{};
  std::array<double, kOccamCandidates> first_place_share{};
  std::array<double, kOccamCandidates> first_place_share_se{};
  std::array<double, kOccamCandidates> mean_rank{};
  std::array<double, kOccamCandidates> rank_sd{};  // sample standard deviation (n - 1)
  std::array<double, kOccamCandidates> rank_se{};  // rank_sd / sqrt(n)
  std::array<int, kOccamCandidates> lml_rank{};
  double spearman_mean_rank_vs_lml = 0.0;
  int plausibility_answered = 0;
  int plausibility_likely = 0;
  double plausibility_likely_share = 0.0;

  Table to_table(const std::string& name) const;
};

RankingAggregate aggregate_rankings(const std::vector<RankingRecord>& rankings, const OccamTask& task);

// Pearson correlation of the average ranks (ties averaged) of a and b.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

struct OccamConfig {
  GPModel family{KernelSpec::rbf(1.0, 1.0), std::log(0.01), true};
  std::vector<double> offsets = {1.0, 0.5, -0.5, -1.0, -1.5};
  int tasks = 50;
  OccamTaskOptions task;
  std::optional<std::filesystem::path> rankings_file;
  std::optional<std::filesystem::path> tasks_file;

  void validate() const;
};

struct OccamResult {
  Report report;
  std::vector<OccamTask> tasks;
  double label1_rank1_fraction = 0.0;
  double monotone_fraction = 0.0;
  std::array<double, kOccamCandidates> mean_lml_rank{};
  std::vector<std::pair<std::string, RankingAggregate>> aggregates;
};

// Task i uses seed derive_seed(seed, i) and id "occam-<i+1>".
std::string occam_task_id(int index);
OccamResult run_occam(const OccamConfig& cfg, std::uint64_t seed);

}  // namespace hk
