#pragma once

// Simulation experiments built on the GP core: kernel reconstruction from
// posterior draws, progressive stimulus sequences, unconventional (sawtooth
// and step) stimuli with clustered responders, and the length-scale bias
// study. The Occam ranking harness lives in occam.hpp.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "humankernel/empirical.hpp"
#include "humankernel/gp.hpp"
#include "humankernel/kernels.hpp"
#include "humankernel/learn.hpp"
#include "humankernel/report.hpp"
#include "humankernel/responses.hpp"

namespace hk {

// Training inputs: n_train evenly spaced points on [lo, hi]. Test inputs:
// n_test evenly spaced points on (hi, test_hi].
struct StimulusGrid {
  double lo = 0.0;
  double hi = 10.0;
  int n_train = 21;
  double test_hi = 15.0;
  int n_test = 30;

  void validate() const;
  Eigen::VectorXd train_inputs() const;
  Eigen::VectorXd test_inputs() const;
};

// f(x) = amplitude * frac(x / period)
double sawtooth_value(double x, double period, double amplitude);
Stimulus make_sawtooth(const std::string& id, double period, double amplitude, const StimulusGrid& grid);
// Right-continuous piecewise constant: levels[i] on [breakpoints[i-1], breakpoints[i]).
double step_value(double x, const std::vector<double>& breakpoints, const std::vector<double>& levels);
Stimulus make_step(const std::string& id, const std::vector<double>& breakpoints, const std::vector<double>& levels,
                   const StimulusGrid& grid);

// ||a - b||_2 / ||b||_2
double normalized_l2(const Eigen::VectorXd& a, const Eigen::VectorXd& b);
// k(x0, x0 + tau) for each tau; equals kernel_curve for stationary kernels.
Eigen::VectorXd kernel_slice(const KernelSpec& spec, double x0, const Eigen::VectorXd& taus);
// Local maxima of the spectral density of an SM kernel on [0, f_max].
std::vector<double> spectral_modes(const KernelSpec& spec, double f_max, int points = 4001);

struct FitSettings {
  int restarts = 10;
  int max_iters = 500;
  double grad_tol = 1e-6;

  FitOptions options(std::uint64_t seed, Objective objective) const;
};

// ---------------------------------------------------------------- reconstruct

struct ReconstructionConfig {
  KernelSpec data_kernel = KernelSpec::rbf(1.0, 1.0);
  double data_noise_var = 0.01;
  KernelSpec prediction_kernel = KernelSpec::spectral_mixture({{0.6, 0.1, 0.0004}, {0.4, 0.6, 0.0004}});
  double prediction_noise_var = 0.01;
  int n_train = 20;
  double train_lo = 0.0;
  double train_hi = 10.0;
  int n_test = 40;
  double test_hi = 20.0;
  std::vector<int> draws = {1, 10, 20};
  int learner_components = 5;
  int trials = 10;
  double tau_max = 10.0;
  int tau_points = 201;
  FitSettings fit;

  void validate() const;
};

struct ReconstructionResult {
  Report report;
  std::vector<int> draws;
  Eigen::MatrixXd errors;  // trials x draws
  std::vector<double> median_errors;
  std::vector<KernelSpec> learned;  // trial 0, one per W
};

ReconstructionResult run_reconstruction(const ReconstructionConfig& cfg, std::uint64_t seed);

// ---------------------------------------------------------------- progressive

struct StimulusSetConfig {
  std::string name;
  KernelSpec truth;
  double noise_var = 0.01;
  int stimuli = 6;  // the last repeats the first
  int responders = 20;
  StimulusGrid grid;
};

struct ProgressiveConfig {
  StimulusSetConfig set_a{"A", KernelSpec::rq(1.5, 1.0, 0.5), 0.01, 6, 20, {0.0, 10.0, 21, 20.0, 40}};
  StimulusSetConfig set_b{"B",
                          KernelSpec::product(KernelSpec::spectral_mixture({{1.0, 0.25, 0.001}}),
                                              KernelSpec::linear(0.05, -5.0)),
                          0.01, 6, 10, {}};
  // Responders draw from the truth with log hyperparameters offset by
  // N(0, jitter_std^2), shrinking by `adaptation` per stimulus shown.
  double jitter_std = 0.3;
  double adaptation = 0.7;
  double responder_noise_var = 0.001;
  int learner_components = 3;
  double tau_max = 5.0;
  int tau_points = 101;
  FitSettings fit{5, 300, 1e-6};

  void validate() const;
};

struct ProgressiveResult {
  Report report;
  // normalized L2 distance of the learned kernel to the truth, per stimulus
  std::vector<double> learned_error_a;
  std::vector<double> learned_error_b;
  double covariance_correlation_b = 0.0;  // upper triangles, empirical vs true
};

ProgressiveResult run_progressive(const ProgressiveConfig& cfg, std::uint64_t seed);

// The stimulus sequence of one set: GP samples from the truth on the set's
// grid, ids <name>1..<name>k, the last repeating the data of the first.
std::vector<Stimulus> make_progressive_stimuli(const StimulusSetConfig& set, std::uint64_t seed);

// Copy of `spec` whose hyperparameters are shifted in log space by N(0, sd^2);
// Linear offsets are shifted by N(0, sd^2) on their own scale.
KernelSpec jitter_kernel(const KernelSpec& spec, double sd, std::uint64_t seed);

// ------------------------------------------------------------ unconventional

enum class UnconventionalStimulus { Sawtooth, Step };

struct UnconventionalConfig {
  UnconventionalStimulus stimulus = UnconventionalStimulus::Sawtooth;
  StimulusGrid grid{0.0, 10.0, 41, 17.5, 30};
  double period = 2.5;
  double amplitude = 1.0;
  std::vector<double> breakpoints = {5.0};
  std::vector<double> levels = {0.0, 1.0};

  // Sawtooth pool: posterior draws from the responder kernel plus two
  // distractor groups with distinct mean shapes.
  int responders = 40;
  int flat_responders = 10;
  int zigzag_responders = 10;
  KernelSpec responder_kernel = KernelSpec::spectral_mixture({{0.25, 0.4, 1e-4}, {0.06, 0.8, 1e-4}, {0.2, 0.01, 1e-4}});
  double responder_noise_var = 1e-4;
  int clusters = 3;

  // Step pool: responders who keep the step shape and others who answer
  // quickly or erratically.
  int careful_responders = 30;
  int careless_responders = 15;
  FilterThresholds filter;

  // Responses from people instead of the simulated pool.
  std::optional<std::filesystem::path> responses_file;
  std::optional<std::filesystem::path> stimulus_file;

  int samples_per_cluster = 1000;
  int learner_components = 5;
  FitSettings fit{5, 300, 1e-6};

  void validate() const;
};

struct ClusterSummary {
  int label = 0;
  std::vector<std::string> members;
  EmpiricalGaussian gaussian;  // after psd_project
  Eigen::MatrixXd samples;     // columns are sample_empirical draws
  double mean_tv_responses = 0.0;
  double mean_tv_samples = 0.0;
  // Against the responder posterior covariance, simulated pools only.
  std::optional<double> covariance_error;
};

struct UnconventionalResult {
  Report report;
  Stimulus stimulus;
  std::vector<ClusterSummary> clusters;
  int evaluated_cluster = -1;  // cluster holding most of the kernel responders
  Eigen::MatrixXd responder_posterior_cov;
};

UnconventionalResult run_unconventional(const UnconventionalConfig& cfg, std::uint64_t seed);

// Simulated response pools; exposed for tests.
std::vector<ResponseRecord> simulate_sawtooth_pool(const Stimulus& s, const UnconventionalConfig& cfg,
                                                   std::uint64_t seed);
std::vector<ResponseRecord> simulate_step_pool(const Stimulus& s, const UnconventionalConfig& cfg, std::uint64_t seed);

// ---------------------------------------------------------------------- bias

struct BiasConfig {
  double lengthscale = 1.0;
  double signal_var = 1.0;
  double noise_var = 0.01;
  // Inputs are uniform on [0, n / density], so larger n covers more ground
  // at the same spacing.
  double density = 2.0;
  int n = 20;
  int replicates = 200;
  std::vector<int> sweep_n = {500};
  int sweep_replicates = 50;
  FitSettings fit{3, 300, 1e-6};

  void validate() const;
};

struct BiasRow {
  int n = 0;
  int replicate = 0;
  double log_ls_error = 0.0;  // log l_hat - log l
  double log_signal_var_hat = 0.0;
  bool converged = false;
};

struct BiasSummary {
  int n = 0;
  int replicates = 0;
  int failed = 0;
  double mean = 0.0;
  double sd = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double t = 0.0;
  double p_one_sided = 1.0;  // H1: mean > 0
};

struct BiasResult {
  Report report;
  std::vector<BiasRow> rows;
  std::vector<BiasSummary> summaries;  // cfg.n first, then cfg.sweep_n
};

BiasResult run_bias_study(const BiasConfig& cfg, std::uint64_t seed);

// Mean, sd, 95% CI and one-sided t-test p-value for H1: mean > 0.
BiasSummary summarize_errors(int n, const std::vector<double>& errors, int failed);

}  // namespace hk
