#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "humankernel/gp.hpp"

namespace hk {

enum class Objective { DataML, PredictionML };

struct FitOptions {
  int restarts = 10;
  int max_iters = 500;
  double grad_tol = 1e-6;  // on the gradient infinity-norm
  std::uint64_t seed = 0;
  Objective objective = Objective::DataML;
  // Learnable noise is kept above noise_floor_ratio * var(targets).
  double noise_floor_ratio = 1e-6;
  // Log-space perturbation scale for non-spectral-mixture restarts.
  double perturb_std = 0.5;
  // Upper bound for spectral-mixture frequencies, used both for restart
  // initialization and as a cap during optimization (frequency <= bound,
  // frequency variance <= bound^2). 0 means no cap, and restarts draw
  // frequencies below half the inverse of the smallest input gap.
  double max_frequency = 0.0;
  // Longest spectral-mixture envelope, 1 / (2 pi sqrt(freq_var)), allowed
  // during optimization; 0 means no cap.
  double max_envelope = 0.0;
  // Largest spectral-mixture component weight allowed during optimization;
  // 0 means no cap.
  double max_weight = 0.0;

  void validate() const;
};

struct RestartResult {
  std::uint64_t seed = 0;
  double objective = 0.0;  // NaN when the restart diverged
  int iterations = 0;
  bool converged = false;
  double grad_norm = 0.0;
  std::string error;
};

struct FitReport {
  GPModel best_model;
  double best_objective = 0.0;
  std::vector<RestartResult> per_restart;

  const KernelSpec& best_spec() const { return best_model.kernel; }
  double best_noise() const { return best_model.noise_var(); }
};

// Objective value and gradient at a parameter vector.
using ValueGrad = std::function<void(const Eigen::VectorXd&, double&, Eigen::VectorXd&)>;

struct OptimizeResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd grad;
  int iterations = 0;
  bool converged = false;
  std::vector<double> trace;  // objective after every accepted step, starting value first
};

// Limited-memory BFGS ascent with backtracking (Armijo) line search. Accepted
// steps never decrease the objective. Stops when the gradient infinity-norm
// drops below opts.grad_tol, after opts.max_iters iterations, or when the
// line search cannot make progress. Evaluations that throw or return
// non-finite values are treated as rejected trial points.
OptimizeResult optimize(const ValueGrad& fn, const Eigen::VectorXd& start, const FitOptions& opts);

FitReport fit_data_kernel(const GPModel& templ, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                          const FitOptions& opts);

FitReport fit_prediction_kernel(const GPModel& templ, const DrawSet& draws, const FitOptions& opts);

// Model with the noise frozen at noise_floor_ratio * var(y).
GPModel freeze_noise_at_floor(GPModel model, const Eigen::VectorXd& y, double noise_floor_ratio = 1e-6);

// Restart initialization: SM nodes re-drawn by default_sm_init, other nodes
// perturbed in log space.
GPModel perturb_model(const GPModel& templ, double x_range, double y_variance, double nyquist, double perturb_std,
                      std::uint64_t seed);

void to_json(nlohmann::json& j, const GPModel& m);
void from_json(const nlohmann::json& j, GPModel& m);
void to_json(nlohmann::json& j, const FitReport& r);

// Per-restart table for terminal output.
std::string format_restart_table(const FitReport& r);

}  // namespace hk
