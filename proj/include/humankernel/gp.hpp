#pragma once

#include <cmath>
#include <cstdint>
#include <utility>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "humankernel/kernels.hpp"

namespace hk {

// Zero-mean GP with Gaussian observation noise.
struct GPModel {
  KernelSpec kernel;
  double log_noise_var = std::log(1e-6);
  bool noise_frozen = false;

  double noise_var() const { return std::exp(log_noise_var); }

  // Free parameters: kernel parameters followed by log_noise_var unless frozen.
  std::size_t num_free_params() const { return kernel.num_params() + (noise_frozen ? 0 : 1); }
  Eigen::VectorXd free_params() const;
  GPModel with_free_params(const Eigen::VectorXd& v) const;

  bool operator==(const GPModel&) const = default;
};

// Training data plus W posterior-prediction draws at test inputs.
struct DrawSet {
  Eigen::VectorXd x_train;
  Eigen::VectorXd y_train;
  Eigen::VectorXd x_test;
  Eigen::MatrixXd y_test;  // N* x W, column j is one draw

  Eigen::Index num_draws() const { return y_test.cols(); }
  // Throws std::invalid_argument when an invariant is violated.
  void validate() const;
};

// Cholesky factor of a symmetric matrix after the smallest sufficient jitter.
struct JitteredCholesky {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;  // absolute amount added to the diagonal

  double log_det() const;
};

// Tries the plain factorization, then adds eps * mean(diag) with eps = 1e-8,
// 1e-7, ..., 1e-2. Throws CholeskyError when every attempt fails.
JitteredCholesky jittered_cholesky(const Eigen::MatrixXd& a);

// Lower-triangular factor L with L L^T ~= a (jittered).
Eigen::MatrixXd cholesky_factor(const Eigen::MatrixXd& a);

// Factor F with F F^T ~= a for a positive semi-definite `a`, from a pivoted
// LDL^T; falls back to jittered_cholesky when `a` is clearly indefinite.
Eigen::MatrixXd sampling_factor(const Eigen::MatrixXd& a);

Eigen::MatrixXd sample_prior(const GPModel& model, const Eigen::VectorXd& x, int n_draws, std::uint64_t seed);

double log_marginal_likelihood(const GPModel& model, const Eigen::VectorXd& x, const Eigen::VectorXd& y);

// Gradient with respect to GPModel::free_params().
Eigen::VectorXd lml_grad(const GPModel& model, const Eigen::VectorXd& x, const Eigen::VectorXd& y);

// Sum over the columns of `ys` of log N(y_j; 0, K + s2 I), with its gradient
// w.r.t. the free parameters. One factorization serves all columns.
struct LmlValueGrad {
  double value = 0.0;
  Eigen::VectorXd grad;
};
LmlValueGrad lml_multi(const GPModel& model, const Eigen::VectorXd& x, const Eigen::MatrixXd& ys, bool want_grad = true);

struct Predictive {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

// Posterior predictive at x_star. `noisy` adds the observation noise to the
// covariance diagonal.
Predictive posterior_predictive(const GPModel& model, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                const Eigen::VectorXd& x_star, bool noisy = false);

// W posterior draws at x_star, packaged with the training data. With `noisy`
// the draws include observation noise.
DrawSet sample_posterior(const GPModel& model, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                         const Eigen::VectorXd& x_star, int w, std::uint64_t seed, bool noisy = false);

// sum_j log p(y*_j | y, k), computed as sum_j log p(y, y*_j) - W log p(y).
double predictive_conditional_lml(const GPModel& model, const DrawSet& draws);
LmlValueGrad predictive_conditional_lml_grad(const GPModel& model, const DrawSet& draws);

// Log density of N(mean, cov) at v, via jittered Cholesky.
double gaussian_log_density(const Eigen::VectorXd& v, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov);

}  // namespace hk
