#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Core>

namespace hk {

struct EmpiricalGaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  int n_draws = 0;
  bool psd_repaired = false;
};

// Row means and Y Y^T / M - ybar ybar^T over the M columns of y (divisor M).
EmpiricalGaussian empirical_moments(const Eigen::MatrixXd& y);

// Clips eigenvalues below floor_ratio * lambda_max up to that value. When
// lambda_max <= 0 every eigenvalue becomes floor_ratio.
EmpiricalGaussian psd_project(const EmpiricalGaussian& g, double floor_ratio = 1e-10);

// n draws from N(mean, cov). Requires psd_repaired.
Eigen::MatrixXd sample_empirical(const EmpiricalGaussian& g, int n, std::uint64_t seed);

// (y - ybar)(y - ybar)^T with scalar ybar = mean(y).
Eigen::MatrixXd degenerate_mle(const Eigen::VectorXd& y);

// ||a - b||_F / ||b||_F
double frobenius_rel_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

// Row-major CSV with a header row of the test-input locations.
std::string covariance_csv(const Eigen::MatrixXd& cov, const Eigen::VectorXd& locations);

}  // namespace hk
