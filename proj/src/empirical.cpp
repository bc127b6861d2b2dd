#include "humankernel/empirical.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "humankernel/format.hpp"
#include "humankernel/rng.hpp"

namespace hk {

EmpiricalGaussian empirical_moments(const Eigen::MatrixXd& y) {
  if (y.cols() < 1) throw std::invalid_argument("empirical_moments: need at least one column");
  const double m = static_cast<double>(y.cols());
  EmpiricalGaussian g;
  g.mean = y.rowwise().mean();
  g.cov = y * y.transpose() / m - g.mean * g.mean.transpose();
  g.cov = 0.5 * (g.cov + g.cov.transpose());
  g.n_draws = static_cast<int>(y.cols());
  return g;
}

EmpiricalGaussian psd_project(const EmpiricalGaussian& g, double floor_ratio) {
  if (!g.cov.allFinite() || !g.mean.allFinite()) throw std::invalid_argument("psd_project: non-finite entries");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (g.cov + g.cov.transpose()));
  Eigen::VectorXd lambda = es.eigenvalues();
  const double lmax = lambda.size() ? lambda.maxCoeff() : 0.0;
  const double floor = lmax > 0.0 ? floor_ratio * lmax : floor_ratio;
  if (lmax > 0.0)
    lambda = lambda.cwiseMax(floor);
  else
    lambda.setConstant(floor);
  EmpiricalGaussian out = g;
  out.cov = es.eigenvectors() * lambda.asDiagonal() * es.eigenvectors().transpose();
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  out.psd_repaired = true;
  return out;
}

Eigen::MatrixXd sample_empirical(const EmpiricalGaussian& g, int n, std::uint64_t seed) {
  if (!g.psd_repaired) throw std::invalid_argument("sample_empirical: covariance is not PSD-repaired; call psd_project first");
  if (n < 1) throw std::invalid_argument("sample_empirical: n must be >= 1");
  // Symmetric square root via eigendecomposition handles singular covariances.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g.cov);
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd factor = es.eigenvectors() * root.asDiagonal();
  Rng rng(seed);
  return (factor * standard_normal(g.mean.size(), n, rng)).colwise() + g.mean;
}

Eigen::MatrixXd degenerate_mle(const Eigen::VectorXd& y) {
  if (y.size() < 1) throw std::invalid_argument("degenerate_mle: empty vector");
  const Eigen::VectorXd d = y.array() - y.mean();
  return d * d.transpose();
}

double frobenius_rel_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return (a - b).norm() / b.norm(); }

std::string covariance_csv(const Eigen::MatrixXd& cov, const Eigen::VectorXd& locations) {
  std::string out;
  for (Eigen::Index j = 0; j < locations.size(); ++j) {
    if (j) out += ',';
    out += format_double(locations[j]);
  }
  out += '\n';
  for (Eigen::Index i = 0; i < cov.rows(); ++i) {
    for (Eigen::Index j = 0; j < cov.cols(); ++j) {
      if (j) out += ',';
      out += format_double(cov(i, j));
    }
    out += '\n';
  }
  return out;
}

}  // namespace hk
