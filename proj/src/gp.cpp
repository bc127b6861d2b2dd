#include "humankernel/gp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "humankernel/errors.hpp"
#include "humankernel/rng.hpp"

namespace hk {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

bool distinct(const Eigen::VectorXd& v) {
  std::vector<double> s(v.data(), v.data() + v.size());
  std::sort(s.begin(), s.end());
  return std::adjacent_find(s.begin(), s.end()) == s.end();
}

Eigen::MatrixXd noisy_gram(const GPModel& model, const Eigen::VectorXd& x) {
  Eigen::MatrixXd c = kernel_matrix(model.kernel, x);
  c.diagonal().array() += model.noise_var();
  return c;
}

}  // namespace

Eigen::VectorXd GPModel::free_params() const {
  const Eigen::VectorXd k = flatten_params(kernel);
  if (noise_frozen) return k;
  Eigen::VectorXd v(k.size() + 1);
  v << k, log_noise_var;
  return v;
}

GPModel GPModel::with_free_params(const Eigen::VectorXd& v) const {
  const auto nk = static_cast<Eigen::Index>(kernel.num_params());
  if (v.size() != static_cast<Eigen::Index>(num_free_params()))
    throw std::invalid_argument("free parameter vector has length " + std::to_string(v.size()) + ", model expects " +
                                std::to_string(num_free_params()));
  GPModel out = *this;
  out.kernel = unflatten_params(kernel, v.head(nk));
  if (!noise_frozen) out.log_noise_var = v[nk];
  return out;
}

void DrawSet::validate() const {
  if (x_train.size() != y_train.size()) throw std::invalid_argument("DrawSet: x_train and y_train differ in length");
  if (y_test.rows() != x_test.size()) throw std::invalid_argument("DrawSet: y_test rows must match x_test length");
  if (y_test.cols() < 1) throw std::invalid_argument("DrawSet: at least one draw is required");
  if (!x_train.allFinite() || !y_train.allFinite() || !x_test.allFinite() || !y_test.allFinite())
    throw std::invalid_argument("DrawSet: entries must be finite");
  if (!distinct(x_train)) throw std::invalid_argument("DrawSet: x_train entries must be distinct");
  if (!distinct(x_test)) throw std::invalid_argument("DrawSet: x_test entries must be distinct");
}

double JitteredCholesky::log_det() const {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

JitteredCholesky jittered_cholesky(const Eigen::MatrixXd& a) {
  if (!a.allFinite()) throw CholeskyError("matrix has non-finite entries");
  JitteredCholesky out;
  out.llt.compute(a);
  if (out.llt.info() == Eigen::Success) return out;
  const double scale = a.rows() > 0 ? std::max(a.diagonal().mean(), 1e-300) : 1.0;
  for (double eps = 1e-8; eps <= 1e-2 * 1.0000001; eps *= 10.0) {
    Eigen::MatrixXd b = a;
    b.diagonal().array() += eps * scale;
    out.llt.compute(b);
    if (out.llt.info() == Eigen::Success) {
      out.jitter = eps * scale;
      return out;
    }
  }
  throw CholeskyError("Cholesky failed after jitter escalation to 1e-2 * mean(diag)");
}

Eigen::MatrixXd cholesky_factor(const Eigen::MatrixXd& a) { return jittered_cholesky(a).llt.matrixL(); }

Eigen::MatrixXd sampling_factor(const Eigen::MatrixXd& a) {
  // Pivoted LDL^T copes with the exactly singular directions of noise-free
  // posteriors; anything clearly indefinite goes through the jitter policy.
  if (!a.allFinite()) throw CholeskyError("matrix has non-finite entries");
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  const double scale = a.rows() > 0 ? std::max(a.diagonal().cwiseAbs().mean(), 1e-300) : 1.0;
  if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() < -1e-8 * scale) return cholesky_factor(a);
  const Eigen::VectorXd root = ldlt.vectorD().cwiseMax(0.0).cwiseSqrt();
  Eigen::MatrixXd l = ldlt.matrixL();
  l = ldlt.transpositionsP().transpose() * (l * root.asDiagonal());
  return l;
}

Eigen::MatrixXd sample_prior(const GPModel& model, const Eigen::VectorXd& x, int n_draws, std::uint64_t seed) {
  if (n_draws < 1) throw std::invalid_argument("sample_prior: n_draws must be >= 1");
  const Eigen::MatrixXd l = cholesky_factor(noisy_gram(model, x));
  Rng rng(seed);
  return l * standard_normal(x.size(), n_draws, rng);
}

namespace {

LmlValueGrad lml_with_factor(const GPModel& model, const Eigen::VectorXd& x, const Eigen::MatrixXd& ys,
                             const JitteredCholesky& chol, bool want_grad) {
  const Eigen::Index n = x.size();
  const double w = static_cast<double>(ys.cols());
  const Eigen::MatrixXd alpha = chol.llt.solve(ys);

  LmlValueGrad out;
  out.value = -0.5 * (ys.array() * alpha.array()).sum() - 0.5 * w * chol.log_det() - 0.5 * w * n * kLog2Pi;
  if (!want_grad) return out;

  // dL/dtheta_i = 0.5 * tr((A A^T - W C^-1) dC/dtheta_i)
  // C^-1 = L^-T L^-1, accumulated on the lower triangle only
  Eigen::MatrixXd linv = Eigen::MatrixXd::Identity(n, n);
  chol.llt.matrixL().solveInPlace(linv);
  Eigen::MatrixXd m = alpha * alpha.transpose();
  m.selfadjointView<Eigen::Lower>().rankUpdate(linv.transpose(), -w);
  m.triangularView<Eigen::StrictlyUpper>() = m.transpose();
  const std::vector<Eigen::MatrixXd> dk = kernel_grads(model.kernel, x);
  out.grad.resize(static_cast<Eigen::Index>(model.num_free_params()));
  for (std::size_t i = 0; i < dk.size(); ++i) out.grad[static_cast<Eigen::Index>(i)] = 0.5 * (m.array() * dk[i].array()).sum();
  if (!model.noise_frozen) out.grad[out.grad.size() - 1] = 0.5 * model.noise_var() * m.trace();
  return out;
}

}  // namespace

LmlValueGrad lml_multi(const GPModel& model, const Eigen::VectorXd& x, const Eigen::MatrixXd& ys, bool want_grad) {
  if (x.size() != ys.rows()) throw std::invalid_argument("lml: x and y differ in length");
  return lml_with_factor(model, x, ys, jittered_cholesky(noisy_gram(model, x)), want_grad);
}

double log_marginal_likelihood(const GPModel& model, const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != y.size() || x.size() < 1) throw std::invalid_argument("lml: need |x| = |y| >= 1");
  return lml_multi(model, x, y, false).value;
}

Eigen::VectorXd lml_grad(const GPModel& model, const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != y.size() || x.size() < 1) throw std::invalid_argument("lml: need |x| = |y| >= 1");
  return lml_multi(model, x, y, true).grad;
}

Predictive posterior_predictive(const GPModel& model, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                const Eigen::VectorXd& x_star, bool noisy) {
  if (x.size() < 1 || x.size() != y.size()) throw std::invalid_argument("posterior_predictive: need a nonempty training set");
  if (x_star.size() < 1) throw std::invalid_argument("posterior_predictive: x_star is empty");
  const JitteredCholesky chol = jittered_cholesky(noisy_gram(model, x));
  const Eigen::MatrixXd ks = kernel_matrix(model.kernel, x, x_star);
  Predictive p;
  p.mean = ks.transpose() * chol.llt.solve(y);
  const Eigen::MatrixXd v = chol.llt.matrixL().solve(ks);
  p.cov = kernel_matrix(model.kernel, x_star) - v.transpose() * v;
  p.cov = 0.5 * (p.cov + p.cov.transpose());
  if (noisy) p.cov.diagonal().array() += model.noise_var();
  return p;
}

DrawSet sample_posterior(const GPModel& model, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                         const Eigen::VectorXd& x_star, int w, std::uint64_t seed, bool noisy) {
  if (w < 1) throw std::invalid_argument("sample_posterior: W must be >= 1");
  const Predictive p = posterior_predictive(model, x, y, x_star, noisy);
  const Eigen::MatrixXd l = sampling_factor(p.cov);
  Rng rng(seed);
  DrawSet d;
  d.x_train = x;
  d.y_train = y;
  d.x_test = x_star;
  d.y_test = (l * standard_normal(x_star.size(), w, rng)).colwise() + p.mean;
  return d;
}

namespace {

LmlValueGrad pcl_impl(const GPModel& model, const DrawSet& draws, bool want_grad) {
  draws.validate();
  LmlValueGrad out;
  const Eigen::Index n = draws.x_train.size();
  const Eigen::Index ns = draws.x_test.size();
  const Eigen::Index w = draws.num_draws();
  if (ns == 0) {
    out.grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.num_free_params()));
    return out;
  }
  Eigen::VectorXd xj(n + ns);
  xj << draws.x_train, draws.x_test;
  Eigen::MatrixXd yj(n + ns, w);
  yj.topRows(n) = draws.y_train.replicate(1, w);
  yj.bottomRows(ns) = draws.y_test;
  // The value comes from the test block of the joint factor, which is the
  // factor of the conditional covariance; differencing the two LMLs cancels
  // badly once both are large.
  const JitteredCholesky chol = jittered_cholesky(noisy_gram(model, xj));
  const Eigen::MatrixXd z = chol.llt.matrixL().solve(yj);
  const double log_det = 2.0 * chol.llt.matrixLLT().diagonal().tail(ns).array().log().sum();
  out.value = -0.5 * z.bottomRows(ns).squaredNorm() - 0.5 * static_cast<double>(w) * (log_det + ns * kLog2Pi);
  if (!want_grad) return out;
  const LmlValueGrad joint = lml_with_factor(model, xj, yj, chol, true);
  if (n == 0) {
    out.grad = joint.grad;
    return out;
  }
  const LmlValueGrad train = lml_multi(model, draws.x_train, draws.y_train, true);
  out.grad = joint.grad - static_cast<double>(w) * train.grad;
  return out;
}

}  // namespace

double predictive_conditional_lml(const GPModel& model, const DrawSet& draws) {
  return pcl_impl(model, draws, false).value;
}

LmlValueGrad predictive_conditional_lml_grad(const GPModel& model, const DrawSet& draws) {
  return pcl_impl(model, draws, true);
}

double gaussian_log_density(const Eigen::VectorXd& v, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
  const JitteredCholesky chol = jittered_cholesky(cov);
  const Eigen::VectorXd z = chol.llt.matrixL().solve(v - mean);
  return -0.5 * z.squaredNorm() - 0.5 * chol.log_det() - 0.5 * static_cast<double>(v.size()) * kLog2Pi;
}

}  // namespace hk
