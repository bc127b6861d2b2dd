#include <doctest.h>

#include <cmath>
#include <random>

#include "humankernel/errors.hpp"
#include "humankernel/learn.hpp"
#include "test_util.hpp"

using namespace hk;

TEST_CASE("optimize: concave quadratic") {
  Eigen::VectorXd target(3);
  target << 1.0, -2.0, 0.5;
  const ValueGrad fn = [&](const Eigen::VectorXd& v, double& f, Eigen::VectorXd& g) {
    f = -(v - target).squaredNorm();
    g = -2.0 * (v - target);
  };
  FitOptions opts;
  opts.grad_tol = 1e-9;
  const OptimizeResult r = optimize(fn, Eigen::VectorXd::Constant(3, 7.0), opts);
  CHECK(r.converged);
  CHECK((r.x - target).cwiseAbs().maxCoeff() < 1e-6);
  for (std::size_t i = 1; i < r.trace.size(); ++i) CHECK(r.trace[i] >= r.trace[i - 1]);
}

TEST_CASE("optimize: negated Rosenbrock from the origin") {
  const ValueGrad fn = [](const Eigen::VectorXd& v, double& f, Eigen::VectorXd& g) {
    const double a = 1.0 - v[0], b = v[1] - v[0] * v[0];
    f = -(a * a + 100.0 * b * b);
    g.resize(2);
    g[0] = -(-2.0 * a - 400.0 * v[0] * b);
    g[1] = -(200.0 * b);
  };
  FitOptions opts;
  opts.grad_tol = 1e-4;
  opts.max_iters = 500;
  const OptimizeResult r = optimize(fn, Eigen::VectorXd::Zero(2), opts);
  CHECK(r.converged);
  CHECK(r.grad.lpNorm<Eigen::Infinity>() < 1e-4);
  CHECK(r.iterations <= 500);
  for (std::size_t i = 1; i < r.trace.size(); ++i) CHECK(r.trace[i] >= r.trace[i - 1]);
}

TEST_CASE("optimize rejects a non-finite start") {
  const ValueGrad fn = [](const Eigen::VectorXd& v, double& f, Eigen::VectorXd& g) {
    f = std::log(-1.0);
    g = v;
  };
  CHECK_THROWS_AS(optimize(fn, Eigen::VectorXd::Zero(1), FitOptions{}), FitError);
}

namespace {

struct Synthetic {
  Eigen::VectorXd x, y;
};

Synthetic rbf_data(int n, std::uint64_t seed) {
  GPModel truth;
  truth.kernel = KernelSpec::rbf(1.5, 1.0);
  truth.log_noise_var = std::log(0.01);
  Synthetic s;
  s.x = Eigen::VectorXd::LinSpaced(n, 0.0, 40.0);
  s.y = sample_prior(truth, s.x, 1, seed).col(0);
  return s;
}

}  // namespace

TEST_CASE("fit_data_kernel recovers an RBF length-scale") {
  const Synthetic d = rbf_data(200, 4);
  GPModel templ;
  templ.kernel = KernelSpec::rbf(0.7, 0.5);
  templ.log_noise_var = std::log(0.1);
  FitOptions opts;
  opts.restarts = 10;
  opts.seed = 1;
  const FitReport r = fit_data_kernel(templ, d.x, d.y, opts);
  CHECK(std::abs(r.best_spec().as<Rbf>().log_lengthscale - std::log(1.5)) < 0.15);
  CHECK(r.best_objective >= log_marginal_likelihood(templ, d.x, d.y));
  double mx = -1e300;
  for (const auto& rr : r.per_restart) {
    if (std::isfinite(rr.objective)) mx = std::max(mx, rr.objective);
    if (rr.converged) CHECK(rr.grad_norm < opts.grad_tol);
  }
  CHECK(r.best_objective == mx);
  // true gradient at the optimum (noise well above its floor)
  CHECK(lml_grad(r.best_model, d.x, d.y).lpNorm<Eigen::Infinity>() < 1e-4);
}

TEST_CASE("fits are deterministic and monotone in restarts") {
  const Synthetic d = rbf_data(30, 9);
  GPModel templ;
  templ.kernel = KernelSpec::product(KernelSpec::rbf(1.0, 1.0), KernelSpec::spectral_mixture({{1.0, 0.2, 0.01}}));
  templ.log_noise_var = std::log(0.1);
  FitOptions opts;
  opts.seed = 5;
  opts.max_iters = 100;
  double prev = -1e300;
  for (int r : {1, 2, 4}) {
    opts.restarts = r;
    const FitReport a = fit_data_kernel(templ, d.x, d.y, opts);
    const FitReport b = fit_data_kernel(templ, d.x, d.y, opts);
    CHECK(a.best_objective == b.best_objective);
    CHECK(a.best_model == b.best_model);
    CHECK(a.best_objective >= prev);
    prev = a.best_objective;
  }
}

TEST_CASE("fit_prediction_kernel never does worse than the generating parameters") {
  GPModel truth;
  truth.kernel = KernelSpec::spectral_mixture({{1.0, 0.25, 0.002}});
  truth.log_noise_var = std::log(0.01);
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(10, 0.0, 5.0);
  const Eigen::VectorXd y = sample_prior(truth, x, 1, 3).col(0);
  const DrawSet draws = sample_posterior(truth, x, y, Eigen::VectorXd::LinSpaced(10, 5.5, 10.0), 5, 4, true);
  FitOptions opts;
  opts.restarts = 3;
  opts.objective = Objective::PredictionML;
  const FitReport r = fit_prediction_kernel(truth, draws, opts);
  CHECK(r.best_objective >= predictive_conditional_lml(truth, draws) - 1e-6);
}

TEST_CASE("objective gradients used by the optimizer match finite differences") {
  std::mt19937_64 rng(31);
  for (int t = 0; t < 20; ++t) {
    GPModel m;
    m.kernel = hk::testing::random_spec(rng);
    m.log_noise_var = std::log(0.1);
    const Eigen::VectorXd x = hk::testing::linspace(0.0, 4.0, 6);
    const Eigen::VectorXd y = hk::testing::random_inputs(rng, 6, -1, 1);
    const LmlValueGrad vg = lml_multi(m, x, y, true);
    const Eigen::VectorXd fd = hk::testing::central_diff(
        [&](const Eigen::VectorXd& v) { return log_marginal_likelihood(m.with_free_params(v), x, y); },
        m.free_params());
    for (Eigen::Index i = 0; i < fd.size(); ++i) CHECK(hk::testing::close_rel(vg.grad[i], fd[i], 1e-4, 1e-8));
  }
}

TEST_CASE("all restarts diverging raises FitError") {
  GPModel m;
  m.kernel = KernelSpec::rbf(1.0, 1.0);
  Eigen::VectorXd x(2), y(2);
  x << 0.0, 1.0;
  y << std::nan(""), 1.0;
  FitOptions opts;
  opts.restarts = 2;
  CHECK_THROWS_AS(fit_data_kernel(m, x, y, opts), FitError);
}

TEST_CASE("FitOptions validation and report serialization") {
  FitOptions bad;
  bad.restarts = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  const Synthetic d = rbf_data(20, 1);
  GPModel templ;
  templ.kernel = KernelSpec::rbf(1.0, 1.0);
  FitOptions opts;
  opts.restarts = 2;
  const FitReport r = fit_data_kernel(templ, d.x, d.y, opts);
  const nlohmann::json j = r;
  CHECK(j["per_restart"].size() == 2);
  CHECK(j["best_model"].get<GPModel>() == r.best_model);
  CHECK(format_restart_table(r).find("best objective") != std::string::npos);
}
