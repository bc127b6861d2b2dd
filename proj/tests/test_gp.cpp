#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "humankernel/empirical.hpp"
#include "humankernel/errors.hpp"
#include "humankernel/gp.hpp"
#include "test_util.hpp"

using namespace hk;
using hk::testing::dense_mvn_logpdf;
using hk::testing::random_inputs;
using hk::testing::random_spec;

namespace {

GPModel model_of(KernelSpec k, double noise, bool frozen = false) {
  GPModel m;
  m.kernel = std::move(k);
  m.log_noise_var = std::log(noise);
  m.noise_frozen = frozen;
  return m;
}

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) out[i++] = d;
  return out;
}

}  // namespace

TEST_CASE("log marginal likelihood closed forms") {
  GPModel m = model_of(KernelSpec::rbf(1.0, 1.0), 1e-300);
  CHECK(log_marginal_likelihood(m, vec({0.0}), vec({0.0})) == doctest::Approx(-0.918938533204673).epsilon(1e-12));
  m.log_noise_var = 0.0;
  CHECK(log_marginal_likelihood(m, vec({0.0}), vec({2.0})) == doctest::Approx(-2.265512123484645).epsilon(1e-12));
}

TEST_CASE("log marginal likelihood matches dense oracle") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    const GPModel m = model_of(random_spec(rng), 0.05 + 0.1 * t);
    const Eigen::VectorXd x = random_inputs(rng, 4);
    const Eigen::VectorXd y = random_inputs(rng, 4, -2, 2);
    Eigen::MatrixXd c = hk::testing::textbook_gram(m.kernel, x, x);
    c.diagonal().array() += m.noise_var();
    CHECK(std::abs(log_marginal_likelihood(m, x, y) - dense_mvn_logpdf(y, Eigen::VectorXd::Zero(4), c)) < 1e-8);
  }
}

TEST_CASE("lml is invariant under joint permutation") {
  std::mt19937_64 rng(2);
  const GPModel m = model_of(random_spec(rng), 0.1);
  Eigen::VectorXd x = random_inputs(rng, 7);
  Eigen::VectorXd y = random_inputs(rng, 7, -1, 1);
  const double before = log_marginal_likelihood(m, x, y);
  Eigen::PermutationMatrix<Eigen::Dynamic> p(7);
  p.setIdentity();
  std::shuffle(p.indices().data(), p.indices().data() + 7, rng);
  CHECK(log_marginal_likelihood(m, p * x, p * y) == doctest::Approx(before).epsilon(1e-12));
}

TEST_CASE("lml gradient matches finite differences") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 30; ++t) {
    const GPModel m = model_of(random_spec(rng), 0.1, t % 3 == 0);
    const Eigen::VectorXd x = random_inputs(rng, 8);
    const Eigen::VectorXd y = random_inputs(rng, 8, -1, 1);
    const Eigen::VectorXd g = lml_grad(m, x, y);
    REQUIRE(static_cast<std::size_t>(g.size()) == m.num_free_params());
    const Eigen::VectorXd fd = hk::testing::central_diff(
        [&](const Eigen::VectorXd& v) { return log_marginal_likelihood(m.with_free_params(v), x, y); },
        m.free_params());
    for (Eigen::Index i = 0; i < g.size(); ++i) CHECK(hk::testing::close_rel(g[i], fd[i], 1e-4, 1e-8));
  }
}

TEST_CASE("frozen noise drops the noise coordinate") {
  GPModel m = model_of(KernelSpec::rbf(1, 1), 0.1, false);
  CHECK(lml_grad(m, vec({0, 1}), vec({1, 0})).size() == 3);
  m.noise_frozen = true;
  CHECK(lml_grad(m, vec({0, 1}), vec({1, 0})).size() == 2);
}

TEST_CASE("jitter escalation") {
  Eigen::MatrixXd a = Eigen::MatrixXd::Ones(3, 3);  // rank one
  const JitteredCholesky c = jittered_cholesky(a);
  CHECK(c.jitter > 0.0);
  CHECK(c.jitter <= 1e-2);
  Eigen::MatrixXd bad(2, 2);
  bad << 1.0, 0.0, 0.0, -1.0;
  CHECK_THROWS_AS(jittered_cholesky(bad), CholeskyError);
}

TEST_CASE("posterior predictive interpolates and reverts") {
  GPModel m = model_of(KernelSpec::rbf(1.0, 2.0), 1e-300);
  const Predictive p = posterior_predictive(m, vec({0.5}), vec({1.7}), vec({0.5}));
  CHECK(p.mean[0] == doctest::Approx(1.7).epsilon(1e-10));
  CHECK(p.cov(0, 0) <= 1e-10);
  const Predictive far = posterior_predictive(m, vec({0.0, 1.0}), vec({1.0, -1.0}), vec({51.0}));
  CHECK(std::abs(far.mean[0]) < 1e-6);
  CHECK(std::abs(far.cov(0, 0) - 2.0) < 1e-6);
}

TEST_CASE("posterior predictive matches block-inverse conditioning") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 20; ++t) {
    const GPModel m = model_of(random_spec(rng), 0.2);
    const int n = 3 + t % 4, ns = 2 + t % 3;
    const Eigen::VectorXd x = random_inputs(rng, n);
    const Eigen::VectorXd xs = random_inputs(rng, ns, -1, 6);
    const Eigen::VectorXd y = random_inputs(rng, n, -1, 1);
    Eigen::VectorXd all(n + ns);
    all << x, xs;
    Eigen::MatrixXd joint = hk::testing::textbook_gram(m.kernel, all, all);
    joint.diagonal().head(n).array() += m.noise_var();
    // condition through the precision matrix
    const Eigen::MatrixXd prec = joint.inverse();
    const Eigen::MatrixXd pss = prec.bottomRightCorner(ns, ns);
    const Eigen::MatrixXd cov = pss.inverse();
    const Eigen::VectorXd mean = -cov * prec.bottomLeftCorner(ns, n) * y;
    const Predictive p = posterior_predictive(m, x, y, xs);
    CHECK((p.mean - mean).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((p.cov - cov).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((p.cov - p.cov.transpose()).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("sample_prior determinism and Monte Carlo moments") {
  const GPModel m = model_of(KernelSpec::rbf(1.0, 1.5), 0.1);
  const Eigen::VectorXd x = vec({0.0, 0.4, 1.1, 2.0, 3.5});
  CHECK(sample_prior(m, x, 3, 9) == sample_prior(m, x, 3, 9));
  Eigen::MatrixXd c = kernel_matrix(m.kernel, x);
  c.diagonal().array() += m.noise_var();

  const Eigen::MatrixXd d = sample_prior(m, x, 10000, 21);
  const Eigen::VectorXd mean = d.rowwise().mean();
  for (int i = 0; i < 5; ++i) CHECK(std::abs(mean[i]) < 4.0 * std::sqrt(c(i, i) / 10000.0));
  const Eigen::MatrixXd emp = d * d.transpose() / 10000.0;
  CHECK(frobenius_rel_error(emp, c) < 0.1);

  // O(1/sqrt(n)) convergence: mean error over seeds at n and 10n
  double e_small = 0.0, e_large = 0.0;
  for (int s = 0; s < 20; ++s) {
    const Eigen::MatrixXd a = sample_prior(m, x, 200, 100 + s);
    const Eigen::MatrixXd b = sample_prior(m, x, 2000, 200 + s);
    e_small += frobenius_rel_error(a * a.transpose() / 200.0, c);
    e_large += frobenius_rel_error(b * b.transpose() / 2000.0, c);
  }
  // ideal ratio is 1/sqrt(10) ~ 0.316
  const double ratio = e_large / e_small;
  CHECK(ratio >= 0.2);
  CHECK(ratio <= 0.8);
}

TEST_CASE("sample_posterior") {
  const GPModel m = model_of(KernelSpec::rbf(0.8, 1.0), 1e-300);
  const Eigen::VectorXd x = vec({0.0, 1.0, 2.0});
  const Eigen::VectorXd y = vec({0.3, -0.2, 0.9});
  const Eigen::VectorXd xs = vec({0.0, 1.0, 2.0, 2.5, 3.0});
  const DrawSet a = sample_posterior(m, x, y, xs, 4, 5);
  CHECK(a.y_test == sample_posterior(m, x, y, xs, 4, 5).y_test);
  for (int j = 0; j < 4; ++j)
    for (int i = 0; i < 3; ++i) CHECK(std::abs(a.y_test(i, j) - y[i]) < 1e-5);

  const Eigen::VectorXd xs2 = vec({2.5, 3.0, 4.0});
  const DrawSet big = sample_posterior(m, x, y, xs2, 10000, 6);
  const Predictive p = posterior_predictive(m, x, y, xs2);
  const Eigen::VectorXd mean = big.y_test.rowwise().mean();
  for (int i = 0; i < 3; ++i) CHECK(std::abs(mean[i] - p.mean[i]) < 4.0 * std::sqrt(p.cov(i, i) / 10000.0));
}

TEST_CASE("predictive conditional objective") {
  std::mt19937_64 rng(8);
  const GPModel m = model_of(KernelSpec::rbf(1.0, 1.0), 0.05);
  DrawSet d;
  d.x_train = vec({0.0, 1.0, 2.0});
  d.y_train = vec({0.5, 0.1, -0.4});
  d.x_test = vec({3.0, 4.0});
  d.y_test.resize(2, 1);
  d.y_test << 0.2, -0.1;

  const Predictive p = posterior_predictive(m, d.x_train, d.y_train, d.x_test, true);
  const double single = predictive_conditional_lml(m, d);
  CHECK(std::abs(single - dense_mvn_logpdf(d.y_test.col(0), p.mean, p.cov)) < 1e-8);

  DrawSet rep = d;
  rep.y_test = d.y_test.replicate(1, 5);
  CHECK(predictive_conditional_lml(m, rep) == doctest::Approx(5.0 * single).epsilon(1e-12));

  DrawSet empty = d;
  empty.x_test.resize(0);
  empty.y_test.resize(0, 3);
  CHECK(predictive_conditional_lml(m, empty) == 0.0);

  DrawSet none = d;
  none.y_test.resize(2, 0);
  CHECK_THROWS_AS(predictive_conditional_lml(m, none), std::invalid_argument);
}

TEST_CASE("conditional identity over random specs") {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 50; ++t) {
    const GPModel m = model_of(random_spec(rng), 0.05 + 0.01 * t);
    const int n = 1 + t % 5, ns = 1 + t % 5;
    const Eigen::VectorXd x = hk::testing::linspace(0.0, 3.0, n);
    const Eigen::VectorXd xs = hk::testing::linspace(3.5, 6.0, ns);
    const Eigen::VectorXd y = random_inputs(rng, n, -1, 1);
    const Eigen::VectorXd ys = random_inputs(rng, ns, -1, 1);
    const Predictive p = posterior_predictive(m, x, y, xs, true);
    Eigen::VectorXd all(n + ns), yall(n + ns);
    all << x, xs;
    yall << y, ys;
    const double diff = log_marginal_likelihood(m, all, yall) - log_marginal_likelihood(m, x, y);
    CHECK(std::abs(gaussian_log_density(ys, p.mean, p.cov) - diff) < 1e-8);
  }
}

TEST_CASE("predictive conditional gradient matches finite differences") {
  std::mt19937_64 rng(13);
  for (int t = 0; t < 20; ++t) {
    const GPModel m = model_of(random_spec(rng), 0.1, t % 2 == 0);
    const DrawSet d = sample_posterior(m, random_inputs(rng, 5, 0, 3), random_inputs(rng, 5, -1, 1),
                                       hk::testing::linspace(3.2, 5.0, 4), 3, t, true);
    const LmlValueGrad vg = predictive_conditional_lml_grad(m, d);
    const Eigen::VectorXd fd = hk::testing::central_diff(
        [&](const Eigen::VectorXd& v) { return predictive_conditional_lml(m.with_free_params(v), d); },
        m.free_params());
    for (Eigen::Index i = 0; i < fd.size(); ++i) CHECK(hk::testing::close_rel(vg.grad[i], fd[i], 1e-4, 1e-8));
  }
}
