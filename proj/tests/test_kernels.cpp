#include <doctest.h>

#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>

#include "humankernel/kernels.hpp"
#include "test_util.hpp"

using namespace hk;
using hk::testing::central_diff;
using hk::testing::random_spec;

TEST_CASE("RBF values") {
  const KernelSpec k = KernelSpec::rbf(1.0, 1.0);
  CHECK(eval_kernel(k, 0.3, 0.3) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(eval_kernel(k, 0.0, 1.0) == doctest::Approx(std::exp(-0.5)).epsilon(1e-14));
  CHECK(eval_kernel(k, 2.0, 1.0) == doctest::Approx(0.6065306597126334).epsilon(1e-12));
}

TEST_CASE("SM at zero lag sums the weights") {
  const KernelSpec k = KernelSpec::spectral_mixture({{0.3, 0.2, 0.01}, {0.7, 1.3, 0.05}});
  CHECK(eval_kernel(k, 4.0, 4.0) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("RQ approaches RBF as alpha grows") {
  const double rq = eval_kernel(KernelSpec::rq(1.0, 1.0, 1e6), 0.0, 1.0);
  const double rbf = eval_kernel(KernelSpec::rbf(1.0, 1.0), 0.0, 1.0);
  CHECK(std::abs(rq - rbf) < 1e-5);
}

TEST_CASE("evaluation matches textbook formulas") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int t = 0; t < 50; ++t) {
    const KernelSpec s = random_spec(rng);
    const double a = u(rng), b = u(rng);
    CHECK(eval_kernel(s, a, b) == doctest::Approx(hk::testing::textbook_kernel(s, a, b)).epsilon(1e-12));
  }
}

TEST_CASE("kernel_matrix shape, symmetry and single entry") {
  std::mt19937_64 rng(3);
  const KernelSpec s = random_spec(rng);
  const Eigen::VectorXd x = hk::testing::random_inputs(rng, 3);
  const Eigen::MatrixXd k = kernel_matrix(s, x, x);
  CHECK((k - k.transpose()).cwiseAbs().maxCoeff() == 0.0);
  Eigen::VectorXd z(1);
  z << 0.0;
  CHECK(kernel_matrix(KernelSpec::rbf(2.0, 3.5), z, z)(0, 0) == doctest::Approx(3.5));
  const Eigen::VectorXd x2 = hk::testing::random_inputs(rng, 4);
  const Eigen::MatrixXd rect = kernel_matrix(s, x, x2);
  CHECK(rect.rows() == 3);
  CHECK(rect.cols() == 4);
  CHECK(rect(2, 1) == eval_kernel(s, x[2], x2[1]));
}

TEST_CASE("Gram matrices of random stationary specs are positive definite") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 20; ++t) {
    const KernelSpec s = random_spec(rng);
    const Eigen::VectorXd x = hk::testing::random_inputs(rng, 5);
    Eigen::MatrixXd k = kernel_matrix(s, x);
    k.diagonal().array() += 1e-8;
    const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(k).eigenvalues();
    CHECK(ev.minCoeff() > 0.0);
    // jittered Cholesky at 1e-6 * mean(diag)
    Eigen::MatrixXd k2 = kernel_matrix(s, x);
    k2.diagonal().array() += 1e-6 * k2.diagonal().mean();
    CHECK(Eigen::LLT<Eigen::MatrixXd>(k2).info() == Eigen::Success);
  }
}

TEST_CASE("property: symmetry and SM envelope") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  for (int t = 0; t < 200; ++t) {
    const KernelSpec s = random_spec(rng);
    const double a = u(rng), b = u(rng);
    CHECK(eval_kernel(s, a, b) == eval_kernel(s, b, a));
    if (s.is<SpectralMixture>()) CHECK(std::abs(eval_kernel(s, 0.0, a - b)) <= eval_kernel(s, 0.0, 0.0) + 1e-15);
  }
}

TEST_CASE("kernel gradients match central differences over 50 random specs") {
  std::mt19937_64 rng(42);
  int checked = 0;
  for (int t = 0; t < 50; ++t) {
    const KernelSpec s = random_spec(rng);
    const Eigen::VectorXd x = hk::testing::random_inputs(rng, 6);
    const auto grads = kernel_grads(s, x);
    REQUIRE(grads.size() == s.num_params());
    const Eigen::VectorXd theta = flatten_params(s);
    for (Eigen::Index p = 0; p < theta.size(); ++p) {
      CHECK((grads[p] - grads[p].transpose()).cwiseAbs().maxCoeff() == 0.0);
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        for (Eigen::Index j = 0; j < x.size(); ++j) {
          auto f = [&](const Eigen::VectorXd& v) { return eval_kernel(unflatten_params(s, v), x[i], x[j]); };
          Eigen::VectorXd tp = theta, tm = theta;
          tp[p] += 1e-5;
          tm[p] -= 1e-5;
          const double fd = (f(tp) - f(tm)) / 2e-5;
          INFO(to_string(s), " param ", p, " analytic ", grads[p](i, j), " fd ", fd);
          CHECK(hk::testing::close_rel(grads[p](i, j), fd, 1e-4, 1e-8));
          ++checked;
        }
      }
    }
  }
  CHECK(checked > 1000);
}

TEST_CASE("multiplicative parameter gradient equals K") {
  Eigen::VectorXd x(3);
  x << 0.0, 0.7, 2.0;
  const KernelSpec s = KernelSpec::rbf(1.3, 2.0);
  const auto g = kernel_grads(s, x);
  CHECK((g[1] - kernel_matrix(s, x)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("product rule") {
  Eigen::VectorXd x(4);
  x << 0.0, 0.5, 1.5, 3.0;
  const KernelSpec l = KernelSpec::spectral_mixture({{1.0, 0.3, 0.02}});
  const KernelSpec r = KernelSpec::linear(0.5, -1.0);
  const KernelSpec p = KernelSpec::product(l, r);
  const auto gp = kernel_grads(p, x);
  const auto gl = kernel_grads(l, x);
  const auto gr = kernel_grads(r, x);
  const Eigen::MatrixXd kl = kernel_matrix(l, x), kr = kernel_matrix(r, x);
  for (std::size_t i = 0; i < gl.size(); ++i) CHECK((gp[i] - gl[i].cwiseProduct(kr)).cwiseAbs().maxCoeff() < 1e-14);
  for (std::size_t i = 0; i < gr.size(); ++i)
    CHECK((gp[gl.size() + i] - gr[i].cwiseProduct(kl)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("flatten and unflatten") {
  CHECK(flatten_params(KernelSpec::rbf(1, 1)).size() == 2);
  CHECK(flatten_params(default_sm_init(10, 1, 1, 5, 1)).size() == 15);
  CHECK(param_names(KernelSpec::product(KernelSpec::rbf(1, 1), KernelSpec::linear(1, 0))).size() == 4);
  std::mt19937_64 rng(9);
  for (int t = 0; t < 50; ++t) {
    const KernelSpec s = random_spec(rng);
    CHECK(unflatten_params(s, flatten_params(s)) == s);
    // bijection: a different vector gives a different spec and flattens back to itself
    Eigen::VectorXd v = flatten_params(s).array() + 0.25;
    CHECK(flatten_params(unflatten_params(s, v)) == v);
  }
  CHECK_THROWS_AS(unflatten_params(KernelSpec::rbf(1, 1), Eigen::VectorXd::Zero(3)), std::invalid_argument);
}

TEST_CASE("default_sm_init") {
  const KernelSpec a = default_sm_init(20.0, 1.0, 2.0, 5, 123);
  const KernelSpec b = default_sm_init(20.0, 1.0, 2.0, 5, 123);
  CHECK(a == b);
  CHECK_FALSE(a == default_sm_init(20.0, 1.0, 2.0, 5, 124));
  double wsum = 0.0;
  for (const auto& c : a.as<SpectralMixture>().components) {
    wsum += std::exp(c.log_weight);
    CHECK(std::exp(c.log_frequency) > 0.0);
    CHECK(std::exp(c.log_frequency) <= 2.0);
  }
  CHECK(wsum >= 0.2);
  CHECK(wsum <= 5.0);
  CHECK_THROWS_AS(default_sm_init(0.0, 1.0, 1.0, 2, 0), std::invalid_argument);
  CHECK_THROWS_AS(default_sm_init(1.0, 1.0, 1.0, 0, 0), std::invalid_argument);
}

TEST_CASE("serialization round trip is exact") {
  std::mt19937_64 rng(77);
  for (int t = 0; t < 30; ++t) {
    const KernelSpec s = random_spec(rng);
    CHECK(kernel_from_string(to_string(s)) == s);
  }
  CHECK_THROWS(kernel_from_string(R"({"type":"periodic"})"));
  CHECK_THROWS(kernel_from_string(R"({"type":"spectral_mixture","components":[]})"));
}

TEST_CASE("spectral density integrates to total weight") {
  const KernelSpec s = KernelSpec::spectral_mixture({{0.4, 0.5, 0.01}, {0.6, 0.1, 0.002}});
  double integral = 0.0;
  const double ds = 1e-4;
  for (double f = -3.0; f < 3.0; f += ds) integral += sm_spectral_density(s, f) * ds;
  CHECK(integral == doctest::Approx(1.0).epsilon(1e-3));
}
