#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "humankernel/empirical.hpp"
#include "humankernel/experiments.hpp"
#include "humankernel/responses.hpp"
#include "test_util.hpp"

using namespace hk;

TEST_CASE("sawtooth values") {
  CHECK(sawtooth_value(0.5, 2.0, 1.0) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(sawtooth_value(2.5, 2.0, 1.0) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(sawtooth_value(-0.5, 2.0, 1.0) == doctest::Approx(0.75).epsilon(1e-15));

  const StimulusGrid grid{0.0, 10.0, 201, 15.0, 50};
  CHECK_THROWS_AS(make_sawtooth("saw", 0.0, 1.0, grid), std::invalid_argument);
  const Stimulus s = make_sawtooth("saw", 2.5, 1.0, grid);
  CHECK(s.family == StimulusFamily::Sawtooth);
  CHECK(s.x_train.size() == 201);
  CHECK(s.x_test.size() == 50);
  CHECK(s.x_test.minCoeff() > grid.hi);
  CHECK(s.x_test.maxCoeff() == doctest::Approx(grid.test_hi));
  CHECK(s.y_train.minCoeff() >= 0.0);
  CHECK(s.y_train.maxCoeff() < 1.0);
}

TEST_CASE("step values and geometry") {
  const std::vector<double> bp = {2.0, 6.0};
  const std::vector<double> lv = {0.0, 1.5, -1.0};
  CHECK(step_value(1.999, bp, lv) == 0.0);
  CHECK(step_value(2.0, bp, lv) == 1.5);  // right-continuous
  CHECK(step_value(5.999, bp, lv) == 1.5);
  CHECK(step_value(6.0, bp, lv) == -1.0);

  const StimulusGrid grid{0.0, 10.0, 21, 15.0, 10};
  CHECK_THROWS_AS(make_step("s", {6.0, 2.0}, lv, grid), std::invalid_argument);
  CHECK_THROWS_AS(make_step("s", {2.0}, lv, grid), std::invalid_argument);
  CHECK_THROWS_AS(make_step("s", {20.0}, {0.0, 1.0}, grid), std::invalid_argument);
}

TEST_CASE("one jump of height h gives total variation h on a dense grid") {
  for (double h : {0.5, 1.0, 3.25}) {
    const Stimulus s = make_step("step", {5.0}, {0.0, h}, StimulusGrid{0.0, 10.0, 1001, 15.0, 10});
    CHECK(total_variation(s.y_train) == doctest::Approx(h).epsilon(1e-14));
  }
}

TEST_CASE("samples from a block covariance vary at the block boundary") {
  const int n = 30;
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(n, n);
  cov.topLeftCorner(n / 2, n / 2).setConstant(1.0);
  cov.bottomRightCorner(n / 2, n / 2).setConstant(1.0);
  cov.diagonal().array() += 1e-4;
  const EmpiricalGaussian g{Eigen::VectorXd::Zero(n), cov, 100, false};
  const Eigen::MatrixXd s = sample_empirical(psd_project(g), 401, 5);
  std::vector<double> share;
  for (Eigen::Index c = 0; c < s.cols(); ++c) {
    const Eigen::VectorXd y = s.col(c);
    share.push_back(total_variation(y.segment(n / 3, n / 3 + 1)) / total_variation(y));
  }
  std::nth_element(share.begin(), share.begin() + 200, share.end());
  CHECK(share[200] >= 0.6);
}

TEST_CASE("normalized_l2 and kernel_slice") {
  const Eigen::VectorXd b = Eigen::Vector3d(3.0, 0.0, 4.0);
  CHECK(normalized_l2(b, b) == 0.0);
  CHECK(normalized_l2(Eigen::Vector3d::Zero(), b) == doctest::Approx(1.0));
  CHECK_THROWS_AS(normalized_l2(Eigen::Vector2d(1, 2), b), std::invalid_argument);
  CHECK_THROWS_AS(normalized_l2(b, Eigen::Vector3d::Zero()), std::invalid_argument);

  const Eigen::VectorXd taus = Eigen::VectorXd::LinSpaced(11, 0.0, 5.0);
  const KernelSpec rq = KernelSpec::rq(1.5, 1.0, 0.5);
  CHECK((kernel_slice(rq, 7.0, taus) - kernel_curve(rq, taus)).cwiseAbs().maxCoeff() < 1e-15);
  const KernelSpec lin = KernelSpec::linear(1.0, 0.0);
  CHECK(kernel_slice(lin, 2.0, taus)[2] == doctest::Approx(2.0 * 3.0));
}

TEST_CASE("spectral modes of a two-component mixture") {
  const KernelSpec sm = KernelSpec::spectral_mixture({{0.6, 0.1, 0.0004}, {0.4, 0.6, 0.0004}});
  const std::vector<double> modes = spectral_modes(sm, 1.0);
  REQUIRE(modes.size() == 2);
  CHECK(modes[0] == doctest::Approx(0.1).epsilon(1e-3));
  CHECK(modes[1] == doctest::Approx(0.6).epsilon(1e-3));
}

TEST_CASE("progressive stimuli repeat the first function at the end") {
  const ProgressiveConfig cfg;
  const std::vector<Stimulus> a = make_progressive_stimuli(cfg.set_a, 11);
  REQUIRE(a.size() == 6);
  CHECK(a.front().id == "A1");
  CHECK(a.back().id == "A6");
  CHECK(a.back().y_train == a.front().y_train);
  CHECK(a[1].y_train != a.front().y_train);
  CHECK(a.back().generator_params.at("repeat_of") == 1);
  for (const auto& s : a) {
    CHECK(s.x_test.minCoeff() > s.x_train.maxCoeff());
    CHECK(s.y_range->first < s.y_train.minCoeff());
    CHECK(s.y_range->second > s.y_train.maxCoeff());
  }
  const std::vector<Stimulus> again = make_progressive_stimuli(cfg.set_a, 11);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(again[i].y_train == a[i].y_train);
}

TEST_CASE("jitter_kernel") {
  const KernelSpec k = KernelSpec::product(KernelSpec::spectral_mixture({{1.0, 0.25, 0.001}}), KernelSpec::linear(0.1, 2.0));
  CHECK(jitter_kernel(k, 0.0, 3) == k);
  const KernelSpec j = jitter_kernel(k, 0.3, 3);
  CHECK(j.num_params() == k.num_params());
  CHECK(j != k);
  CHECK(jitter_kernel(k, 0.3, 3) == j);
}

TEST_CASE("summarize_errors by hand") {
  const BiasSummary s = summarize_errors(20, {1.0, 2.0, 3.0}, 2);
  CHECK(s.n == 20);
  CHECK(s.replicates == 3);
  CHECK(s.failed == 2);
  CHECK(s.mean == doctest::Approx(2.0));
  CHECK(s.sd == doctest::Approx(1.0));
  CHECK(s.t == doctest::Approx(2.0 * std::sqrt(3.0)));
  // Student t with 2 degrees of freedom: P(T > t) = (1 - t / sqrt(t^2 + 2)) / 2
  CHECK(s.p_one_sided == doctest::Approx(0.5 * (1.0 - s.t / std::sqrt(s.t * s.t + 2.0))).epsilon(1e-10));
  CHECK(s.ci_lo == doctest::Approx(2.0 - 4.302652729911275 / std::sqrt(3.0)).epsilon(1e-9));
  CHECK(s.ci_hi == doctest::Approx(2.0 + 4.302652729911275 / std::sqrt(3.0)).epsilon(1e-9));
}

TEST_CASE("bias study with one replicate reports one row") {
  BiasConfig cfg;
  cfg.replicates = 1;
  cfg.sweep_n = {};
  const BiasResult r = run_bias_study(cfg, 4);
  REQUIRE(r.summaries.size() == 1);
  CHECK(r.rows.size() + static_cast<std::size_t>(r.summaries[0].failed) == 1);
  const Table* t = r.report.find_table("bias_replicates");
  REQUIRE(t != nullptr);
  CHECK(t->rows.size() == 1);
}

TEST_CASE("config validation") {
  ReconstructionConfig rc;
  rc.draws = {};
  CHECK_THROWS_AS(rc.validate(), std::invalid_argument);
  rc = {};
  rc.prediction_kernel = KernelSpec::rbf(1.0, 1.0);
  CHECK_THROWS_AS(rc.validate(), std::invalid_argument);
  BiasConfig bc;
  bc.replicates = 0;
  CHECK_THROWS_AS(bc.validate(), std::invalid_argument);
}
