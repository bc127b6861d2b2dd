#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "humankernel/gp.hpp"
#include "humankernel/occam.hpp"
#include "test_util.hpp"

using namespace hk;

namespace {

const std::vector<double> kOffsets = {1.0, 0.5, -0.5, -1.0, -1.5};

GPModel family() { return {KernelSpec::rbf(1.0, 1.0), std::log(0.01), true}; }

RankingRecord ranking(const std::string& pid, const std::string& task, std::vector<int> order) {
  return {pid, task, std::move(order), std::nullopt, 0};
}

}  // namespace

TEST_CASE("occam task structure") {
  const OccamTask t = build_occam_task(family(), 17, kOffsets, {}, "occam-x");
  CHECK(t.id == "occam-x");
  CHECK(t.x.size() == 5);
  CHECK(std::is_sorted(t.x.data(), t.x.data() + t.x.size()));
  CHECK(t.candidate_curves.size() == 7);
  CHECK(t.candidate_configs.size() == 7);
  CHECK(t.lml.size() == 7);
  CHECK(t.display_x.size() == 101);

  // label 2 is the generating model and its curve is that model's posterior mean
  CHECK(t.candidate_configs[1].kernel == family().kernel);
  const Eigen::VectorXd mean = posterior_predictive(family(), t.x, t.y, t.display_x).mean;
  CHECK((t.candidate_curves[1] - mean).cwiseAbs().maxCoeff() < 1e-12);

  // labels 3..7 differ from label 1 only in the offset log length-scale
  const Rbf& ml = t.candidate_configs[0].kernel.as<Rbf>();
  for (std::size_t l = 2; l < 7; ++l) {
    const Rbf& k = t.candidate_configs[l].kernel.as<Rbf>();
    CHECK(k.log_lengthscale == doctest::Approx(ml.log_lengthscale + kOffsets[l - 2]).epsilon(1e-14));
    CHECK(k.log_signal_var == ml.log_signal_var);
    CHECK(t.candidate_configs[l].log_noise_var == t.candidate_configs[0].log_noise_var);
  }
  for (std::size_t l = 0; l < 7; ++l)
    CHECK(t.lml[l] == doctest::Approx(log_marginal_likelihood(t.candidate_configs[l], t.x, t.y)).epsilon(1e-12));
}

TEST_CASE("property: label 1 has the highest marginal likelihood") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const OccamTask t = build_occam_task(family(), seed, kOffsets);
    CHECK(t.lml_ranks()[0] == 1);
  }
}

TEST_CASE("occam tasks are deterministic and round trip through JSON") {
  const OccamTask a = build_occam_task(family(), 5, kOffsets);
  const OccamTask b = build_occam_task(family(), 5, kOffsets);
  CHECK(a.y == b.y);
  CHECK(a.lml == b.lml);
  const OccamTask c = nlohmann::json(a).get<OccamTask>();
  CHECK(c.x == a.x);
  CHECK(c.lml == a.lml);
  CHECK(c.candidate_curves[4] == a.candidate_curves[4]);
  CHECK(c.candidate_configs[6].kernel == a.candidate_configs[6].kernel);
}

TEST_CASE("occam offsets are validated") {
  CHECK_THROWS_AS(build_occam_task(family(), 1, {1.0, 0.5, -0.5, -1.0}), std::invalid_argument);
  CHECK_THROWS_AS(build_occam_task(family(), 1, {1.0, 0.5, 0.5, -1.0, -1.5}), std::invalid_argument);
  CHECK_THROWS_AS(build_occam_task(family(), 1, {2.0, 1.5, 1.0, 0.5, 0.25}), std::invalid_argument);
  CHECK_THROWS_AS(build_occam_task({KernelSpec::rq(1.0, 1.0, 1.0), -4.0, true}, 1, kOffsets), std::invalid_argument);
}

TEST_CASE("lml ranks and monotonicity on a hand-made task") {
  OccamTask t;
  t.log_ls_offsets = kOffsets;
  t.lml = {0.0, -3.0, -1.0, -0.5, -0.2, -0.7, -0.9};
  CHECK(t.lml_ranks() == std::vector<int>{1, 7, 6, 3, 2, 4, 5});
  CHECK(t.monotone_in_negative_offsets());
  t.lml[6] = -0.7;  // a tie is not a strict decrease
  CHECK_FALSE(t.monotone_in_negative_offsets());
  t.lml = {0.0, 0.0, -1.0, -1.0, -1.0, -1.0, -1.0};
  CHECK(t.lml_ranks()[0] == 1);
  CHECK(t.lml_ranks()[1] == 2);
}

TEST_CASE("spearman") {
  const std::vector<double> x = {3.0, 1.0, 4.0, 1.5, 5.0};
  CHECK(spearman(x, x) == doctest::Approx(1.0));
  std::vector<double> neg(x.size());
  std::transform(x.begin(), x.end(), neg.begin(), [](double v) { return -v; });
  CHECK(spearman(x, neg) == doctest::Approx(-1.0));
  // monotone transforms do not change ranks
  std::vector<double> e(x.size());
  std::transform(x.begin(), x.end(), e.begin(), [](double v) { return std::exp(v); });
  CHECK(spearman(x, e) == doctest::Approx(1.0));
  // ties take the average rank: ranks (1.5, 1.5, 3) vs (1, 2, 3)
  CHECK(spearman({1.0, 1.0, 2.0}, {1.0, 2.0, 3.0}) == doctest::Approx(std::sqrt(3.0) / 2.0));
  CHECK_THROWS_AS(spearman({1.0}, {1.0}), std::invalid_argument);
}

TEST_CASE("identical rankings have zero spread") {
  const OccamTask t = build_occam_task(family(), 3, kOffsets, {}, "t");
  std::vector<RankingRecord> rs;
  for (int i = 0; i < 12; ++i) rs.push_back(ranking("p" + std::to_string(i), "t", {3, 1, 2, 7, 6, 5, 4}));
  const RankingAggregate a = aggregate_rankings(rs, t);
  CHECK(a.n == 12);
  CHECK(a.first_place_votes[2] == 12);
  CHECK(a.first_place_share[2] == 1.0);
  for (int l = 0; l < 7; ++l) {
    CHECK(a.rank_sd[static_cast<std::size_t>(l)] == 0.0);
    CHECK(a.rank_se[static_cast<std::size_t>(l)] == 0.0);
    CHECK(a.first_place_share_se[static_cast<std::size_t>(l)] == 0.0);
  }
  CHECK(a.mean_rank[0] == 2.0);
  CHECK(a.mean_rank[3] == 7.0);
  CHECK(a.lml_rank[0] == 1);
}

TEST_CASE("two reversed rankings give every label mean rank 4") {
  const OccamTask t = build_occam_task(family(), 3, kOffsets, {}, "t");
  const std::vector<int> order = {5, 2, 7, 1, 3, 6, 4};
  std::vector<int> rev(order.rbegin(), order.rend());
  const RankingAggregate a = aggregate_rankings({ranking("a", "t", order), ranking("b", "t", rev)}, t);
  for (double m : a.mean_rank) CHECK(m == 4.0);
}

TEST_CASE("first-place share and standard errors on a 200-record fixture") {
  const OccamTask t = build_occam_task(family(), 3, kOffsets, {}, "t");
  std::vector<RankingRecord> rs;
  for (int i = 0; i < 200; ++i) {
    std::vector<int> order(7);
    std::iota(order.begin(), order.end(), 1);
    if (i >= 74) std::rotate(order.begin(), order.begin() + 1 + i % 6, order.end());
    rs.push_back(ranking("p" + std::to_string(i), "t", order));
  }
  const RankingAggregate a = aggregate_rankings(rs, t);
  CHECK(a.first_place_votes[0] == 74);
  CHECK(a.first_place_share[0] == 0.37);
  for (std::size_t l = 0; l < 7; ++l) {
    // brute-force sample sd of the rank of label l
    std::vector<double> r;
    for (const auto& rec : rs)
      r.push_back(static_cast<double>(std::find(rec.order.begin(), rec.order.end(), static_cast<int>(l + 1)) - rec.order.begin() + 1));
    const double m = std::accumulate(r.begin(), r.end(), 0.0) / 200.0;
    double ss = 0.0;
    for (double v : r) ss += (v - m) * (v - m);
    const double sd = std::sqrt(ss / 199.0);
    CHECK(a.mean_rank[l] == doctest::Approx(m).epsilon(1e-14));
    CHECK(a.rank_sd[l] == doctest::Approx(sd).epsilon(1e-14));
    CHECK(a.rank_se[l] == a.rank_sd[l] / std::sqrt(200.0));
  }
}

TEST_CASE("aggregate_rankings rejects foreign or malformed rankings") {
  const OccamTask t = build_occam_task(family(), 3, kOffsets, {}, "t");
  CHECK_THROWS_AS(aggregate_rankings({}, t), std::invalid_argument);
  CHECK_THROWS_AS(aggregate_rankings({ranking("a", "other", {1, 2, 3, 4, 5, 6, 7})}, t), std::invalid_argument);
  CHECK_THROWS(aggregate_rankings({ranking("a", "t", {1, 1, 3, 4, 5, 6, 7})}, t));
}

TEST_CASE("plausibility answers are tallied") {
  const OccamTask t = build_occam_task(family(), 3, kOffsets, {}, "t");
  std::vector<RankingRecord> rs = {ranking("a", "t", {1, 2, 3, 4, 5, 6, 7}), ranking("b", "t", {1, 2, 3, 4, 5, 6, 7}),
                                   ranking("c", "t", {1, 2, 3, 4, 5, 6, 7})};
  rs[0].plausibility_answer = Plausibility::Likely;
  rs[1].plausibility_answer = Plausibility::Unlikely;
  const RankingAggregate a = aggregate_rankings(rs, t);
  CHECK(a.plausibility_answered == 2);
  CHECK(a.plausibility_likely == 1);
  CHECK(a.plausibility_likely_share == 0.5);
}
