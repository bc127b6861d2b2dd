#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <map>
#include <numeric>
#include <set>

#include "humankernel/errors.hpp"
#include "humankernel/responses.hpp"
#include "test_util.hpp"

using namespace hk;
using hk::testing::temp_dir;
namespace fs = std::filesystem;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

Stimulus grid_stimulus(int n_test) {
  Stimulus s;
  s.id = "s1";
  s.x_train = vec({0.0, 1.0, 2.0});
  s.y_train = vec({0.5, -0.25, 1.0});
  s.x_test = Eigen::VectorXd::LinSpaced(n_test, 3.0, 3.0 + 0.5 * (n_test - 1));
  return s;
}

ResponseRecord response(const std::string& pid, const Eigen::VectorXd& y, double rt = 100.0, std::int64_t at = 0) {
  return {pid, "s1", y, rt, at};
}

std::set<std::set<int>> partition(const std::vector<int>& labels, const std::vector<int>& ids) {
  std::map<int, std::set<int>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].insert(ids[i]);
  std::set<std::set<int>> out;
  for (auto& [_, g] : groups) out.insert(g);
  return out;
}

}  // namespace

TEST_CASE("to_drawset stacks responses by participant") {
  const Stimulus s = grid_stimulus(20);
  const AlignedDraws one = to_drawset(s, {response("p", Eigen::VectorXd::Ones(20))});
  CHECK(one.draws.num_draws() == 1);
  CHECK(one.warnings.empty());

  std::vector<ResponseRecord> rs;
  for (int p = 19; p >= 0; --p) rs.push_back(response("p" + std::to_string(100 + p), Eigen::VectorXd::Constant(20, p)));
  const AlignedDraws a = to_drawset(s, rs);
  CHECK(a.draws.y_test.rows() == 20);
  CHECK(a.draws.y_test.cols() == 20);
  CHECK(a.draws.y_test(0, 0) == 0.0);
  CHECK(a.draws.y_test(5, 19) == 19.0);
  CHECK(a.participants.front() == "p100");
  a.draws.validate();

  try {
    to_drawset(s, {response("bad-participant", Eigen::VectorXd::Ones(19))});
    FAIL("expected a length error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("bad-participant") != std::string::npos);
  }
  CHECK_THROWS_AS(to_drawset(s, {}), std::invalid_argument);
}

TEST_CASE("to_drawset keeps the latest duplicate") {
  const Stimulus s = grid_stimulus(2);
  const AlignedDraws a = to_drawset(s, {response("p", vec({9, 9}), 100, 20), response("p", vec({1, 1}), 100, 10),
                                        response("q", vec({2, 2}), 100, 5)});
  CHECK(a.draws.num_draws() == 2);
  CHECK(a.draws.y_test(0, 0) == 9.0);
  CHECK(a.warnings.size() == 1);
  CHECK(a.warnings[0].find("p") != std::string::npos);
}

TEST_CASE("total_variation") {
  CHECK(total_variation(vec({0, 1, 0})) == 2.0);
  CHECK(total_variation(Eigen::VectorXd::Constant(7, 2.5)) == 0.0);
  CHECK(total_variation(vec({0, 1, 2, 3})) == 3.0);
  CHECK(total_variation(vec({4.0})) == 0.0);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  for (int t = 0; t < 50; ++t) {
    Eigen::VectorXd y(10);
    for (auto& v : y) v = n(rng);
    const double c = n(rng), a = n(rng);
    CHECK(total_variation((y.array() + c).matrix()) == doctest::Approx(total_variation(y)).epsilon(1e-12));
    CHECK(total_variation(a * y) == doctest::Approx(std::abs(a) * total_variation(y)).epsilon(1e-12));
  }
}

TEST_CASE("filter_responses") {
  // tv = 2
  const auto ok = response("a", vec({0, 1, 0}), 120);
  const auto fast = response("b", vec({0, 1}), 30);
  const auto wiggly = response("c", vec({0, 5}), 100);
  const FilterResult r = filter_responses({ok, fast, wiggly});
  REQUIRE(r.pass.size() == 1);
  CHECK(r.pass[0].participant_id == "a");
  CHECK(r.fail.size() == 2);

  // inclusive bounds
  CHECK(filter_responses({response("d", vec({0, 3}), 50)}).pass.size() == 1);
  CHECK(filter_responses({response("d", vec({0, 3}), 200)}).pass.size() == 1);

  // range measure accepts a zig-zag whose total variation is large
  const auto zig = response("z", vec({0, 2, 0, 2, 0}), 100);
  CHECK(filter_responses({zig}).fail.size() == 1);
  FilterThresholds range;
  range.measure = VariationMeasure::Range;
  CHECK(filter_responses({zig}, range).pass.size() == 1);

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 300.0);
  std::vector<ResponseRecord> many;
  for (int i = 0; i < 100; ++i) many.push_back(response("p" + std::to_string(i), vec({0, u(rng) / 50.0}), u(rng) + 1));
  const FilterResult m = filter_responses(many);
  CHECK(m.pass.size() + m.fail.size() == many.size());

  FilterThresholds bad;
  bad.rt_min_s = 300;
  CHECK_THROWS_AS(filter_responses(many, bad), std::invalid_argument);
}

TEST_CASE("agglomerative clustering examples") {
  Eigen::MatrixXd p(4, 1);
  p << 0, 0.1, 10, 10.1;
  CHECK(agglomerative_cluster(p, 2) == std::vector<int>{0, 0, 1, 1});
  CHECK(agglomerative_cluster(p, 4) == std::vector<int>{0, 1, 2, 3});
  CHECK(agglomerative_cluster(p, 1) == std::vector<int>{0, 0, 0, 0});
  CHECK_THROWS_AS(agglomerative_cluster(p, 0), std::invalid_argument);
  CHECK_THROWS_AS(agglomerative_cluster(p, 5), std::invalid_argument);

  // equal distances: the smallest index pair merges first
  Eigen::MatrixXd tie(3, 1);
  tie << 0, 1, 2;
  CHECK(agglomerative_cluster(tie, 2) == std::vector<int>{0, 0, 1});
}

TEST_CASE("average linkage differs from single linkage") {
  // chain 0-1-2 plus a far point; the average distance from {0,1} to 2 is
  // 1.5, to {3} larger, so the chain joins before 3.
  Eigen::MatrixXd p(4, 1);
  p << 0, 1, 2, 10;
  CHECK(agglomerative_cluster(p, 2) == std::vector<int>{0, 0, 0, 1});
  // oracle: brute force mean pairwise distance for the first merge of two
  // clusters {0,1} and {2,3}
  Eigen::MatrixXd q(4, 1);
  q << 0, 0.5, 3.0, 3.4;
  CHECK(agglomerative_cluster(q, 2) == std::vector<int>{0, 0, 1, 1});
}

TEST_CASE("property: clustering is permutation-equivariant") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  for (int t = 0; t < 20; ++t) {
    const int rows = 12;
    Eigen::MatrixXd p(rows, 4);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < 4; ++j) p(i, j) = n(rng) + 3.0 * (i % 3);
    std::vector<int> perm(rows);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::MatrixXd q(rows, 4);
    for (int i = 0; i < rows; ++i) q.row(i) = p.row(perm[static_cast<std::size_t>(i)]);
    std::vector<int> ids(rows);
    std::iota(ids.begin(), ids.end(), 0);
    const int k = 1 + t % 5;
    CHECK(partition(agglomerative_cluster(p, k), ids) == partition(agglomerative_cluster(q, k), perm));
  }
}

TEST_CASE("record stores round trip") {
  const fs::path dir = temp_dir("stores");
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 1e3);
  std::vector<ResponseRecord> rs;
  for (int i = 0; i < 30; ++i) {
    Eigen::VectorXd y(5);
    for (auto& v : y) v = n(rng) * std::pow(10.0, i % 7 - 3);
    rs.push_back({"p" + std::to_string(i), "s" + std::to_string(i % 3), y, 1.0 / (i + 3), 1700000000000 + i});
  }
  save_responses(dir / "r.jsonl", rs);
  CHECK(load_responses(dir / "r.jsonl") == rs);

  Stimulus s = grid_stimulus(4);
  s.family = StimulusFamily::Step;
  s.generator_params = {{"step_at", 3.7}};
  s.y_range = std::make_pair(-2.0, 2.0);
  Stimulus t = grid_stimulus(3);
  t.id = "s2";
  save_stimuli(dir / "s.jsonl", {s, t});
  CHECK(load_stimuli(dir / "s.jsonl") == std::vector<Stimulus>{s, t});

  RankingRecord a{"p1", "t1", {3, 1, 2, 4, 5, 6, 7}, Plausibility::Likely, 5};
  RankingRecord b{"p2", "t1", {1, 2, 3, 4, 5, 6, 7}, std::nullopt, 6};
  save_rankings(dir / "k.jsonl", {a, b});
  CHECK(load_rankings(dir / "k.jsonl") == std::vector<RankingRecord>{a, b});

  std::ofstream(dir / "empty.jsonl").close();
  CHECK(load_responses(dir / "empty.jsonl").empty());
  CHECK(load_responses(dir / "missing.jsonl").empty());
  fs::remove_all(dir);
}

TEST_CASE("corrupt line is reported by number") {
  const fs::path dir = temp_dir("corrupt");
  const std::vector<ResponseRecord> rs = {response("a", vec({1})), response("b", vec({2})), response("c", vec({3}))};
  save_responses(dir / "r.jsonl", rs);
  std::string text = read_file(dir / "r.jsonl");
  const std::size_t second = text.find('\n', text.find('\n') + 1);
  text.insert(second + 1, "{not json\n");
  std::ofstream(dir / "r.jsonl") << text;
  try {
    load_responses(dir / "r.jsonl");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  fs::remove_all(dir);
}

TEST_CASE("torn appends are dropped and repaired") {
  const fs::path dir = temp_dir("torn");
  const fs::path f = dir / "r.jsonl";
  append_record(f, response("a", vec({1, 2})));
  append_record(f, response("b", vec({3, 4})));
  {
    std::ofstream out(f, std::ios::app);
    out << R"({"participant_id":"c","stimu)";
  }
  CHECK(load_responses(f).size() == 2);
  append_record(f, response("d", vec({5, 6})));
  const auto all = load_responses(f);
  REQUIRE(all.size() == 3);
  CHECK(all[2].participant_id == "d");
  fs::remove_all(dir);
}

TEST_CASE("record validation") {
  CHECK_THROWS_AS(nlohmann::json::parse(R"({"participant_id":"p","stimulus_id":"s","y_star":[1],"response_time_s":0})")
                      .get<ResponseRecord>(),
                  std::invalid_argument);
  CHECK_THROWS(nlohmann::json::parse(R"({"participant_id":"p","task_id":"t","order":[1,2,3,4,5,6,6]})")
                   .get<RankingRecord>());
  Stimulus s = grid_stimulus(3);
  s.x_test[0] = 2.0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = grid_stimulus(3);
  s.x_test[1] = s.x_test[0];
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("responses CSV export") {
  Stimulus s = grid_stimulus(2);
  const std::string csv = responses_csv({s}, {response("p,1", vec({0.25, -1}), 42.5)});
  CHECK(csv ==
        "participant_id,stimulus_id,x,y,response_time_s\n"
        "\"p,1\",s1,3,0.25,42.5\n"
        "\"p,1\",s1,3.5,-1,42.5\n");
  CHECK_THROWS(responses_csv({}, {response("p", vec({0, 1}))}));
}
