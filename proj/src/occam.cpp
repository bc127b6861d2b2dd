#include "humankernel/occam.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "humankernel/format.hpp"
#include "humankernel/rng.hpp"

namespace hk {

using nlohmann::json;

namespace {

void check_offsets(const std::vector<double>& offsets) {
  if (offsets.size() != static_cast<std::size_t>(kOccamCandidates - 2))
    throw std::invalid_argument("occam: exactly five length-scale offsets are required");
  bool pos = false, neg = false;
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    if (!std::isfinite(offsets[i])) throw std::invalid_argument("occam: offsets must be finite");
    if (i > 0 && !(offsets[i] < offsets[i - 1])) throw std::invalid_argument("occam: offsets must be strictly decreasing");
    pos = pos || offsets[i] > 0.0;
    neg = neg || offsets[i] < 0.0;
  }
  if (!pos || !neg) throw std::invalid_argument("occam: offsets must include positive and negative values");
}

GPModel with_log_ls(GPModel m, double log_ls) {
  Rbf k = m.kernel.as<Rbf>();
  k.log_lengthscale = log_ls;
  m.kernel = k;
  return m;
}

// Labels 1..7 from a label-1 model.
std::vector<GPModel> candidates_from(const GPModel& ml, const GPModel& generating, const std::vector<double>& offsets) {
  std::vector<GPModel> c = {ml, generating};
  const double base = ml.kernel.as<Rbf>().log_lengthscale;
  for (double off : offsets) c.push_back(with_log_ls(ml, base + off));
  return c;
}

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vec_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

double sample_sd(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

std::vector<int> OccamTask::lml_ranks() const {
  std::vector<std::size_t> idx(lml.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return lml[a] > lml[b]; });
  std::vector<int> ranks(lml.size());
  for (std::size_t r = 0; r < idx.size(); ++r) ranks[idx[r]] = static_cast<int>(r) + 1;
  return ranks;
}

bool OccamTask::monotone_in_negative_offsets() const {
  std::vector<std::pair<double, double>> neg;  // (offset, lml)
  for (std::size_t i = 0; i < log_ls_offsets.size(); ++i)
    if (log_ls_offsets[i] < 0.0) neg.emplace_back(log_ls_offsets[i], lml[i + 2]);
  std::sort(neg.begin(), neg.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 1; i < neg.size(); ++i)
    if (!(neg[i].second < neg[i - 1].second)) return false;
  return true;
}

void to_json(json& j, const OccamTask& t) {
  json curves = json::array(), configs = json::array();
  for (const auto& c : t.candidate_curves) curves.push_back(vec_json(c));
  for (const auto& m : t.candidate_configs) configs.push_back(m);
  j = {{"id", t.id},
       {"seed", t.seed},
       {"x", vec_json(t.x)},
       {"y", vec_json(t.y)},
       {"display_x", vec_json(t.display_x)},
       {"candidate_curves", std::move(curves)},
       {"candidate_configs", std::move(configs)},
       {"log_ls_offsets", t.log_ls_offsets},
       {"lml", t.lml},
       {"refits", t.refits}};
}

void from_json(const json& j, OccamTask& t) {
  t.id = j.at("id").get<std::string>();
  t.seed = j.value("seed", std::uint64_t{0});
  t.x = vec_from(j.at("x"));
  t.y = vec_from(j.at("y"));
  t.display_x = vec_from(j.at("display_x"));
  t.candidate_curves.clear();
  for (const auto& c : j.at("candidate_curves")) t.candidate_curves.push_back(vec_from(c));
  t.candidate_configs = j.at("candidate_configs").get<std::vector<GPModel>>();
  t.log_ls_offsets = j.at("log_ls_offsets").get<std::vector<double>>();
  t.lml = j.at("lml").get<std::vector<double>>();
  t.refits = j.value("refits", 0);
  if (t.id.empty()) throw std::invalid_argument("occam task id is empty");
  if (t.x.size() != t.y.size() || t.x.size() < 1) throw std::invalid_argument("occam task: x and y differ in length");
  if (t.candidate_curves.size() != static_cast<std::size_t>(kOccamCandidates) ||
      t.candidate_configs.size() != static_cast<std::size_t>(kOccamCandidates) ||
      t.lml.size() != static_cast<std::size_t>(kOccamCandidates))
    throw std::invalid_argument("occam task: exactly seven candidates are required");
  for (const auto& c : t.candidate_curves)
    if (c.size() != t.display_x.size()) throw std::invalid_argument("occam task: curve length differs from display_x");
}

OccamTask build_occam_task(const GPModel& family, std::uint64_t seed, const std::vector<double>& offsets,
                           const OccamTaskOptions& opts, const std::string& id) {
  if (!family.kernel.is<Rbf>()) throw std::invalid_argument("occam: the candidate family must be RBF");
  validate(family.kernel);
  check_offsets(offsets);
  if (!(opts.domain_hi > opts.domain_lo) || opts.subsample < 2 || opts.pool_points < opts.subsample ||
      opts.display_points < 2)
    throw std::invalid_argument("occam: invalid task geometry");

  OccamTask t;
  t.id = id;
  t.seed = seed;
  t.log_ls_offsets = offsets;
  GPModel generating = family;
  generating.noise_frozen = true;
  const Eigen::VectorXd pool = Eigen::VectorXd::LinSpaced(opts.pool_points, opts.domain_lo, opts.domain_hi);
  const Eigen::VectorXd f = sample_prior(generating, pool, 1, derive_seed(seed, 0)).col(0);
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(pool.size()));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, 1));
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(static_cast<std::size_t>(opts.subsample));
  std::sort(idx.begin(), idx.end());
  t.x.resize(opts.subsample);
  t.y.resize(opts.subsample);
  for (int i = 0; i < opts.subsample; ++i) {
    t.x[i] = pool[idx[static_cast<std::size_t>(i)]];
    t.y[i] = f[idx[static_cast<std::size_t>(i)]];
  }

  GPModel templ = family;
  templ.noise_frozen = !opts.learn_noise;
  GPModel ml = fit_data_kernel(templ, t.x, t.y, opts.fit.options(derive_seed(seed, 2), Objective::DataML)).best_model;

  auto evaluate = [&](const std::vector<GPModel>& c) {
    std::vector<double> l;
    for (const auto& m : c) l.push_back(log_marginal_likelihood(m, t.x, t.y));
    return l;
  };
  std::vector<GPModel> cands = candidates_from(ml, generating, offsets);
  std::vector<double> lml = evaluate(cands);
  // Label 1 must maximize the likelihood over the family; when another
  // candidate does better the optimizer missed it, so continue from there.
  for (int round = 0; round < 20; ++round) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < lml.size(); ++k)
      if (lml[k] > lml[best]) best = k;
    if (best == 0) break;
    GPModel start = cands[best];
    start.noise_frozen = templ.noise_frozen;
    FitOptions o = opts.fit.options(derive_seed(seed, 3 + static_cast<std::uint64_t>(round)), Objective::DataML);
    o.restarts = 1;
    const FitReport refit = fit_data_kernel(start, t.x, t.y, o);
    ml = refit.best_objective >= lml[best] ? refit.best_model : cands[best];
    ml.noise_frozen = templ.noise_frozen;
    cands = candidates_from(ml, generating, offsets);
    lml = evaluate(cands);
    ++t.refits;
  }

  t.candidate_configs = cands;
  t.lml = lml;
  t.display_x = Eigen::VectorXd::LinSpaced(opts.display_points, opts.domain_lo, opts.domain_hi);
  for (const auto& m : cands) t.candidate_curves.push_back(posterior_predictive(m, t.x, t.y, t.display_x).mean);
  return t;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("spearman: need two equal-length vectors");
  const std::vector<double> ra = average_ranks(a), rb = average_ranks(b);
  const Eigen::Map<const Eigen::VectorXd> x(ra.data(), static_cast<Eigen::Index>(ra.size()));
  const Eigen::Map<const Eigen::VectorXd> y(rb.data(), static_cast<Eigen::Index>(rb.size()));
  const Eigen::VectorXd xc = x.array() - x.mean(), yc = y.array() - y.mean();
  const double den = xc.norm() * yc.norm();
  return den > 0.0 ? xc.dot(yc) / den : std::numeric_limits<double>::quiet_NaN();
}

RankingAggregate aggregate_rankings(const std::vector<RankingRecord>& rankings, const OccamTask& task) {
  if (rankings.empty()) throw std::invalid_argument("aggregate_rankings: no rankings");
  RankingAggregate a;
  a.n = static_cast<int>(rankings.size());
  const double n = static_cast<double>(a.n);
  std::array<std::vector<double>, kOccamCandidates> ranks;
  std::array<std::vector<double>, kOccamCandidates> first;
  for (const auto& r : rankings) {
    if (r.task_id != task.id)
      throw std::invalid_argument("aggregate_rankings: ranking for task " + r.task_id + ", expected " + task.id);
    r.validate();
    for (std::size_t pos = 0; pos < r.order.size(); ++pos) {
      const std::size_t label = static_cast<std::size_t>(r.order[pos] - 1);
      ranks[label].push_back(static_cast<double>(pos + 1));
      first[label].push_back(pos == 0 ? 1.0 : 0.0);
    }
    if (r.order[0] >= 1) ++a.first_place_votes[static_cast<std::size_t>(r.order[0] - 1)];
    if (r.plausibility_answer) {
      ++a.plausibility_answered;
      if (*r.plausibility_answer == Plausibility::Likely) ++a.plausibility_likely;
    }
  }
  const std::vector<int> lr = task.lml_ranks();
  for (std::size_t l = 0; l < static_cast<std::size_t>(kOccamCandidates); ++l) {
    a.first_place_share[l] = a.first_place_votes[l] / n;
    a.first_place_share_se[l] = sample_sd(first[l], a.first_place_share[l]) / std::sqrt(n);
    a.mean_rank[l] = std::accumulate(ranks[l].begin(), ranks[l].end(), 0.0) / n;
    a.rank_sd[l] = sample_sd(ranks[l], a.mean_rank[l]);
    a.rank_se[l] = a.rank_sd[l] / std::sqrt(n);
    a.lml_rank[l] = lr[l];
  }
  a.spearman_mean_rank_vs_lml = spearman(std::vector<double>(a.mean_rank.begin(), a.mean_rank.end()),
                                         std::vector<double>(a.lml_rank.begin(), a.lml_rank.end()));
  a.plausibility_likely_share =
      a.plausibility_answered ? static_cast<double>(a.plausibility_likely) / a.plausibility_answered : 0.0;
  return a;
}

Table RankingAggregate::to_table(const std::string& name) const {
  Table t{name,
          {"label", "first_place_votes", "first_place_share", "first_place_share_se", "mean_rank", "rank_sd", "rank_se",
           "lml_rank"},
          {}};
  for (std::size_t l = 0; l < static_cast<std::size_t>(kOccamCandidates); ++l)
    t.add_row({static_cast<std::int64_t>(l + 1), std::int64_t{first_place_votes[l]}, first_place_share[l],
               first_place_share_se[l], mean_rank[l], rank_sd[l], rank_se[l], std::int64_t{lml_rank[l]}});
  return t;
}

void OccamConfig::validate() const {
  if (!family.kernel.is<Rbf>()) throw std::invalid_argument("occam: the candidate family must be RBF");
  hk::validate(family.kernel);
  check_offsets(offsets);
  if (tasks < 1) throw std::invalid_argument("occam: tasks must be >= 1");
}

std::string occam_task_id(int index) {
  std::string s = std::to_string(index + 1);
  if (s.size() < 2) s.insert(0, 1, '0');
  return "occam-" + s;
}

OccamResult run_occam(const OccamConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  OccamResult res;
  res.report.experiment = "occam";
  Table rows{"occam_tasks", {"task", "label", "log_ls_offset", "log_lengthscale", "log_signal_var", "lml", "lml_rank"}, {}};
  int rank1 = 0, monotone = 0;
  std::array<double, kOccamCandidates> rank_sum{};
  for (int i = 0; i < cfg.tasks; ++i) {
    OccamTask t = build_occam_task(cfg.family, derive_seed(seed, static_cast<std::uint64_t>(i)), cfg.offsets, cfg.task,
                                   occam_task_id(i));
    const std::vector<int> r = t.lml_ranks();
    rank1 += r[0] == 1;
    monotone += t.monotone_in_negative_offsets();
    for (std::size_t l = 0; l < r.size(); ++l) {
      rank_sum[l] += r[l];
      const Rbf& k = t.candidate_configs[l].kernel.as<Rbf>();
      rows.add_row({t.id, static_cast<std::int64_t>(l + 1), l >= 2 ? Cell{t.log_ls_offsets[l - 2]} : Cell{std::string()},
                    k.log_lengthscale, k.log_signal_var, t.lml[l], std::int64_t{r[l]}});
    }
    res.tasks.push_back(std::move(t));
  }
  res.label1_rank1_fraction = static_cast<double>(rank1) / cfg.tasks;
  res.monotone_fraction = static_cast<double>(monotone) / cfg.tasks;
  Table mean_ranks{"occam_label_ranks", {"label", "mean_lml_rank"}, {}};
  for (std::size_t l = 0; l < rank_sum.size(); ++l) {
    res.mean_lml_rank[l] = rank_sum[l] / cfg.tasks;
    mean_ranks.add_row({static_cast<std::int64_t>(l + 1), res.mean_lml_rank[l]});
  }
  res.report.tables.push_back(std::move(rows));
  res.report.tables.push_back(std::move(mean_ranks));

  const OccamTask& first = res.tasks.front();
  std::vector<std::string> names = {"x"};
  std::vector<Eigen::VectorXd> cols = {first.display_x};
  LinePlot plot{"occam_task_curves", "Candidate fits for " + first.id, "x", "y", {{"data", first.x, first.y, true}}};
  for (int l = 0; l < kOccamCandidates; ++l) {
    names.push_back("label_" + std::to_string(l + 1));
    cols.push_back(first.candidate_curves[static_cast<std::size_t>(l)]);
    plot.series.push_back({"label " + std::to_string(l + 1), first.display_x, first.candidate_curves[static_cast<std::size_t>(l)]});
  }
  res.report.tables.push_back(columns_table("occam_task_curves", names, cols));
  res.report.tables.push_back(columns_table("occam_task_data", {"x", "y"}, {first.x, first.y}));
  res.report.plots.push_back(std::move(plot));

  if (cfg.rankings_file) {
    std::map<std::string, const OccamTask*> by_id;
    std::vector<OccamTask> loaded;
    if (cfg.tasks_file) {
      loaded = load_records<OccamTask>(*cfg.tasks_file);
      for (const auto& t : loaded) by_id[t.id] = &t;
    } else {
      for (const auto& t : res.tasks) by_id[t.id] = &t;
    }
    std::map<std::string, std::vector<RankingRecord>> grouped;
    for (auto& r : load_rankings(*cfg.rankings_file)) grouped[r.task_id].push_back(std::move(r));
    json aj = json::array();
    for (const auto& [task_id, recs] : grouped) {
      const auto it = by_id.find(task_id);
      if (it == by_id.end()) throw std::invalid_argument("rankings reference unknown task " + task_id);
      const RankingAggregate a = aggregate_rankings(recs, *it->second);
      res.report.tables.push_back(a.to_table("rankings_" + task_id));
      aj.push_back({{"task", task_id},
                    {"n", a.n},
                    {"label1_first_place_share", a.first_place_share[0]},
                    {"spearman_mean_rank_vs_lml", a.spearman_mean_rank_vs_lml},
                    {"plausibility_likely_share", a.plausibility_likely_share}});
      res.aggregates.emplace_back(task_id, a);
    }
    res.report.summary["rankings"] = std::move(aj);
  }

  res.report.summary["tasks"] = cfg.tasks;
  res.report.summary["label1_rank1_fraction"] = res.label1_rank1_fraction;
  res.report.summary["monotone_fraction"] = res.monotone_fraction;
  res.report.summary["mean_lml_rank"] = res.mean_lml_rank;
  return res;
}

}  // namespace hk
