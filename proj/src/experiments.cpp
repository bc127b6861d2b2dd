#include "humankernel/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

#include <boost/math/distributions/students_t.hpp>

#include "humankernel/errors.hpp"
#include "humankernel/format.hpp"
#include "humankernel/rng.hpp"

namespace hk {

namespace {

Eigen::VectorXd sorted_uniform(int n, double lo, double hi, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = u(rng);
  std::sort(v.begin(), v.end());
  return Eigen::Map<Eigen::VectorXd>(v.data(), n);
}

double variance(const Eigen::VectorXd& v) {
  return v.size() < 2 ? 0.0 : (v.array() - v.mean()).square().mean();
}

double pooled_variance(const Eigen::VectorXd& y, const Eigen::MatrixXd& draws) {
  Eigen::VectorXd all(y.size() + draws.size());
  all << y, Eigen::Map<const Eigen::VectorXd>(draws.data(), draws.size());
  const double v = variance(all);
  return v > 0.0 ? v : 1.0;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double min_gap(const Eigen::VectorXd& x) {
  double g = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 1; i < x.size(); ++i) g = std::min(g, x[i] - x[i - 1]);
  return g;
}

GPModel model_of(const KernelSpec& k, double noise_var, bool frozen = false) {
  return GPModel{k, std::log(noise_var), frozen};
}

// SM template for learning from a draw set: restart 0 of the fit starts here.
GPModel sm_learner(const DrawSet& d, int q, double nyquist, std::uint64_t seed) {
  Eigen::VectorXd all_x(d.x_train.size() + d.x_test.size());
  all_x << d.x_train, d.x_test;
  const double x_range = all_x.maxCoeff() - all_x.minCoeff();
  const double yv = pooled_variance(d.y_train, d.y_test);
  return model_of(default_sm_init(x_range, yv, nyquist, q, seed), 0.01 * yv);
}

// Caps for SM fits to a draw set: no frequency above the test-grid Nyquist,
// no envelope longer than the span of all inputs, and no component weight
// above kMaxWeightRatio times the pooled target variance.
constexpr double kMaxWeightRatio = 10.0;

void cap_sm(FitOptions& opts, const DrawSet& d, double nyquist) {
  opts.max_frequency = nyquist;
  opts.max_weight = kMaxWeightRatio * pooled_variance(d.y_train, d.y_test);
  opts.max_envelope = std::max(d.x_train.maxCoeff(), d.x_test.maxCoeff()) - std::min(d.x_train.minCoeff(), d.x_test.minCoeff());
}

std::string idx_name(const std::string& prefix, int i, int width = 2) {
  std::string s = std::to_string(i);
  if (static_cast<int>(s.size()) < width) s.insert(0, static_cast<std::size_t>(width) - s.size(), '0');
  return prefix + s;
}

double upper_triangle_correlation(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  std::vector<double> u, v;
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i <= j; ++i) {
      u.push_back(a(i, j));
      v.push_back(b(i, j));
    }
  const Eigen::Map<Eigen::VectorXd> x(u.data(), static_cast<Eigen::Index>(u.size()));
  const Eigen::Map<Eigen::VectorXd> y(v.data(), static_cast<Eigen::Index>(v.size()));
  const Eigen::VectorXd xc = x.array() - x.mean(), yc = y.array() - y.mean();
  const double den = xc.norm() * yc.norm();
  return den > 0.0 ? xc.dot(yc) / den : 0.0;
}

Cell opt_cell(const std::optional<double>& v) { return v ? Cell{*v} : Cell{std::string()}; }

// Same columns as the response export.
Table responses_table(const std::string& name, const std::vector<Stimulus>& stimuli,
                      const std::vector<ResponseRecord>& responses) {
  Table t{name, {"participant_id", "stimulus_id", "x", "y", "response_time_s"}, {}};
  std::map<std::string, const Stimulus*> by_id;
  for (const auto& s : stimuli) by_id[s.id] = &s;
  for (const auto& r : responses) {
    const Stimulus& s = *by_id.at(r.stimulus_id);
    for (Eigen::Index i = 0; i < s.x_test.size(); ++i)
      t.add_row({r.participant_id, r.stimulus_id, s.x_test[i], r.y_star[i], r.response_time_s});
  }
  return t;
}

}  // namespace

// ------------------------------------------------------------------- stimuli

void StimulusGrid::validate() const {
  if (!(hi > lo) || n_train < 2) throw std::invalid_argument("grid: need lo < hi and at least two training points");
  if (!(test_hi > hi) || n_test < 1) throw std::invalid_argument("grid: need test_hi > hi and at least one test point");
}

Eigen::VectorXd StimulusGrid::train_inputs() const { return Eigen::VectorXd::LinSpaced(n_train, lo, hi); }

Eigen::VectorXd StimulusGrid::test_inputs() const {
  const double step = (test_hi - hi) / n_test;
  Eigen::VectorXd x(n_test);
  for (int i = 0; i < n_test; ++i) x[i] = hi + step * (i + 1);
  x[n_test - 1] = test_hi;
  return x;
}

double sawtooth_value(double x, double period, double amplitude) {
  const double r = x / period;
  double f = r - std::floor(r);
  if (f >= 1.0) f = 0.0;  // rounding of tiny negative r
  return amplitude * f;
}

Stimulus make_sawtooth(const std::string& id, double period, double amplitude, const StimulusGrid& grid) {
  if (!(period > 0.0)) throw std::invalid_argument("make_sawtooth: period must be positive");
  if (!(amplitude > 0.0)) throw std::invalid_argument("make_sawtooth: amplitude must be positive");
  grid.validate();
  Stimulus s;
  s.id = id;
  s.family = StimulusFamily::Sawtooth;
  s.x_train = grid.train_inputs();
  s.x_test = grid.test_inputs();
  s.y_train = s.x_train.unaryExpr([&](double x) { return sawtooth_value(x, period, amplitude); });
  s.generator_params = {{"period", period}, {"amplitude", amplitude}};
  s.y_range = std::make_pair(-0.5 * amplitude, 1.5 * amplitude);
  s.validate();
  return s;
}

double step_value(double x, const std::vector<double>& breakpoints, const std::vector<double>& levels) {
  const auto it = std::upper_bound(breakpoints.begin(), breakpoints.end(), x);
  return levels[static_cast<std::size_t>(it - breakpoints.begin())];
}

Stimulus make_step(const std::string& id, const std::vector<double>& breakpoints, const std::vector<double>& levels,
                   const StimulusGrid& grid) {
  grid.validate();
  if (levels.size() != breakpoints.size() + 1) throw std::invalid_argument("make_step: need one more level than breakpoints");
  for (std::size_t i = 0; i < breakpoints.size(); ++i) {
    if (!(breakpoints[i] > grid.lo && breakpoints[i] < grid.test_hi))
      throw std::invalid_argument("make_step: breakpoints must lie inside the domain");
    if (i > 0 && !(breakpoints[i] > breakpoints[i - 1]))
      throw std::invalid_argument("make_step: breakpoints must be strictly increasing");
  }
  for (double l : levels)
    if (!std::isfinite(l)) throw std::invalid_argument("make_step: levels must be finite");
  Stimulus s;
  s.id = id;
  s.family = StimulusFamily::Step;
  s.x_train = grid.train_inputs();
  s.x_test = grid.test_inputs();
  s.y_train = s.x_train.unaryExpr([&](double x) { return step_value(x, breakpoints, levels); });
  s.generator_params = {{"breakpoints", breakpoints}, {"levels", levels}};
  const auto [lo, hi] = std::minmax_element(levels.begin(), levels.end());
  const double pad = std::max(1.0, *hi - *lo);
  s.y_range = std::make_pair(*lo - pad, *hi + pad);
  s.validate();
  return s;
}

// ----------------------------------------------------------------- utilities

double normalized_l2(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw std::invalid_argument("normalized_l2: vectors differ in length");
  const double den = b.norm();
  if (!(den > 0.0)) throw std::invalid_argument("normalized_l2: reference has zero norm");
  return (a - b).norm() / den;
}

Eigen::VectorXd kernel_slice(const KernelSpec& spec, double x0, const Eigen::VectorXd& taus) {
  Eigen::VectorXd out(taus.size());
  for (Eigen::Index i = 0; i < taus.size(); ++i) out[i] = eval_kernel(spec, x0, x0 + taus[i]);
  return out;
}

std::vector<double> spectral_modes(const KernelSpec& spec, double f_max, int points) {
  const Eigen::VectorXd f = Eigen::VectorXd::LinSpaced(points, 0.0, f_max);
  Eigen::VectorXd s(points);
  for (int i = 0; i < points; ++i) s[i] = sm_spectral_density(spec, f[i]);
  std::vector<double> modes;
  for (int i = 0; i < points; ++i) {
    const bool left = i == 0 || s[i] > s[i - 1];
    const bool right = i == points - 1 || s[i] >= s[i + 1];
    if (left && right && s[i] > 1e-12 * s.maxCoeff()) modes.push_back(f[i]);
  }
  return modes;
}

FitOptions FitSettings::options(std::uint64_t seed, Objective objective) const {
  FitOptions o;
  o.restarts = restarts;
  o.max_iters = max_iters;
  o.grad_tol = grad_tol;
  o.seed = seed;
  o.objective = objective;
  return o;
}

// --------------------------------------------------------------- reconstruct

void ReconstructionConfig::validate() const {
  hk::validate(data_kernel);
  hk::validate(prediction_kernel);
  if (!prediction_kernel.is<SpectralMixture>()) throw std::invalid_argument("reconstruct: prediction kernel must be SM");
  if (n_train < 2 || n_test < 1) throw std::invalid_argument("reconstruct: need n_train >= 2 and n_test >= 1");
  if (!(train_hi > train_lo) || !(test_hi > train_hi)) throw std::invalid_argument("reconstruct: bad input domain");
  if (draws.empty()) throw std::invalid_argument("reconstruct: W list is empty");
  for (int w : draws)
    if (w < 1) throw std::invalid_argument("reconstruct: every W must be >= 1");
  if (learner_components < 1 || trials < 1 || tau_points < 2 || !(tau_max > 0.0))
    throw std::invalid_argument("reconstruct: learner_components, trials, tau grid must be positive");
  if (!(data_noise_var > 0.0) || !(prediction_noise_var > 0.0))
    throw std::invalid_argument("reconstruct: noise variances must be positive");
}

ReconstructionResult run_reconstruction(const ReconstructionConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ReconstructionResult res;
  res.draws = cfg.draws;
  res.report.experiment = "reconstruct";
  const int nw = static_cast<int>(cfg.draws.size());
  const int max_w = *std::max_element(cfg.draws.begin(), cfg.draws.end());
  res.errors.resize(cfg.trials, nw);

  const Eigen::VectorXd taus = Eigen::VectorXd::LinSpaced(cfg.tau_points, 0.0, cfg.tau_max);
  const Eigen::VectorXd k_pred = kernel_curve(cfg.prediction_kernel, taus);
  const Eigen::VectorXd k_data = kernel_curve(cfg.data_kernel, taus);
  const Eigen::VectorXd x_test = StimulusGrid{cfg.train_lo, cfg.train_hi, 2, cfg.test_hi, cfg.n_test}.test_inputs();
  const double nyquist = 0.5 / min_gap(x_test.size() > 1 ? x_test : Eigen::VectorXd::LinSpaced(2, 0.0, 1.0));
  double hf_mode = 0.0;
  for (const auto& c : cfg.prediction_kernel.as<SpectralMixture>().components)
    hf_mode = std::max(hf_mode, std::exp(c.log_frequency));

  Table errors{"reconstruction_errors", {"trial", "W", "normalized_l2", "objective", "hf_mode_rel_error"}, {}};
  for (int t = 0; t < cfg.trials; ++t) {
    const std::uint64_t ts = derive_seed(seed, static_cast<std::uint64_t>(t));
    const Eigen::VectorXd x = sorted_uniform(cfg.n_train, cfg.train_lo, cfg.train_hi, derive_seed(ts, 0));
    const Eigen::VectorXd y = sample_prior(model_of(cfg.data_kernel, cfg.data_noise_var), x, 1, derive_seed(ts, 1));
    const DrawSet all = sample_posterior(model_of(cfg.prediction_kernel, cfg.prediction_noise_var), x, y, x_test, max_w,
                                         derive_seed(ts, 2), true);
    for (int wi = 0; wi < nw; ++wi) {
      const int w = cfg.draws[static_cast<std::size_t>(wi)];
      DrawSet d = all;
      d.y_test = all.y_test.leftCols(w);  // W draws are nested in the larger sets
      const GPModel templ = sm_learner(d, cfg.learner_components, nyquist, derive_seed(ts, 3));
      FitOptions opts = cfg.fit.options(derive_seed(ts, 10 + static_cast<std::uint64_t>(wi)), Objective::PredictionML);
      cap_sm(opts, d, nyquist);
      const FitReport fit = fit_prediction_kernel(templ, d, opts);
      const KernelSpec& learned = fit.best_spec();
      const Eigen::VectorXd k_learned = kernel_curve(learned, taus);
      const double err = normalized_l2(k_learned, k_pred);
      res.errors(t, wi) = err;
      double hf_err = std::numeric_limits<double>::infinity();
      for (double m : spectral_modes(learned, nyquist)) hf_err = std::min(hf_err, std::abs(m - hf_mode) / hf_mode);
      errors.add_row({std::int64_t{t}, std::int64_t{w}, err, fit.best_objective, hf_err});

      if (t == 0) {
        res.learned.push_back(learned);
        const std::string name = "kernel_curves_W" + std::to_string(w);
        res.report.tables.push_back(
            columns_table(name, {"tau", "k_learned", "k_prediction", "k_data"}, {taus, k_learned, k_pred, k_data}));
        res.report.plots.push_back({name,
                                    "Learned kernel from W=" + std::to_string(w) + " draws",
                                    "tau",
                                    "k(tau)",
                                    {{"learned SM", taus, k_learned}, {"prediction", taus, k_pred}, {"data", taus, k_data}}});
        const Eigen::VectorXd freqs = Eigen::VectorXd::LinSpaced(401, 0.0, nyquist);
        Eigen::VectorXd s_l(freqs.size()), s_p(freqs.size());
        for (Eigen::Index i = 0; i < freqs.size(); ++i) {
          s_l[i] = sm_spectral_density(learned, freqs[i]);
          s_p[i] = sm_spectral_density(cfg.prediction_kernel, freqs[i]);
        }
        res.report.tables.push_back(columns_table("spectrum_W" + std::to_string(w), {"frequency", "s_learned", "s_prediction"},
                                                  {freqs, s_l, s_p}));
      }
    }
    if (t == 0) {
      res.report.tables.push_back(columns_table("training_data", {"x", "y"}, {x, y}));
      std::vector<std::string> names = {"x"};
      std::vector<Eigen::VectorXd> cols = {x_test};
      for (int j = 0; j < max_w; ++j) {
        names.push_back(idx_name("draw_", j + 1));
        cols.push_back(all.y_test.col(j));
      }
      res.report.tables.push_back(columns_table("posterior_draws", names, cols));
      LinePlot p{"posterior_draws", "Training data and posterior draws", "x", "y", {{"training", x, y, true}}};
      for (int j = 0; j < std::min(max_w, 5); ++j) p.series.push_back({idx_name("draw ", j + 1), x_test, all.y_test.col(j)});
      res.report.plots.push_back(std::move(p));
    }
  }
  res.report.tables.push_back(std::move(errors));

  Table med{"reconstruction_summary", {"W", "median_normalized_l2"}, {}};
  nlohmann::json js = nlohmann::json::array();
  for (int wi = 0; wi < nw; ++wi) {
    const Eigen::VectorXd col = res.errors.col(wi);
    const double m = median(std::vector<double>(col.data(), col.data() + col.size()));
    res.median_errors.push_back(m);
    med.add_row({std::int64_t{cfg.draws[static_cast<std::size_t>(wi)]}, m});
    js.push_back({{"W", cfg.draws[static_cast<std::size_t>(wi)]}, {"median_normalized_l2", m}});
  }
  res.report.tables.push_back(std::move(med));
  res.report.summary["trials"] = cfg.trials;
  res.report.summary["median_errors"] = js;
  return res;
}

// --------------------------------------------------------------- progressive

KernelSpec jitter_kernel(const KernelSpec& spec, double sd, std::uint64_t seed) {
  Rng rng(seed);
  const Eigen::VectorXd z = standard_normal(static_cast<Eigen::Index>(spec.num_params()), 1, rng);
  return unflatten_params(spec, flatten_params(spec) + sd * z);
}

void ProgressiveConfig::validate() const {
  for (const StimulusSetConfig* s : {&set_a, &set_b}) {
    hk::validate(s->truth);
    s->grid.validate();
    if (s->stimuli < 2 || s->responders < 1) throw std::invalid_argument("progressive: need >= 2 stimuli and >= 1 responder");
    if (!(s->noise_var > 0.0)) throw std::invalid_argument("progressive: noise variance must be positive");
  }
  if (!(jitter_std >= 0.0) || !(adaptation > 0.0 && adaptation <= 1.0))
    throw std::invalid_argument("progressive: jitter_std >= 0 and adaptation in (0, 1] required");
  if (!(responder_noise_var > 0.0) || learner_components < 1 || tau_points < 2 || !(tau_max > 0.0))
    throw std::invalid_argument("progressive: invalid responder noise, learner size or tau grid");
}

namespace {

struct SetOutcome {
  std::vector<double> learned_error;
  double cov_correlation = 0.0;
};

SetOutcome run_stimulus_set(const StimulusSetConfig& set, const ProgressiveConfig& cfg, std::uint64_t seed,
                            bool covariance, Report& report, Table& errors) {
  SetOutcome out;
  const Eigen::VectorXd x = set.grid.train_inputs();
  const Eigen::VectorXd xs = set.grid.test_inputs();
  const double nyquist = 0.5 / min_gap(xs.size() > 1 ? xs : x);
  const Eigen::VectorXd taus = Eigen::VectorXd::LinSpaced(cfg.tau_points, 0.0, cfg.tau_max);
  const Eigen::VectorXd k_truth = kernel_slice(set.truth, set.grid.hi, taus);
  const GPModel truth = model_of(set.truth, set.noise_var);

  const std::vector<Stimulus> stimuli = make_progressive_stimuli(set, seed);

  Eigen::MatrixXd pooled(xs.size(), 0);
  std::vector<ResponseRecord> all_responses;
  for (int p = 0; p < set.stimuli; ++p) {
    const Stimulus& s = stimuli[static_cast<std::size_t>(p)];
    std::vector<ResponseRecord> responses;
    const double sd = cfg.jitter_std * std::pow(cfg.adaptation, p);
    for (int j = 0; j < set.responders; ++j) {
      const KernelSpec k = jitter_kernel(set.truth, sd, derive_seed(seed, 1000 + static_cast<std::uint64_t>(j)));
      const DrawSet d = sample_posterior(model_of(k, cfg.responder_noise_var), x, s.y_train, xs, 1,
                                         derive_seed(seed, 10000 + 1000 * static_cast<std::uint64_t>(p) + j), true);
      responses.push_back({idx_name("r", j + 1), s.id, d.y_test.col(0), 60.0 + 2.0 * j, p});
    }
    const AlignedDraws aligned = to_drawset(s, responses);
    all_responses.insert(all_responses.end(), responses.begin(), responses.end());

    const GPModel templ = sm_learner(aligned.draws, cfg.learner_components, nyquist, derive_seed(seed, 200 + p));
    FitOptions opts = cfg.fit.options(derive_seed(seed, 300 + static_cast<std::uint64_t>(p)), Objective::PredictionML);
    cap_sm(opts, aligned.draws, nyquist);
    const FitReport fit = fit_prediction_kernel(templ, aligned.draws, opts);
    const Eigen::VectorXd k_learned = kernel_curve(fit.best_spec(), taus);

    GPModel rbf = model_of(KernelSpec::rbf(1.0, std::max(variance(s.y_train), 1e-3)), 0.1 * std::max(variance(s.y_train), 1e-3));
    const FitReport rfit = fit_data_kernel(rbf, x, s.y_train, cfg.fit.options(derive_seed(seed, 400 + p), Objective::DataML));
    const Eigen::VectorXd k_rbf = kernel_curve(rfit.best_spec(), taus);

    const double e_learned = normalized_l2(k_learned, k_truth);
    out.learned_error.push_back(e_learned);
    errors.add_row({set.name, std::int64_t{p + 1}, e_learned, normalized_l2(k_rbf, k_truth)});

    const std::string name = "progressive_" + set.name + "_stim" + std::to_string(p + 1);
    report.tables.push_back(columns_table(name, {"tau", "k_learned", "k_truth", "k_rbf"}, {taus, k_learned, k_truth, k_rbf}));
    report.plots.push_back({name,
                            "Set " + set.name + ", stimulus " + std::to_string(p + 1),
                            "tau",
                            "k(tau)",
                            {{"learned", taus, k_learned}, {"truth", taus, k_truth}, {"RBF (data only)", taus, k_rbf}}});

    if (covariance) {
      // responses centred on their stimulus mean; the posterior covariance
      // depends on the inputs only, which every stimulus shares
      const Eigen::MatrixXd c = aligned.draws.y_test.colwise() - aligned.draws.y_test.rowwise().mean();
      pooled.conservativeResize(Eigen::NoChange, pooled.cols() + c.cols());
      pooled.rightCols(c.cols()) = c;
    }
  }
  report.tables.push_back(responses_table("progressive_" + set.name + "_responses", stimuli, all_responses));

  if (covariance) {
    const Eigen::MatrixXd emp = pooled * pooled.transpose() / static_cast<double>(pooled.cols());
    const Predictive post = posterior_predictive(truth, x, stimuli.front().y_train, xs, false);
    Eigen::MatrixXd post_noisy = post.cov;
    post_noisy.diagonal().array() += set.noise_var;
    out.cov_correlation = upper_triangle_correlation(emp, post.cov);
    const std::string base = "progressive_" + set.name;
    report.tables.push_back(matrix_table(base + "_empirical_cov", emp, xs));
    report.tables.push_back(matrix_table(base + "_true_cov", post.cov, xs));
    report.tables.push_back(matrix_table(base + "_true_cov_noisy", post_noisy, xs));
    report.heatmaps.push_back({base + "_empirical_cov", "Set " + set.name + " empirical covariance of responses", emp});
    report.heatmaps.push_back({base + "_true_cov", "Set " + set.name + " true posterior covariance", post.cov});
  }
  return out;
}

}  // namespace

std::vector<Stimulus> make_progressive_stimuli(const StimulusSetConfig& set, std::uint64_t seed) {
  hk::validate(set.truth);
  set.grid.validate();
  if (set.stimuli < 2) throw std::invalid_argument("progressive: need at least two stimuli");
  const GPModel truth = model_of(set.truth, set.noise_var);
  const Eigen::VectorXd x = set.grid.train_inputs();
  std::vector<Stimulus> out;
  for (int p = 0; p < set.stimuli; ++p) {
    Stimulus s;
    s.id = set.name + std::to_string(p + 1);
    s.x_train = x;
    // the sequence ends by repeating its first function
    s.y_train = p + 1 < set.stimuli ? sample_prior(truth, x, 1, derive_seed(seed, 100 + static_cast<std::uint64_t>(p))).col(0)
                                    : out.front().y_train;
    s.x_test = set.grid.test_inputs();
    s.generator_params = {{"kernel", set.truth}, {"noise_var", set.noise_var}, {"position", p + 1},
                          {"repeat_of", p + 1 == set.stimuli ? 1 : p + 1}};
    const double m = std::max(1.0, 1.5 * s.y_train.cwiseAbs().maxCoeff());
    s.y_range = std::make_pair(-m, m);
    out.push_back(std::move(s));
  }
  return out;
}

ProgressiveResult run_progressive(const ProgressiveConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ProgressiveResult res;
  res.report.experiment = "progressive";
  Table errors{"progressive_errors", {"set", "stimulus", "normalized_l2_learned", "normalized_l2_rbf"}, {}};
  const SetOutcome a = run_stimulus_set(cfg.set_a, cfg, derive_seed(seed, 0), false, res.report, errors);
  const SetOutcome b = run_stimulus_set(cfg.set_b, cfg, derive_seed(seed, 1), true, res.report, errors);
  res.learned_error_a = a.learned_error;
  res.learned_error_b = b.learned_error;
  res.covariance_correlation_b = b.cov_correlation;
  res.report.tables.push_back(std::move(errors));
  res.report.summary["learned_error_a"] = a.learned_error;
  res.report.summary["learned_error_b"] = b.learned_error;
  res.report.summary["covariance_correlation_b"] = b.cov_correlation;
  return res;
}

// ------------------------------------------------------------ unconventional

void UnconventionalConfig::validate() const {
  grid.validate();
  if (stimulus == UnconventionalStimulus::Sawtooth) {
    if (responders < 1 || flat_responders < 0 || zigzag_responders < 0)
      throw std::invalid_argument("unconventional: responder counts must be nonnegative, kernel responders >= 1");
    if (clusters < 1 || clusters > responders + flat_responders + zigzag_responders)
      throw std::invalid_argument("unconventional: cluster count out of range");
    hk::validate(responder_kernel);
  } else if (careful_responders + careless_responders < 1) {
    throw std::invalid_argument("unconventional: the step pool is empty");
  }
  if (samples_per_cluster < 1 || learner_components < 1)
    throw std::invalid_argument("unconventional: samples_per_cluster and learner_components must be >= 1");
}

std::vector<ResponseRecord> simulate_sawtooth_pool(const Stimulus& s, const UnconventionalConfig& cfg,
                                                   std::uint64_t seed) {
  std::vector<ResponseRecord> pool;
  Rng rng(derive_seed(seed, 0));
  std::uniform_real_distribution<double> rt(60.0, 180.0);
  std::normal_distribution<double> noise(0.0, 0.05);
  const DrawSet d = sample_posterior(model_of(cfg.responder_kernel, cfg.responder_noise_var), s.x_train, s.y_train,
                                     s.x_test, cfg.responders, derive_seed(seed, 1), false);
  for (int j = 0; j < cfg.responders; ++j) pool.push_back({idx_name("k", j + 1, 3), s.id, d.y_test.col(j), rt(rng), j});
  const double level = s.y_train.mean();
  const Eigen::Index n = s.x_test.size();
  for (int j = 0; j < cfg.flat_responders; ++j) {
    Eigen::VectorXd y(n);
    for (auto& v : y) v = level + noise(rng);
    pool.push_back({idx_name("f", j + 1, 3), s.id, y, rt(rng), j});
  }
  for (int j = 0; j < cfg.zigzag_responders; ++j) {
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y[i] = level + (i % 2 ? 0.6 : -0.6) + noise(rng);
    pool.push_back({idx_name("z", j + 1, 3), s.id, y, rt(rng), j});
  }
  return pool;
}

std::vector<ResponseRecord> simulate_step_pool(const Stimulus& s, const UnconventionalConfig& cfg, std::uint64_t seed) {
  std::vector<ResponseRecord> pool;
  Rng rng(derive_seed(seed, 0));
  std::uniform_real_distribution<double> slow(60.0, 180.0), fast(10.0, 45.0), u(0.0, 1.0);
  std::normal_distribution<double> small(0.0, 0.01), wild(0.0, 0.5), level_sd(0.0, 0.05);
  const Eigen::Index n = s.x_test.size();
  const double last = s.y_train[s.y_train.size() - 1];
  // careful responders continue with one step placed in the middle third
  auto step_curve = [&]() {
    const Eigen::Index at = n / 3 + static_cast<Eigen::Index>(u(rng) * static_cast<double>(n - 2 * (n / 3)));
    const double before = last + level_sd(rng);
    const double jump = (u(rng) < 0.5 ? -1.0 : 1.0) * (0.8 + 0.4 * u(rng));
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y[i] = (i < at ? before : before + jump) + small(rng);
    return y;
  };
  for (int j = 0; j < cfg.careful_responders; ++j) pool.push_back({idx_name("c", j + 1, 3), s.id, step_curve(), slow(rng), j});
  for (int j = 0; j < cfg.careless_responders; ++j) {
    if (j % 2 == 0) {
      pool.push_back({idx_name("q", j + 1, 3), s.id, step_curve(), fast(rng), j});
    } else {
      Eigen::VectorXd y(n);
      for (auto& v : y) v = last + wild(rng);
      pool.push_back({idx_name("w", j + 1, 3), s.id, y, slow(rng), j});
    }
  }
  return pool;
}

UnconventionalResult run_unconventional(const UnconventionalConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  UnconventionalResult res;
  const bool saw = cfg.stimulus == UnconventionalStimulus::Sawtooth;
  res.report.experiment = "unconventional";

  std::vector<ResponseRecord> pool;
  const bool simulated = !cfg.responses_file;
  if (simulated) {
    res.stimulus = saw ? make_sawtooth("sawtooth", cfg.period, cfg.amplitude, cfg.grid)
                       : make_step("step", cfg.breakpoints, cfg.levels, cfg.grid);
    pool = saw ? simulate_sawtooth_pool(res.stimulus, cfg, derive_seed(seed, 0))
               : simulate_step_pool(res.stimulus, cfg, derive_seed(seed, 0));
  } else {
    if (!cfg.stimulus_file) throw std::invalid_argument("unconventional: a responses file needs a stimulus file");
    const auto stimuli = load_stimuli(*cfg.stimulus_file);
    const StimulusFamily want = saw ? StimulusFamily::Sawtooth : StimulusFamily::Step;
    const auto it = std::find_if(stimuli.begin(), stimuli.end(), [&](const Stimulus& s) { return s.family == want; });
    if (it == stimuli.end()) throw std::invalid_argument("unconventional: no " + to_string(want) + " stimulus in file");
    res.stimulus = *it;
    for (auto& r : load_responses(*cfg.responses_file))
      if (r.stimulus_id == res.stimulus.id) pool.push_back(std::move(r));
    if (pool.empty()) throw std::invalid_argument("unconventional: no responses for stimulus " + res.stimulus.id);
  }
  const Stimulus& s = res.stimulus;
  for (const auto& r : pool)
    if (r.y_star.size() != s.x_test.size())
      throw std::invalid_argument("unconventional: response from " + r.participant_id + " has the wrong length");

  // cluster assignment
  std::vector<int> labels(pool.size(), 0);
  int n_clusters = 1;
  if (saw) {
    n_clusters = std::min<int>(cfg.clusters, static_cast<int>(pool.size()));
    labels = agglomerative_cluster(pool, n_clusters);
  } else {
    const FilterResult f = filter_responses(pool, cfg.filter);
    std::set<std::string> passed;
    for (const auto& r : f.pass) passed.insert(r.participant_id + "\x1f" + std::to_string(r.submitted_at));
    for (std::size_t i = 0; i < pool.size(); ++i)
      labels[i] = passed.count(pool[i].participant_id + "\x1f" + std::to_string(pool[i].submitted_at)) ? 0 : 1;
    n_clusters = 2;
  }

  if (simulated && saw) {
    res.responder_posterior_cov =
        posterior_predictive(model_of(cfg.responder_kernel, cfg.responder_noise_var), s.x_train, s.y_train, s.x_test).cov;
    res.report.tables.push_back(matrix_table("responder_posterior_cov", res.responder_posterior_cov, s.x_test));
    res.report.heatmaps.push_back({"responder_posterior_cov", "Responder posterior covariance", res.responder_posterior_cov});
  }

  Table members{"unconventional_responses", {"participant_id", "cluster", "response_time_s", "total_variation"}, {}};
  for (std::size_t i = 0; i < pool.size(); ++i)
    members.add_row({pool[i].participant_id, std::int64_t{labels[i]}, pool[i].response_time_s,
                     total_variation(pool[i].y_star)});
  res.report.tables.push_back(std::move(members));

  Table summary{"unconventional_clusters",
                {"cluster", "size", "mean_tv_responses", "mean_tv_samples", "tv_rel_diff", "cov_rel_error"},
                {}};
  int best_kernel_count = -1;
  LinePlot overview{"unconventional_overview", "Training data, baselines and cluster means", "x", "y",
                    {{"training", s.x_train, s.y_train, true}}};
  for (int c = 0; c < n_clusters; ++c) {
    ClusterSummary cs;
    cs.label = c;
    std::vector<Eigen::VectorXd> cols;
    int kernel_members = 0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (labels[i] != c) continue;
      cs.members.push_back(pool[i].participant_id);
      cols.push_back(pool[i].y_star);
      if (pool[i].participant_id.front() == 'k') ++kernel_members;
    }
    if (cols.empty()) continue;
    Eigen::MatrixXd y(s.x_test.size(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) y.col(static_cast<Eigen::Index>(j)) = cols[j];
    const EmpiricalGaussian raw = empirical_moments(y);
    if (raw.n_draws == 1) {
      // a single response carries no spread: zero covariance, samples equal it
      cs.gaussian = raw;
      cs.gaussian.psd_repaired = true;
    } else {
      cs.gaussian = psd_project(raw);
    }
    cs.samples = sample_empirical(cs.gaussian, cfg.samples_per_cluster, derive_seed(seed, 100 + static_cast<std::uint64_t>(c)));
    for (const auto& v : cols) cs.mean_tv_responses += total_variation(v);
    cs.mean_tv_responses /= static_cast<double>(cols.size());
    for (Eigen::Index j = 0; j < cs.samples.cols(); ++j) cs.mean_tv_samples += total_variation(cs.samples.col(j));
    cs.mean_tv_samples /= static_cast<double>(cs.samples.cols());
    if (simulated && saw && kernel_members > 0)
      cs.covariance_error = frobenius_rel_error(cs.gaussian.cov, res.responder_posterior_cov);
    if (simulated && saw && kernel_members > best_kernel_count) {
      best_kernel_count = kernel_members;
      res.evaluated_cluster = c;
    }
    const double tv_rel =
        cs.mean_tv_responses > 0.0 ? std::abs(cs.mean_tv_samples - cs.mean_tv_responses) / cs.mean_tv_responses : 0.0;
    summary.add_row({std::int64_t{c}, static_cast<std::int64_t>(cs.members.size()), cs.mean_tv_responses,
                     cs.mean_tv_samples, tv_rel, opt_cell(cs.covariance_error)});

    const std::string base = "cluster" + std::to_string(c);
    res.report.tables.push_back(matrix_table(base + "_cov", cs.gaussian.cov, s.x_test));
    res.report.heatmaps.push_back({base + "_cov", "Cluster " + std::to_string(c) + " empirical covariance", cs.gaussian.cov});
    std::vector<std::string> names = {"x", "mean"};
    std::vector<Eigen::VectorXd> sc = {s.x_test, cs.gaussian.mean};
    LinePlot sp{base + "_samples", "Cluster " + std::to_string(c) + " samples", "x", "y",
                {{"training", s.x_train, s.y_train, true}, {"mean", s.x_test, cs.gaussian.mean}}};
    for (Eigen::Index j = 0; j < std::min<Eigen::Index>(5, cs.samples.cols()); ++j) {
      names.push_back(idx_name("sample_", static_cast<int>(j) + 1));
      sc.push_back(cs.samples.col(j));
      sp.series.push_back({idx_name("sample ", static_cast<int>(j) + 1), s.x_test, cs.samples.col(j)});
    }
    res.report.tables.push_back(columns_table(base + "_samples", names, sc));
    res.report.plots.push_back(std::move(sp));
    overview.series.push_back({"cluster " + std::to_string(c) + " mean", s.x_test, cs.gaussian.mean});
    res.clusters.push_back(std::move(cs));
  }
  res.report.tables.push_back(std::move(summary));

  // baselines fit to the training data alone
  const double yv = std::max(variance(s.y_train), 1e-3);
  const double nyq = 0.5 / min_gap(s.x_train);
  const double x_range = s.x_train.maxCoeff() - s.x_train.minCoeff();
  GPModel sm = model_of(default_sm_init(x_range, yv, nyq, cfg.learner_components, derive_seed(seed, 200)), 0.01 * yv);
  FitOptions so = cfg.fit.options(derive_seed(seed, 201), Objective::DataML);
  so.max_frequency = nyq;
  const FitReport smf = fit_data_kernel(sm, s.x_train, s.y_train, so);
  const FitReport rbf = fit_data_kernel(model_of(KernelSpec::rbf(1.0, yv), 0.01 * yv), s.x_train, s.y_train,
                                        cfg.fit.options(derive_seed(seed, 202), Objective::DataML));
  const Eigen::VectorXd sm_mean = posterior_predictive(smf.best_model, s.x_train, s.y_train, s.x_test).mean;
  const Eigen::VectorXd rbf_mean = posterior_predictive(rbf.best_model, s.x_train, s.y_train, s.x_test).mean;
  res.report.tables.push_back(columns_table("unconventional_baselines", {"x", "sm_mean", "rbf_mean"}, {s.x_test, sm_mean, rbf_mean}));
  overview.series.push_back({"SM baseline", s.x_test, sm_mean});
  overview.series.push_back({"RBF baseline", s.x_test, rbf_mean});
  res.report.plots.push_back(std::move(overview));

  res.report.summary["stimulus"] = to_string(s.family);
  res.report.summary["responses"] = pool.size();
  res.report.summary["evaluated_cluster"] = res.evaluated_cluster;
  nlohmann::json cj = nlohmann::json::array();
  for (const auto& cs : res.clusters) {
    nlohmann::json e = {{"cluster", cs.label},
                        {"size", cs.members.size()},
                        {"mean_tv_responses", cs.mean_tv_responses},
                        {"mean_tv_samples", cs.mean_tv_samples}};
    if (cs.covariance_error) e["cov_rel_error"] = *cs.covariance_error;
    cj.push_back(std::move(e));
  }
  res.report.summary["clusters"] = std::move(cj);
  return res;
}

// ---------------------------------------------------------------------- bias

void BiasConfig::validate() const {
  if (!(lengthscale > 0.0) || !(signal_var > 0.0) || !(noise_var > 0.0) || !(density > 0.0))
    throw std::invalid_argument("bias: lengthscale, signal_var, noise_var and density must be positive");
  if (n < 2 || replicates < 1) throw std::invalid_argument("bias: need n >= 2 and replicates >= 1");
  for (int m : sweep_n)
    if (m < 2) throw std::invalid_argument("bias: sweep sizes must be >= 2");
  if (!sweep_n.empty() && sweep_replicates < 1) throw std::invalid_argument("bias: sweep_replicates must be >= 1");
}

BiasSummary summarize_errors(int n, const std::vector<double>& errors, int failed) {
  BiasSummary s;
  s.n = n;
  s.replicates = static_cast<int>(errors.size());
  s.failed = failed;
  if (errors.empty()) {
    s.mean = s.sd = s.ci_lo = s.ci_hi = s.t = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  const double m = static_cast<double>(errors.size());
  s.mean = std::accumulate(errors.begin(), errors.end(), 0.0) / m;
  if (errors.size() < 2) {
    s.sd = s.ci_lo = s.ci_hi = s.t = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  double ss = 0.0;
  for (double e : errors) ss += (e - s.mean) * (e - s.mean);
  s.sd = std::sqrt(ss / (m - 1.0));
  const double se = s.sd / std::sqrt(m);
  const boost::math::students_t dist(m - 1.0);
  const double q = boost::math::quantile(dist, 0.975);
  s.ci_lo = s.mean - q * se;
  s.ci_hi = s.mean + q * se;
  if (se > 0.0) {
    s.t = s.mean / se;
    s.p_one_sided = boost::math::cdf(boost::math::complement(dist, s.t));
  } else {
    s.t = s.mean > 0 ? INFINITY : s.mean < 0 ? -INFINITY : 0.0;
    s.p_one_sided = s.mean > 0 ? 0.0 : 1.0;
  }
  return s;
}

BiasResult run_bias_study(const BiasConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  BiasResult res;
  res.report.experiment = "bias";
  const GPModel truth = model_of(KernelSpec::rbf(cfg.lengthscale, cfg.signal_var), cfg.noise_var, true);
  Table rows{"bias_replicates", {"n", "replicate", "log_ls_error", "log_signal_var_hat", "converged", "error"}, {}};
  Table sums{"bias_summary", {"n", "replicates", "failed", "mean", "sd", "ci95_lo", "ci95_hi", "t", "p_one_sided"}, {}};

  std::vector<std::pair<int, int>> plan = {{cfg.n, cfg.replicates}};
  for (int m : cfg.sweep_n) plan.emplace_back(m, cfg.sweep_replicates);
  LinePlot cdf{"bias_cdf", "Sorted log length-scale errors", "quantile", "log l_hat - log l", {}};
  for (const auto& [n, reps] : plan) {
    const std::uint64_t ns = derive_seed(seed, static_cast<std::uint64_t>(n));
    std::vector<double> errs;
    int failed = 0;
    for (int r = 0; r < reps; ++r) {
      const std::uint64_t rs = derive_seed(ns, static_cast<std::uint64_t>(r));
      const Eigen::VectorXd x = sorted_uniform(n, 0.0, n / cfg.density, derive_seed(rs, 0));
      const Eigen::VectorXd y = sample_prior(truth, x, 1, derive_seed(rs, 1)).col(0);
      try {
        const FitReport fit = fit_data_kernel(truth, x, y, cfg.fit.options(derive_seed(rs, 2), Objective::DataML));
        const Rbf& k = fit.best_spec().as<Rbf>();
        const double e = k.log_lengthscale - std::log(cfg.lengthscale);
        bool converged = false;
        for (const auto& rr : fit.per_restart)
          if (rr.objective == fit.best_objective) converged = rr.converged;
        errs.push_back(e);
        res.rows.push_back({n, r, e, k.log_signal_var, converged});
        rows.add_row({std::int64_t{n}, std::int64_t{r}, e, k.log_signal_var, std::int64_t{converged}, std::string()});
      } catch (const FitError& ex) {
        ++failed;
        rows.add_row({std::int64_t{n}, std::int64_t{r}, std::string(), std::string(), std::int64_t{0}, std::string(ex.what())});
      }
    }
    const BiasSummary s = summarize_errors(n, errs, failed);
    res.summaries.push_back(s);
    sums.add_row({std::int64_t{n}, std::int64_t{s.replicates}, std::int64_t{s.failed}, s.mean, s.sd, s.ci_lo, s.ci_hi,
                  s.t, s.p_one_sided});
    std::vector<double> sorted = errs;
    std::sort(sorted.begin(), sorted.end());
    Eigen::VectorXd q(static_cast<Eigen::Index>(sorted.size()));
    for (Eigen::Index i = 0; i < q.size(); ++i) q[i] = (i + 0.5) / static_cast<double>(q.size());
    cdf.series.push_back({"N=" + std::to_string(n), q,
                          Eigen::Map<Eigen::VectorXd>(sorted.data(), static_cast<Eigen::Index>(sorted.size()))});
  }
  res.report.tables.push_back(std::move(rows));
  res.report.tables.push_back(std::move(sums));
  res.report.plots.push_back(std::move(cdf));
  nlohmann::json js = nlohmann::json::array();
  for (const auto& s : res.summaries)
    js.push_back({{"n", s.n}, {"replicates", s.replicates}, {"failed", s.failed}, {"mean", s.mean},
                  {"p_one_sided", s.p_one_sided}});
  res.report.summary["summaries"] = js;
  return res;
}

}  // namespace hk
