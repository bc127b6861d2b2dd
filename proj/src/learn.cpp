#include "humankernel/learn.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <iomanip>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <variant>

#include "humankernel/errors.hpp"
#include "humankernel/rng.hpp"

namespace hk {

void FitOptions::validate() const {
  if (restarts < 1) throw std::invalid_argument("FitOptions: restarts must be >= 1");
  if (max_iters < 1) throw std::invalid_argument("FitOptions: max_iters must be >= 1");
  if (!(grad_tol > 0.0)) throw std::invalid_argument("FitOptions: grad_tol must be positive");
  if (!(noise_floor_ratio >= 0.0)) throw std::invalid_argument("FitOptions: noise_floor_ratio must be >= 0");
  if (!(max_frequency >= 0.0)) throw std::invalid_argument("FitOptions: max_frequency must be >= 0");
  if (!(max_envelope >= 0.0)) throw std::invalid_argument("FitOptions: max_envelope must be >= 0");
  if (!(max_weight >= 0.0)) throw std::invalid_argument("FitOptions: max_weight must be >= 0");
}

namespace {

constexpr double kArmijo = 1e-4;
constexpr int kMaxBacktracks = 50;
// Trial steps shorter than this, relative to the iterate, are not tried.
constexpr double kMinRelStep = 1e-10;
constexpr std::size_t kMemory = 10;

struct Pair {
  Eigen::VectorXd s, y;
  double rho;
};

// Evaluates -objective; a throw or non-finite output becomes +inf.
bool eval_neg(const ValueGrad& fn, const Eigen::VectorXd& x, double& f, Eigen::VectorXd& g) {
  double v = 0.0;
  Eigen::VectorXd grad;
  try {
    fn(x, v, grad);
  } catch (const std::exception&) {
    f = std::numeric_limits<double>::infinity();
    return false;
  }
  if (!std::isfinite(v) || grad.size() != x.size() || !grad.allFinite()) {
    f = std::numeric_limits<double>::infinity();
    return false;
  }
  f = -v;
  g = -grad;
  return true;
}

}  // namespace

OptimizeResult optimize(const ValueGrad& fn, const Eigen::VectorXd& start, const FitOptions& opts) {
  OptimizeResult res;
  Eigen::VectorXd x = start;
  double f = 0.0;
  Eigen::VectorXd g;
  if (!eval_neg(fn, x, f, g)) throw FitError("objective is not finite at the starting point");
  res.trace.push_back(-f);

  std::deque<Pair> mem;
  int iter = 0;
  int stalls = 0;  // consecutive accepted steps that did not lower the objective
  while (iter < opts.max_iters) {
    if (g.lpNorm<Eigen::Infinity>() < opts.grad_tol) {
      res.converged = true;
      break;
    }
    // two-loop recursion
    Eigen::VectorXd q = g;
    std::vector<double> alpha(mem.size());
    for (std::size_t i = mem.size(); i-- > 0;) {
      alpha[i] = mem[i].rho * mem[i].s.dot(q);
      q -= alpha[i] * mem[i].y;
    }
    if (!mem.empty()) q *= mem.back().s.dot(mem.back().y) / mem.back().y.squaredNorm();
    for (std::size_t i = 0; i < mem.size(); ++i) {
      const double beta = mem[i].rho * mem[i].y.dot(q);
      q += (alpha[i] - beta) * mem[i].s;
    }
    Eigen::VectorXd d = -q;
    double slope = g.dot(d);
    if (!(slope < 0.0)) {
      mem.clear();
      d = -g;
      slope = -g.squaredNorm();
    }

    double t = mem.empty() ? std::min(1.0, 1.0 / g.lpNorm<Eigen::Infinity>()) : 1.0;
    bool accepted = false;
    double f_new = 0.0;
    Eigen::VectorXd x_new, g_new;
    const double step_floor = kMinRelStep * (1.0 + x.lpNorm<Eigen::Infinity>());
    for (int k = 0; k < kMaxBacktracks && t * d.lpNorm<Eigen::Infinity>() > step_floor; ++k) {
      x_new = x + t * d;
      if (eval_neg(fn, x_new, f_new, g_new) && f_new <= f + kArmijo * t * slope) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    ++iter;
    if (!accepted) {
      if (!mem.empty()) {
        // retry once along steepest ascent with a fresh curvature model
        mem.clear();
        continue;
      }
      break;
    }
    Pair p{x_new - x, g_new - g, 0.0};
    const double sy = p.s.dot(p.y);
    if (sy > 1e-12 * p.s.norm() * p.y.norm()) {
      p.rho = 1.0 / sy;
      mem.push_back(std::move(p));
      if (mem.size() > kMemory) mem.pop_front();
    }
    const bool stalled = f - f_new <= 1e-15 * std::max(1.0, std::abs(f));
    x = std::move(x_new);
    f = f_new;
    g = std::move(g_new);
    res.trace.push_back(-f);
    // Near a round-off optimum Armijo accepts steps that change nothing;
    // retry once from steepest descent, then stop.
    if (!stalled) {
      stalls = 0;
    } else if (++stalls >= 2) {
      break;
    } else {
      mem.clear();
    }
  }
  if (!res.converged && g.lpNorm<Eigen::Infinity>() < opts.grad_tol) res.converged = true;
  res.x = x;
  res.value = -f;
  res.grad = -g;
  res.iterations = iter;
  return res;
}

GPModel freeze_noise_at_floor(GPModel model, const Eigen::VectorXd& y, double noise_floor_ratio) {
  const double var = y.size() > 1 ? (y.array() - y.mean()).square().mean() : 1.0;
  model.log_noise_var = std::log(noise_floor_ratio * (var > 0.0 ? var : 1.0));
  model.noise_frozen = true;
  return model;
}

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

KernelSpec perturb_kernel(const KernelSpec& k, double x_range, double y_variance, double nyquist, double sd, Rng& rng) {
  std::normal_distribution<double> n(0.0, sd);
  return std::visit(
      Overloaded{
          [&](const Rbf& r) -> KernelSpec { return Rbf{r.log_lengthscale + n(rng), r.log_signal_var + n(rng)}; },
          [&](const Rq& r) -> KernelSpec {
            return Rq{r.log_lengthscale + n(rng), r.log_signal_var + n(rng), r.log_alpha + n(rng)};
          },
          [&](const Linear& r) -> KernelSpec { return Linear{r.log_slope_var + n(rng), r.offset_c + n(rng)}; },
          [&](const SpectralMixture& s) -> KernelSpec {
            return default_sm_init(x_range, y_variance, nyquist, static_cast<int>(s.components.size()), rng());
          },
          [&](const Product& p) -> KernelSpec {
            KernelSpec l = perturb_kernel(*p.left, x_range, y_variance, nyquist, sd, rng);
            KernelSpec r = perturb_kernel(*p.right, x_range, y_variance, nyquist, sd, rng);
            return KernelSpec::product(std::move(l), std::move(r));
          },
      },
      k.node());
}

struct DataScales {
  double x_range = 1.0;
  double y_variance = 1.0;
  double nyquist = 1.0;
};

DataScales scales_of(const Eigen::VectorXd& x, const Eigen::VectorXd& targets) {
  DataScales s;
  std::vector<double> xs(x.data(), x.data() + x.size());
  std::sort(xs.begin(), xs.end());
  if (xs.size() >= 2 && xs.back() > xs.front()) s.x_range = xs.back() - xs.front();
  double min_gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < xs.size(); ++i)
    if (xs[i] > xs[i - 1]) min_gap = std::min(min_gap, xs[i] - xs[i - 1]);
  s.nyquist = std::isfinite(min_gap) ? 0.5 / min_gap : 1.0 / s.x_range;
  if (targets.size() > 1) {
    const double v = (targets.array() - targets.mean()).square().mean();
    if (v > 0.0) s.y_variance = v;
  }
  return s;
}

double softplus(double z) { return z > 30.0 ? z : std::log1p(std::exp(z)); }

// inverse of softplus for d > 0
double softplus_inv(double d) { return d > 30.0 ? d + std::log(-std::expm1(-d)) : std::log(std::expm1(d)); }

// Maps between the model and the optimizer's vector. Learnable noise is
// represented as s2 = floor + exp(t). Bounded spectral-mixture parameters
// use p = U - softplus(U - u) (upper only), p = L + softplus(u - L) (lower
// only) or p = L + (U - L) * sigmoid(u) (both).
struct Param {
  // Closest a start point may sit to a bound, in the parameter's own units.
  static constexpr double kBoundGap = 1e-3;

  struct Bounds {
    std::optional<double> lo, hi;
  };

  GPModel templ;
  double floor = 0.0;
  std::vector<Bounds> bounds;  // per kernel parameter

  Param(GPModel t, double noise_floor, const FitOptions& opts) : templ(std::move(t)), floor(noise_floor) {
    const double max_frequency = opts.max_frequency;
    const double max_envelope = opts.max_envelope;
    const std::vector<std::string> names = param_names(templ.kernel);
    const Eigen::VectorXd p = flatten_params(templ.kernel);
    bounds.resize(names.size());
    auto ends_with = [](const std::string& s, const std::string& tail) {
      return s.size() >= tail.size() && s.compare(s.size() - tail.size(), tail.size(), tail) == 0;
    };
    for (std::size_t i = 0; i < names.size(); ++i) {
      const double v = p[static_cast<Eigen::Index>(i)];
      Bounds& b = bounds[i];
      if (opts.max_weight > 0.0 && ends_with(names[i], ".log_weight")) b.hi = std::log(opts.max_weight);
      if (max_frequency > 0.0 && ends_with(names[i], ".log_frequency")) b.hi = std::log(max_frequency);
      if (ends_with(names[i], ".log_freq_var")) {
        if (max_frequency > 0.0) b.hi = 2.0 * std::log(max_frequency);
        // envelope length 1 / (2 pi sqrt(v))
        if (max_envelope > 0.0) b.lo = -2.0 * std::log(2.0 * std::numbers::pi * max_envelope);
      }
      // a template outside the bounds moves the bounds rather than the start
      if (b.hi && v > *b.hi - kBoundGap) b.hi = v + kBoundGap;
      if (b.lo && v < *b.lo + kBoundGap) b.lo = v - kBoundGap;
    }
  }

  static double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

  double to_free(const Bounds& b, double p) const {
    if (b.lo && b.hi) {
      const double gap = kBoundGap / (*b.hi - *b.lo);
      const double r = std::clamp((p - *b.lo) / (*b.hi - *b.lo), gap, 1.0 - gap);
      return std::log(r / (1.0 - r));
    }
    if (b.hi) return *b.hi - softplus_inv(std::max(*b.hi - p, kBoundGap));
    if (b.lo) return *b.lo + softplus_inv(std::max(p - *b.lo, kBoundGap));
    return p;
  }

  double from_free(const Bounds& b, double u) const {
    if (b.lo && b.hi) return *b.lo + (*b.hi - *b.lo) * sigmoid(u);
    if (b.hi) return *b.hi - softplus(*b.hi - u);
    if (b.lo) return *b.lo + softplus(u - *b.lo);
    return u;
  }

  double dp_du(const Bounds& b, double u) const {
    if (b.lo && b.hi) return (*b.hi - *b.lo) * sigmoid(u) * (1.0 - sigmoid(u));
    if (b.hi) return sigmoid(*b.hi - u);
    if (b.lo) return sigmoid(u - *b.lo);
    return 1.0;
  }

  // Start points strictly inside the bounds; the template itself is never moved.
  Eigen::VectorXd to_vec(const GPModel& m) const {
    Eigen::VectorXd v = m.free_params();
    for (std::size_t i = 0; i < bounds.size(); ++i) {
      const Eigen::Index k = static_cast<Eigen::Index>(i);
      v[k] = to_free(bounds[i], v[k]);
    }
    if (!m.noise_frozen) {
      const double excess = std::max(m.noise_var() - floor, std::max(1e-3 * floor, 1e-300));
      v[v.size() - 1] = std::log(excess);
    }
    return v;
  }

  GPModel to_model(const Eigen::VectorXd& v) const {
    Eigen::VectorXd w = v;
    for (std::size_t i = 0; i < bounds.size(); ++i) {
      const Eigen::Index k = static_cast<Eigen::Index>(i);
      w[k] = from_free(bounds[i], v[k]);
    }
    if (!templ.noise_frozen) w[w.size() - 1] = std::log(floor + std::exp(v[v.size() - 1]));
    return templ.with_free_params(w);
  }

  // Chain rule for the transformed coordinates.
  void adjust_grad(const Eigen::VectorXd& v, const GPModel& m, Eigen::VectorXd& g) const {
    for (std::size_t i = 0; i < bounds.size(); ++i) {
      const Eigen::Index k = static_cast<Eigen::Index>(i);
      g[k] *= dp_du(bounds[i], v[k]);
    }
    if (templ.noise_frozen) return;
    const Eigen::Index i = g.size() - 1;
    g[i] *= std::exp(v[i]) / m.noise_var();
  }
};

using ModelObjective = std::function<LmlValueGrad(const GPModel&)>;

FitReport run_restarts(const GPModel& templ, const DataScales& scales, const ModelObjective& objective,
                       const FitOptions& opts) {
  opts.validate();
  validate(templ.kernel);
  const double nyquist = opts.max_frequency > 0.0 ? opts.max_frequency : scales.nyquist;
  const Param param(templ, templ.noise_frozen ? 0.0 : opts.noise_floor_ratio * scales.y_variance, opts);

  const ValueGrad fn = [&](const Eigen::VectorXd& v, double& value, Eigen::VectorXd& grad) {
    const GPModel m = param.to_model(v);
    validate(m.kernel);
    LmlValueGrad r = objective(m);
    param.adjust_grad(v, m, r.grad);
    value = r.value;
    grad = std::move(r.grad);
  };

  FitReport report;
  report.best_objective = -std::numeric_limits<double>::infinity();
  double best_norm = std::numeric_limits<double>::infinity();
  bool have_best = false;
  for (int r = 0; r < opts.restarts; ++r) {
    RestartResult rr;
    rr.seed = derive_seed(opts.seed, static_cast<std::uint64_t>(r));
    rr.objective = std::numeric_limits<double>::quiet_NaN();
    try {
      GPModel init = r == 0 ? templ
                            : perturb_model(templ, scales.x_range, scales.y_variance, nyquist, opts.perturb_std,
                                            rr.seed);
      const OptimizeResult o = optimize(fn, param.to_vec(init), opts);
      rr.objective = o.value;
      rr.iterations = o.iterations;
      rr.converged = o.converged;
      rr.grad_norm = o.grad.lpNorm<Eigen::Infinity>();
      const GPModel m = param.to_model(o.x);
      const double norm = m.free_params().norm();
      if (std::isfinite(o.value) &&
          (!have_best || o.value > report.best_objective || (o.value == report.best_objective && norm < best_norm))) {
        report.best_objective = o.value;
        report.best_model = m;
        best_norm = norm;
        have_best = true;
      }
    } catch (const std::exception& e) {
      rr.error = e.what();
    }
    report.per_restart.push_back(std::move(rr));
  }
  if (!have_best) {
    std::ostringstream msg;
    msg << "all " << opts.restarts << " restarts diverged:";
    for (const auto& rr : report.per_restart) msg << " [seed " << rr.seed << ": " << rr.error << "]";
    throw FitError(msg.str());
  }
  return report;
}

}  // namespace

GPModel perturb_model(const GPModel& templ, double x_range, double y_variance, double nyquist, double perturb_std,
                      std::uint64_t seed) {
  Rng rng(seed);
  GPModel m = templ;
  m.kernel = perturb_kernel(templ.kernel, x_range, y_variance, nyquist, perturb_std, rng);
  if (!m.noise_frozen) {
    std::normal_distribution<double> n(0.0, perturb_std);
    m.log_noise_var += n(rng);
  }
  return m;
}

FitReport fit_data_kernel(const GPModel& templ, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                          const FitOptions& opts) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("fit_data_kernel: need |x| = |y| >= 2");
  const DataScales scales = scales_of(x, y);
  return run_restarts(templ, scales, [&](const GPModel& m) { return lml_multi(m, x, y, true); }, opts);
}

FitReport fit_prediction_kernel(const GPModel& templ, const DrawSet& draws, const FitOptions& opts) {
  draws.validate();
  Eigen::VectorXd xs(draws.x_train.size() + draws.x_test.size());
  xs << draws.x_train, draws.x_test;
  Eigen::VectorXd targets(draws.y_train.size() + draws.y_test.size());
  targets << draws.y_train, draws.y_test.reshaped();
  const DataScales scales = scales_of(xs, targets);
  return run_restarts(
      templ, scales, [&](const GPModel& m) { return predictive_conditional_lml_grad(m, draws); }, opts);
}

void to_json(nlohmann::json& j, const GPModel& m) {
  j = {{"kernel", m.kernel}, {"log_noise_var", m.log_noise_var}, {"noise_frozen", m.noise_frozen}};
}

void from_json(const nlohmann::json& j, GPModel& m) {
  m.kernel = j.at("kernel").get<KernelSpec>();
  m.log_noise_var = j.at("log_noise_var").get<double>();
  m.noise_frozen = j.value("noise_frozen", false);
  if (!std::isfinite(m.log_noise_var)) throw std::invalid_argument("log_noise_var must be finite");
}

void to_json(nlohmann::json& j, const FitReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& rr : r.per_restart) {
    nlohmann::json row = {{"seed", rr.seed},
                          {"iterations", rr.iterations},
                          {"converged", rr.converged},
                          {"grad_norm", rr.grad_norm}};
    if (std::isfinite(rr.objective))
      row["objective"] = rr.objective;
    else
      row["objective"] = nullptr;
    if (!rr.error.empty()) row["error"] = rr.error;
    rows.push_back(std::move(row));
  }
  j = {{"best_model", r.best_model},
       {"best_noise", r.best_noise()},
       {"best_objective", r.best_objective},
       {"per_restart", std::move(rows)}};
}

std::string format_restart_table(const FitReport& r) {
  std::ostringstream out;
  out << std::left << std::setw(8) << "restart" << std::setw(22) << "seed" << std::setw(18) << "objective"
      << std::setw(8) << "iters" << std::setw(11) << "converged"
      << "grad_inf\n";
  for (std::size_t i = 0; i < r.per_restart.size(); ++i) {
    const auto& rr = r.per_restart[i];
    out << std::left << std::setw(8) << i << std::setw(22) << rr.seed << std::setw(18) << std::setprecision(10)
        << rr.objective << std::setw(8) << rr.iterations << std::setw(11) << (rr.converged ? "yes" : "no")
        << std::setprecision(3) << rr.grad_norm << "\n";
  }
  out << "best objective " << std::setprecision(10) << r.best_objective << "\n";
  return out.str();
}

}  // namespace hk
