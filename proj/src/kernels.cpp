#include "humankernel/kernels.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include "humankernel/rng.hpp"

namespace hk {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTwoPiSq = 2.0 * kPi * kPi;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;


double eval_rec(const KernelSpec& spec, double x, double x2, double* grad) {
  return std::visit(
      Overloaded{
          [&](const Rbf& k) {
            const double r = x - x2;
            const double inv_l2 = std::exp(-2.0 * k.log_lengthscale);
            const double v = std::exp(k.log_signal_var - 0.5 * r * r * inv_l2);
            if (grad) {
              grad[0] = v * r * r * inv_l2;
              grad[1] = v;
            }
            return v;
          },
          [&](const Rq& k) {
            const double r = x - x2;
            const double alpha = std::exp(k.log_alpha);
            const double z = r * r * std::exp(-2.0 * k.log_lengthscale) / (2.0 * alpha);
            const double log_u = std::log1p(z);
            const double v = std::exp(k.log_signal_var - alpha * log_u);
            if (grad) {
              const double u = 1.0 + z;
              grad[0] = v * 2.0 * alpha * z / u;
              grad[1] = v;
              grad[2] = v * alpha * (z / u - log_u);
            }
            return v;
          },
          [&](const Linear& k) {
            const double sv = std::exp(k.log_slope_var);
            const double a = x - k.offset_c;
            const double b = x2 - k.offset_c;
            const double v = sv * (a * b);
            if (grad) {
              grad[0] = v;
              grad[1] = -sv * (a + b);
            }
            return v;
          },
          [&](const SpectralMixture& k) {
            const double tau = x - x2;
            double total = 0.0;
            for (std::size_t q = 0; q < k.components.size(); ++q) {
              const SmComponent& c = k.components[q];
              const double w = std::exp(c.log_weight);
              const double mu = std::exp(c.log_frequency);
              const double var = std::exp(c.log_freq_var);
              const double envelope = std::exp(-kTwoPiSq * tau * tau * var);
              const double phase = 2.0 * kPi * tau * mu;
              const double term = w * envelope * std::cos(phase);
              total += term;
              if (grad) {
                grad[3 * q + 0] = term;
                grad[3 * q + 1] = -w * envelope * std::sin(phase) * phase;
                grad[3 * q + 2] = -kTwoPiSq * tau * tau * var * term;
              }
            }
            return total;
          },
          [&](const Product& k) {
            const std::size_t nl = k.left->num_params();
            const std::size_t nr = k.right->num_params();
            const double l = eval_rec(*k.left, x, x2, grad);
            const double r = eval_rec(*k.right, x, x2, grad ? grad + nl : nullptr);
            if (grad) {
              for (std::size_t i = 0; i < nl; ++i) grad[i] *= r;
              for (std::size_t i = 0; i < nr; ++i) grad[nl + i] *= l;
            }
            return l * r;
          },
      },
      spec.node());
}

void flatten_rec(const KernelSpec& spec, std::vector<double>& out) {
  std::visit(Overloaded{
                 [&](const Rbf& k) { out.insert(out.end(), {k.log_lengthscale, k.log_signal_var}); },
                 [&](const Rq& k) {
                   out.insert(out.end(), {k.log_lengthscale, k.log_signal_var, k.log_alpha});
                 },
                 [&](const Linear& k) { out.insert(out.end(), {k.log_slope_var, k.offset_c}); },
                 [&](const SpectralMixture& k) {
                   for (const auto& c : k.components)
                     out.insert(out.end(), {c.log_weight, c.log_frequency, c.log_freq_var});
                 },
                 [&](const Product& k) {
                   flatten_rec(*k.left, out);
                   flatten_rec(*k.right, out);
                 },
             },
             spec.node());
}

KernelSpec unflatten_rec(const KernelSpec& spec, const double*& p) {
  return std::visit(Overloaded{
                        [&](const Rbf&) -> KernelSpec {
                          Rbf k{p[0], p[1]};
                          p += 2;
                          return k;
                        },
                        [&](const Rq&) -> KernelSpec {
                          Rq k{p[0], p[1], p[2]};
                          p += 3;
                          return k;
                        },
                        [&](const Linear&) -> KernelSpec {
                          Linear k{p[0], p[1]};
                          p += 2;
                          return k;
                        },
                        [&](const SpectralMixture& t) -> KernelSpec {
                          SpectralMixture k;
                          k.components.resize(t.components.size());
                          for (auto& c : k.components) {
                            c = {p[0], p[1], p[2]};
                            p += 3;
                          }
                          return k;
                        },
                        [&](const Product& t) -> KernelSpec {
                          KernelSpec l = unflatten_rec(*t.left, p);
                          KernelSpec r = unflatten_rec(*t.right, p);
                          return KernelSpec::product(std::move(l), std::move(r));
                        },
                    },
                    spec.node());
}

void names_rec(const KernelSpec& spec, const std::string& prefix, std::vector<std::string>& out) {
  std::visit(Overloaded{
                 [&](const Rbf&) {
                   out.push_back(prefix + "rbf.log_lengthscale");
                   out.push_back(prefix + "rbf.log_signal_var");
                 },
                 [&](const Rq&) {
                   out.push_back(prefix + "rq.log_lengthscale");
                   out.push_back(prefix + "rq.log_signal_var");
                   out.push_back(prefix + "rq.log_alpha");
                 },
                 [&](const Linear&) {
                   out.push_back(prefix + "linear.log_slope_var");
                   out.push_back(prefix + "linear.offset_c");
                 },
                 [&](const SpectralMixture& k) {
                   for (std::size_t q = 0; q < k.components.size(); ++q) {
                     const std::string base = prefix + "sm[" + std::to_string(q) + "].";
                     out.push_back(base + "log_weight");
                     out.push_back(base + "log_frequency");
                     out.push_back(base + "log_freq_var");
                   }
                 },
                 [&](const Product& k) {
                   names_rec(*k.left, prefix + "left.", out);
                   names_rec(*k.right, prefix + "right.", out);
                 },
             },
             spec.node());
}

}  // namespace

bool Product::operator==(const Product& other) const {
  if (!left || !right || !other.left || !other.right) return left == other.left && right == other.right;
  return *left == *other.left && *right == *other.right;
}

KernelSpec::KernelSpec(SpectralMixture n) : node_(std::move(n)) {
  if (std::get<SpectralMixture>(node_).components.empty())
    throw std::invalid_argument("spectral mixture needs at least one component");
}

KernelSpec::KernelSpec(Product n) : node_(std::move(n)) {
  const auto& p = std::get<Product>(node_);
  if (!p.left || !p.right) throw std::invalid_argument("product kernel needs two children");
}

KernelSpec KernelSpec::rbf(double lengthscale, double signal_var) {
  return Rbf{std::log(lengthscale), std::log(signal_var)};
}

KernelSpec KernelSpec::rq(double lengthscale, double signal_var, double alpha) {
  return Rq{std::log(lengthscale), std::log(signal_var), std::log(alpha)};
}

KernelSpec KernelSpec::linear(double slope_var, double offset) {
  return Linear{std::log(slope_var), offset};
}

KernelSpec KernelSpec::spectral_mixture(const std::vector<std::array<double, 3>>& components) {
  SpectralMixture sm;
  for (const auto& [w, mu, v] : components)
    sm.components.push_back({std::log(w), std::log(mu), std::log(v)});
  return sm;
}

KernelSpec KernelSpec::product(KernelSpec left, KernelSpec right) {
  return Product{std::make_shared<const KernelSpec>(std::move(left)),
                 std::make_shared<const KernelSpec>(std::move(right))};
}

std::size_t KernelSpec::num_params() const {
  return std::visit(Overloaded{
                        [](const Rbf&) -> std::size_t { return 2; },
                        [](const Rq&) -> std::size_t { return 3; },
                        [](const Linear&) -> std::size_t { return 2; },
                        [](const SpectralMixture& k) -> std::size_t { return 3 * k.components.size(); },
                        [](const Product& k) -> std::size_t {
                          return k.left->num_params() + k.right->num_params();
                        },
                    },
                    node_);
}

void validate(const KernelSpec& spec) {
  if (const auto* p = std::get_if<Product>(&spec.node())) {
    if (!p->left || !p->right) throw std::invalid_argument("product kernel needs two children");
    validate(*p->left);
    validate(*p->right);
    return;
  }
  if (const auto* sm = std::get_if<SpectralMixture>(&spec.node()); sm && sm->components.empty())
    throw std::invalid_argument("spectral mixture needs at least one component");
  const Eigen::VectorXd v = flatten_params(spec);
  if (!v.allFinite()) throw std::invalid_argument("kernel hyperparameters must be finite");
  // exp() of a finite log value may still overflow or underflow to zero
  for (double p : v)
    if (std::abs(p) > 700.0) throw std::invalid_argument("kernel hyperparameter out of range");
}

double eval_kernel(const KernelSpec& spec, double x, double x2) { return eval_rec(spec, x, x2, nullptr); }

double eval_kernel_grad(const KernelSpec& spec, double x, double x2, double* grad) {
  return eval_rec(spec, x, x2, grad);
}

Eigen::MatrixXd kernel_matrix(const KernelSpec& spec, const Eigen::VectorXd& x, const Eigen::VectorXd& x2) {
  Eigen::MatrixXd k(x.size(), x2.size());
  for (Eigen::Index j = 0; j < x2.size(); ++j)
    for (Eigen::Index i = 0; i < x.size(); ++i) k(i, j) = eval_rec(spec, x[i], x2[j], nullptr);
  return k;
}

namespace {

// Spectral mixtures dominate fitting time, so their Gram and gradient
// matrices are built with array expressions instead of per-entry recursion.
void sm_matrices(const SpectralMixture& k, const Eigen::VectorXd& x, Eigen::MatrixXd* gram,
                 std::vector<Eigen::MatrixXd>* grads) {
  const Eigen::Index n = x.size();
  if (gram) gram->setZero(n, n);
  struct Comp {
    double w, mu, var;
  };
  std::vector<Comp> comps;
  for (const auto& c : k.components) comps.push_back({std::exp(c.log_weight), std::exp(c.log_frequency), std::exp(c.log_freq_var)});
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::Index len = n - j;
    const Eigen::ArrayXd tau = x.tail(len).array() - x[j];
    const Eigen::ArrayXd tau2 = tau.square();
    for (std::size_t q = 0; q < comps.size(); ++q) {
      const auto [w, mu, var] = comps[q];
      const Eigen::ArrayXd envelope = (-kTwoPiSq * var * tau2).exp();
      const Eigen::ArrayXd phase = (2.0 * kPi * mu) * tau;
      const Eigen::ArrayXd term = w * envelope * phase.cos();
      if (gram) gram->col(j).tail(len).array() += term;
      if (grads) {
        (*grads)[3 * q + 0].col(j).tail(len) = term.matrix();
        (*grads)[3 * q + 1].col(j).tail(len) = (-w * envelope * phase.sin() * phase).matrix();
        (*grads)[3 * q + 2].col(j).tail(len) = (-kTwoPiSq * var * tau2 * term).matrix();
      }
    }
  }
  if (gram) *gram = gram->selfadjointView<Eigen::Lower>();
  if (grads)
    for (auto& g : *grads) g = g.selfadjointView<Eigen::Lower>();
}

}  // namespace

Eigen::MatrixXd kernel_matrix(const KernelSpec& spec, const Eigen::VectorXd& x) {
  const Eigen::Index n = x.size();
  if (const auto* sm = std::get_if<SpectralMixture>(&spec.node())) {
    Eigen::MatrixXd k;
    sm_matrices(*sm, x, &k, nullptr);
    return k;
  }
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = j; i < n; ++i) k(i, j) = k(j, i) = eval_rec(spec, x[i], x[j], nullptr);
  return k;
}

std::vector<Eigen::MatrixXd> kernel_grads(const KernelSpec& spec, const Eigen::VectorXd& x) {
  const Eigen::Index n = x.size();
  const std::size_t p = spec.num_params();
  std::vector<Eigen::MatrixXd> out(p, Eigen::MatrixXd(n, n));
  if (const auto* sm = std::get_if<SpectralMixture>(&spec.node())) {
    sm_matrices(*sm, x, nullptr, &out);
    return out;
  }
  std::vector<double> g(p);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = j; i < n; ++i) {
      eval_rec(spec, x[i], x[j], g.data());
      for (std::size_t t = 0; t < p; ++t) out[t](i, j) = out[t](j, i) = g[t];
    }
  }
  return out;
}

Eigen::VectorXd flatten_params(const KernelSpec& spec) {
  std::vector<double> out;
  out.reserve(spec.num_params());
  flatten_rec(spec, out);
  return Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
}

KernelSpec unflatten_params(const KernelSpec& templ, const Eigen::VectorXd& params) {
  const std::size_t expected = templ.num_params();
  if (static_cast<std::size_t>(params.size()) != expected)
    throw std::invalid_argument("parameter vector has length " + std::to_string(params.size()) +
                                ", kernel expects " + std::to_string(expected));
  const double* p = params.data();
  return unflatten_rec(templ, p);
}

std::vector<std::string> param_names(const KernelSpec& spec) {
  std::vector<std::string> out;
  names_rec(spec, "", out);
  return out;
}

KernelSpec default_sm_init(double x_range, double y_variance, double nyquist, int q, std::uint64_t seed) {
  if (!(x_range > 0.0) || !(y_variance > 0.0) || !(nyquist > 0.0) || q < 1)
    throw std::invalid_argument("default_sm_init: x_range, y_variance, nyquist must be positive and Q >= 1");
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0 / x_range);
  SpectralMixture sm;
  const double w = y_variance / q;
  for (int i = 0; i < q; ++i) {
    // (0, nyquist]: log(0) is not representable
    const double mu = nyquist * (1.0 - unif(rng));
    double sd = std::abs(normal(rng));
    sd = std::max(sd, 1e-3 / x_range);
    sm.components.push_back({std::log(w), std::log(mu), std::log(sd * sd)});
  }
  return sm;
}

double sm_spectral_density(const KernelSpec& spec, double s) {
  const auto* sm = std::get_if<SpectralMixture>(&spec.node());
  if (!sm) throw std::invalid_argument("spectral density requires a spectral mixture kernel");
  double total = 0.0;
  for (const auto& c : sm->components) {
    const double w = std::exp(c.log_weight);
    const double mu = std::exp(c.log_frequency);
    const double v = std::exp(c.log_freq_var);
    const double norm = 1.0 / std::sqrt(2.0 * kPi * v);
    total += 0.5 * w * norm *
             (std::exp(-0.5 * (s - mu) * (s - mu) / v) + std::exp(-0.5 * (s + mu) * (s + mu) / v));
  }
  return total;
}

Eigen::VectorXd kernel_curve(const KernelSpec& spec, const Eigen::VectorXd& taus) {
  Eigen::VectorXd out(taus.size());
  for (Eigen::Index i = 0; i < taus.size(); ++i) out[i] = eval_kernel(spec, 0.0, taus[i]);
  return out;
}

void to_json(nlohmann::json& j, const KernelSpec& spec) {
  std::visit(Overloaded{
                 [&](const Rbf& k) {
                   j = {{"type", "rbf"}, {"log_lengthscale", k.log_lengthscale}, {"log_signal_var", k.log_signal_var}};
                 },
                 [&](const Rq& k) {
                   j = {{"type", "rq"},
                        {"log_lengthscale", k.log_lengthscale},
                        {"log_signal_var", k.log_signal_var},
                        {"log_alpha", k.log_alpha}};
                 },
                 [&](const Linear& k) {
                   j = {{"type", "linear"}, {"log_slope_var", k.log_slope_var}, {"offset_c", k.offset_c}};
                 },
                 [&](const SpectralMixture& k) {
                   nlohmann::json comps = nlohmann::json::array();
                   for (const auto& c : k.components)
                     comps.push_back({{"log_weight", c.log_weight},
                                      {"log_frequency", c.log_frequency},
                                      {"log_freq_var", c.log_freq_var}});
                   j = {{"type", "spectral_mixture"}, {"components", std::move(comps)}};
                 },
                 [&](const Product& k) {
                   j = {{"type", "product"}, {"left", *k.left}, {"right", *k.right}};
                 },
             },
             spec.node());
}

void from_json(const nlohmann::json& j, KernelSpec& spec) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "rbf") {
    spec = Rbf{j.at("log_lengthscale").get<double>(), j.at("log_signal_var").get<double>()};
  } else if (type == "rq") {
    spec = Rq{j.at("log_lengthscale").get<double>(), j.at("log_signal_var").get<double>(),
              j.at("log_alpha").get<double>()};
  } else if (type == "linear") {
    spec = Linear{j.at("log_slope_var").get<double>(), j.at("offset_c").get<double>()};
  } else if (type == "spectral_mixture") {
    SpectralMixture sm;
    for (const auto& c : j.at("components"))
      sm.components.push_back(
          {c.at("log_weight").get<double>(), c.at("log_frequency").get<double>(), c.at("log_freq_var").get<double>()});
    spec = KernelSpec(std::move(sm));
  } else if (type == "product") {
    spec = KernelSpec::product(j.at("left").get<KernelSpec>(), j.at("right").get<KernelSpec>());
  } else {
    throw std::invalid_argument("unknown kernel type '" + type + "'");
  }
  validate(spec);
}

std::string to_string(const KernelSpec& spec) { return nlohmann::json(spec).dump(); }

KernelSpec kernel_from_string(const std::string& text) { return nlohmann::json::parse(text).get<KernelSpec>(); }

}  // namespace hk
