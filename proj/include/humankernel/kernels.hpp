#pragma once

// Covariance kernels over one-dimensional inputs.
//
// A KernelSpec is an immutable expression tree. Every positive hyperparameter
// is stored as its natural logarithm so that the flattened parameter vector
// can be optimized without constraints. The only parameter that is not
// log-transformed is the Linear kernel's offset.
//
//   RBF             s2 * exp(-0.5 r^2 / l^2)
//   RQ              s2 * (1 + r^2 / (2 a l^2))^(-a)
//   Linear          sv * (x - c) * (x' - c)
//   SpectralMixture sum_q w_q * exp(-2 pi^2 r^2 v_q) * cos(2 pi r mu_q)
//   Product         k_left * k_right

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace hk {

struct Rbf {
  double log_lengthscale = 0.0;
  double log_signal_var = 0.0;
  bool operator==(const Rbf&) const = default;
};

struct Rq {
  double log_lengthscale = 0.0;
  double log_signal_var = 0.0;
  double log_alpha = 0.0;
  bool operator==(const Rq&) const = default;
};

struct Linear {
  double log_slope_var = 0.0;
  double offset_c = 0.0;
  bool operator==(const Linear&) const = default;
};

struct SmComponent {
  double log_weight = 0.0;
  double log_frequency = 0.0;  // cycles per input unit
  double log_freq_var = 0.0;
  bool operator==(const SmComponent&) const = default;
};

struct SpectralMixture {
  std::vector<SmComponent> components;
  bool operator==(const SpectralMixture&) const = default;
};

class KernelSpec;

struct Product {
  std::shared_ptr<const KernelSpec> left;
  std::shared_ptr<const KernelSpec> right;
  bool operator==(const Product& other) const;
};

class KernelSpec {
 public:
  using Node = std::variant<Rbf, Rq, Linear, SpectralMixture, Product>;

  KernelSpec() : node_(Rbf{}) {}
  KernelSpec(Rbf n) : node_(n) {}
  KernelSpec(Rq n) : node_(n) {}
  KernelSpec(Linear n) : node_(n) {}
  KernelSpec(SpectralMixture n);
  KernelSpec(Product n);

  // Constructors from natural (not log) values.
  static KernelSpec rbf(double lengthscale, double signal_var);
  static KernelSpec rq(double lengthscale, double signal_var, double alpha);
  static KernelSpec linear(double slope_var, double offset);
  // Each triple is (weight, frequency, frequency variance).
  static KernelSpec spectral_mixture(const std::vector<std::array<double, 3>>& components);
  static KernelSpec product(KernelSpec left, KernelSpec right);

  const Node& node() const noexcept { return node_; }
  std::size_t num_params() const;

  template <class T>
  bool is() const noexcept {
    return std::holds_alternative<T>(node_);
  }
  template <class T>
  const T& as() const {
    return std::get<T>(node_);
  }

  bool operator==(const KernelSpec& other) const { return node_ == other.node_; }

 private:
  Node node_;
};

// Throws std::invalid_argument on non-finite parameters, empty mixtures or
// null product children.
void validate(const KernelSpec& spec);

double eval_kernel(const KernelSpec& spec, double x, double x2);

// Value of the kernel and its gradient with respect to the flattened
// parameters, written to `grad` (length num_params()).
double eval_kernel_grad(const KernelSpec& spec, double x, double x2, double* grad);

Eigen::MatrixXd kernel_matrix(const KernelSpec& spec, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& x2);
Eigen::MatrixXd kernel_matrix(const KernelSpec& spec, const Eigen::VectorXd& x);

// dK/dtheta_i for every flattened parameter, in flattening order.
std::vector<Eigen::MatrixXd> kernel_grads(const KernelSpec& spec, const Eigen::VectorXd& x);

// Depth-first, field-declaration order.
Eigen::VectorXd flatten_params(const KernelSpec& spec);
KernelSpec unflatten_params(const KernelSpec& templ, const Eigen::VectorXd& params);
std::vector<std::string> param_names(const KernelSpec& spec);

// Randomly initialized spectral mixture with Q components. Frequencies are
// uniform on (0, nyquist], weights are y_variance / Q and frequency standard
// deviations are |Normal(0, 1 / x_range)|.
KernelSpec default_sm_init(double x_range, double y_variance, double nyquist, int q,
                           std::uint64_t seed);

// Spectral density of a spectral-mixture kernel at frequency s (symmetrized
// Gaussian mixture). Throws if the kernel is not a SpectralMixture.
double sm_spectral_density(const KernelSpec& spec, double s);

// k(tau) = k(0, tau) evaluated along a lag grid.
Eigen::VectorXd kernel_curve(const KernelSpec& spec, const Eigen::VectorXd& taus);

void to_json(nlohmann::json& j, const KernelSpec& spec);
void from_json(const nlohmann::json& j, KernelSpec& spec);

std::string to_string(const KernelSpec& spec);
KernelSpec kernel_from_string(const std::string& text);

}  // namespace hk
