#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "humankernel/empirical.hpp"
#include "humankernel/errors.hpp"
#include "humankernel/gp.hpp"
#include "humankernel/kernels.hpp"
#include "humankernel/learn.hpp"
#include "humankernel/runner.hpp"

namespace py = pybind11;
using namespace hk;

namespace {

// JSON crosses the boundary as text; the Python package decodes it.
std::string dump(const nlohmann::json& j) { return j.dump(); }

FitOptions fit_options(int restarts, int max_iters, double grad_tol, std::uint64_t seed) {
  FitOptions o;
  o.restarts = restarts;
  o.max_iters = max_iters;
  o.grad_tol = grad_tol;
  o.seed = seed;
  return o;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Gaussian-process kernel learning from human-style extrapolations";

  py::register_exception<CholeskyError>(m, "CholeskyError", PyExc_ArithmeticError);
  py::register_exception<FitError>(m, "FitError", PyExc_RuntimeError);

  py::class_<KernelSpec>(m, "KernelSpec")
      .def_static("rbf", &KernelSpec::rbf, py::arg("lengthscale"), py::arg("signal_var"))
      .def_static("rq", &KernelSpec::rq, py::arg("lengthscale"), py::arg("signal_var"), py::arg("alpha"))
      .def_static("linear", &KernelSpec::linear, py::arg("slope_var"), py::arg("offset"))
      .def_static("spectral_mixture", &KernelSpec::spectral_mixture, py::arg("components"),
                  "Each component is (weight, frequency, frequency variance).")
      .def_static("product", &KernelSpec::product)
      .def_static("parse", &kernel_from_string)
      .def_static("from_json", [](const std::string& s) { return nlohmann::json::parse(s).get<KernelSpec>(); })
      .def("to_json", [](const KernelSpec& k) { return dump(nlohmann::json(k)); })
      .def_property_readonly("num_params", &KernelSpec::num_params)
      .def_property_readonly("params", &flatten_params)
      .def_property_readonly("param_names", &param_names)
      .def("with_params", &unflatten_params)
      .def("__call__", &eval_kernel)
      .def("matrix", py::overload_cast<const KernelSpec&, const Eigen::VectorXd&>(&kernel_matrix))
      .def("cross", py::overload_cast<const KernelSpec&, const Eigen::VectorXd&, const Eigen::VectorXd&>(&kernel_matrix))
      .def("grads", &kernel_grads)
      .def("curve", &kernel_curve, py::arg("taus"))
      .def("__eq__", [](const KernelSpec& a, const KernelSpec& b) { return a == b; })
      .def("__repr__", [](const KernelSpec& k) { return to_string(k); });

  py::class_<GPModel>(m, "GPModel")
      .def(py::init([](KernelSpec k, double noise_var, bool frozen) { return GPModel{std::move(k), std::log(noise_var), frozen}; }),
           py::arg("kernel"), py::arg("noise_var"), py::arg("noise_frozen") = false)
      .def_readwrite("kernel", &GPModel::kernel)
      .def_readwrite("log_noise_var", &GPModel::log_noise_var)
      .def_readwrite("noise_frozen", &GPModel::noise_frozen)
      .def_property_readonly("noise_var", &GPModel::noise_var)
      .def_property_readonly("free_params", &GPModel::free_params)
      .def("with_free_params", &GPModel::with_free_params)
      .def("__repr__", [](const GPModel& g) { return "GPModel(" + to_string(g.kernel) + ", noise_var=" + std::to_string(g.noise_var()) + ")"; });

  py::class_<DrawSet>(m, "DrawSet")
      .def(py::init([](Eigen::VectorXd xt, Eigen::VectorXd yt, Eigen::VectorXd xs, Eigen::MatrixXd ys) {
             DrawSet d{std::move(xt), std::move(yt), std::move(xs), std::move(ys)};
             d.validate();
             return d;
           }),
           py::arg("x_train"), py::arg("y_train"), py::arg("x_test"), py::arg("y_test"))
      .def_readonly("x_train", &DrawSet::x_train)
      .def_readonly("y_train", &DrawSet::y_train)
      .def_readonly("x_test", &DrawSet::x_test)
      .def_readonly("y_test", &DrawSet::y_test)
      .def_property_readonly("num_draws", &DrawSet::num_draws);

  m.def("log_marginal_likelihood", &log_marginal_likelihood, py::arg("model"), py::arg("x"), py::arg("y"));
  m.def("lml_grad", &lml_grad, py::arg("model"), py::arg("x"), py::arg("y"));
  m.def(
      "posterior_predictive",
      [](const GPModel& g, const Eigen::VectorXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& xs, bool noisy) {
        Predictive p = posterior_predictive(g, x, y, xs, noisy);
        return py::make_tuple(p.mean, p.cov);
      },
      py::arg("model"), py::arg("x"), py::arg("y"), py::arg("x_star"), py::arg("noisy") = false);
  m.def("sample_prior", &sample_prior, py::arg("model"), py::arg("x"), py::arg("n_draws"), py::arg("seed"));
  m.def("sample_posterior", &sample_posterior, py::arg("model"), py::arg("x"), py::arg("y"), py::arg("x_star"),
        py::arg("w"), py::arg("seed"), py::arg("noisy") = false);
  m.def("predictive_conditional_lml", &predictive_conditional_lml, py::arg("model"), py::arg("draws"));
  m.def(
      "predictive_conditional_lml_grad",
      [](const GPModel& g, const DrawSet& d) {
        LmlValueGrad r = predictive_conditional_lml_grad(g, d);
        return py::make_tuple(r.value, r.grad);
      },
      py::arg("model"), py::arg("draws"));

  m.def(
      "fit_data_kernel",
      [](const GPModel& t, const Eigen::VectorXd& x, const Eigen::VectorXd& y, int restarts, int max_iters,
         double grad_tol, std::uint64_t seed) {
        FitReport r = fit_data_kernel(t, x, y, fit_options(restarts, max_iters, grad_tol, seed));
        return py::make_tuple(r.best_model, r.best_objective);
      },
      py::arg("template"), py::arg("x"), py::arg("y"), py::arg("restarts") = 10, py::arg("max_iters") = 500,
      py::arg("grad_tol") = 1e-6, py::arg("seed") = 0);
  m.def(
      "fit_prediction_kernel",
      [](const GPModel& t, const DrawSet& d, int restarts, int max_iters, double grad_tol, std::uint64_t seed) {
        FitOptions o = fit_options(restarts, max_iters, grad_tol, seed);
        o.objective = Objective::PredictionML;
        FitReport r = fit_prediction_kernel(t, d, o);
        return py::make_tuple(r.best_model, r.best_objective);
      },
      py::arg("template"), py::arg("draws"), py::arg("restarts") = 10, py::arg("max_iters") = 500,
      py::arg("grad_tol") = 1e-6, py::arg("seed") = 0);

  m.def(
      "empirical_moments",
      [](const Eigen::MatrixXd& y) {
        EmpiricalGaussian g = empirical_moments(y);
        return py::make_tuple(g.mean, g.cov);
      },
      py::arg("y"), "Mean and covariance (divisor M) over the columns of y.");
  m.def(
      "psd_project",
      [](const Eigen::MatrixXd& cov, double floor_ratio) {
        return psd_project(EmpiricalGaussian{Eigen::VectorXd::Zero(cov.rows()), cov, 0, false}, floor_ratio).cov;
      },
      py::arg("cov"), py::arg("floor_ratio") = 1e-10);
  m.def(
      "sample_empirical",
      [](const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, int n, std::uint64_t seed) {
        return sample_empirical(psd_project(EmpiricalGaussian{mean, cov, 0, false}), n, seed);
      },
      py::arg("mean"), py::arg("cov"), py::arg("n"), py::arg("seed"));
  m.def("frobenius_rel_error", &frobenius_rel_error, py::arg("estimate"), py::arg("truth"));

  m.def("experiment_names", &experiment_names);
  m.def(
      "_run_experiment",
      [](const std::string& name, const std::string& params, std::uint64_t seed, const std::filesystem::path& out) {
        RunOutcome r;
        {
          py::gil_scoped_release release;
          r = run_experiment(name, nlohmann::json::parse(params), seed, out);
        }
        return py::make_tuple(dump(r.params), dump(r.summary), r.manifest.written, r.manifest.omitted);
      },
      py::arg("experiment"), py::arg("params"), py::arg("seed"), py::arg("output_dir"));
}
