#include "humankernel/config.hpp"

#include <set>
#include <stdexcept>
#include <type_traits>

#include "humankernel/responses.hpp"

namespace hk {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Each record lists its fields once; the same list drives reading and writing.
template <class F>
void fields(FitSettings& c, F&& f) {
  f("restarts", c.restarts);
  f("max_iters", c.max_iters);
  f("grad_tol", c.grad_tol);
}

template <class F>
void fields(StimulusGrid& c, F&& f) {
  f("lo", c.lo);
  f("hi", c.hi);
  f("n_train", c.n_train);
  f("test_hi", c.test_hi);
  f("n_test", c.n_test);
}

template <class F>
void fields(StimulusSetConfig& c, F&& f) {
  f("name", c.name);
  f("truth", c.truth);
  f("noise_var", c.noise_var);
  f("stimuli", c.stimuli);
  f("responders", c.responders);
  f("grid", c.grid);
}

template <class F>
void fields(FilterThresholds& c, F&& f) {
  f("rt_min_s", c.rt_min_s);
  f("rt_max_s", c.rt_max_s);
  f("variation_max", c.variation_max);
  f("measure", c.measure);
}

template <class F>
void fields(ReconstructionConfig& c, F&& f) {
  f("data_kernel", c.data_kernel);
  f("data_noise_var", c.data_noise_var);
  f("prediction_kernel", c.prediction_kernel);
  f("prediction_noise_var", c.prediction_noise_var);
  f("n_train", c.n_train);
  f("train_lo", c.train_lo);
  f("train_hi", c.train_hi);
  f("n_test", c.n_test);
  f("test_hi", c.test_hi);
  f("draws", c.draws);
  f("learner_components", c.learner_components);
  f("trials", c.trials);
  f("tau_max", c.tau_max);
  f("tau_points", c.tau_points);
  f("fit", c.fit);
}

template <class F>
void fields(ProgressiveConfig& c, F&& f) {
  f("set_a", c.set_a);
  f("set_b", c.set_b);
  f("jitter_std", c.jitter_std);
  f("adaptation", c.adaptation);
  f("responder_noise_var", c.responder_noise_var);
  f("learner_components", c.learner_components);
  f("tau_max", c.tau_max);
  f("tau_points", c.tau_points);
  f("fit", c.fit);
}

template <class F>
void fields(UnconventionalConfig& c, F&& f) {
  f("stimulus", c.stimulus);
  f("grid", c.grid);
  f("period", c.period);
  f("amplitude", c.amplitude);
  f("breakpoints", c.breakpoints);
  f("levels", c.levels);
  f("responders", c.responders);
  f("flat_responders", c.flat_responders);
  f("zigzag_responders", c.zigzag_responders);
  f("responder_kernel", c.responder_kernel);
  f("responder_noise_var", c.responder_noise_var);
  f("clusters", c.clusters);
  f("careful_responders", c.careful_responders);
  f("careless_responders", c.careless_responders);
  f("filter", c.filter);
  f("responses_file", c.responses_file);
  f("stimulus_file", c.stimulus_file);
  f("samples_per_cluster", c.samples_per_cluster);
  f("learner_components", c.learner_components);
  f("fit", c.fit);
}

template <class F>
void fields(OccamTaskOptions& c, F&& f) {
  f("domain_lo", c.domain_lo);
  f("domain_hi", c.domain_hi);
  f("pool_points", c.pool_points);
  f("subsample", c.subsample);
  f("display_points", c.display_points);
  f("learn_noise", c.learn_noise);
  f("fit", c.fit);
}

template <class F>
void fields(OccamConfig& c, F&& f) {
  f("family", c.family);
  f("offsets", c.offsets);
  f("tasks", c.tasks);
  f("task", c.task);
  f("rankings_file", c.rankings_file);
  f("tasks_file", c.tasks_file);
}

template <class F>
void fields(BiasConfig& c, F&& f) {
  f("lengthscale", c.lengthscale);
  f("signal_var", c.signal_var);
  f("noise_var", c.noise_var);
  f("density", c.density);
  f("n", c.n);
  f("replicates", c.replicates);
  f("sweep_n", c.sweep_n);
  f("sweep_replicates", c.sweep_replicates);
  f("fit", c.fit);
}

template <class T, class = void>
struct is_record : std::false_type {};
template <class T>
struct is_record<T, std::void_t<decltype(fields(std::declval<T&>(), [](const char*, auto&) {}))>> : std::true_type {};

template <class T>
void merge(const json& j, T& out, const std::string& where);
template <class T>
json dump(const T& v);

template <class T>
void merge_leaf(const json& j, T& out, const std::string& where) {
  try {
    if constexpr (std::is_same_v<T, UnconventionalStimulus>) {
      const std::string s = j.get<std::string>();
      if (s == "sawtooth")
        out = UnconventionalStimulus::Sawtooth;
      else if (s == "step")
        out = UnconventionalStimulus::Step;
      else
        throw std::invalid_argument("expected 'sawtooth' or 'step'");
    } else if constexpr (std::is_same_v<T, VariationMeasure>) {
      const std::string s = j.get<std::string>();
      if (s == "total_variation")
        out = VariationMeasure::TotalVariation;
      else if (s == "range")
        out = VariationMeasure::Range;
      else
        throw std::invalid_argument("expected 'total_variation' or 'range'");
    } else if constexpr (std::is_same_v<T, std::optional<fs::path>>) {
      if (j.is_null())
        out.reset();
      else
        out = fs::path(j.get<std::string>());
    } else {
      out = j.get<T>();
    }
  } catch (const std::exception& e) {
    throw std::invalid_argument("config field " + where + ": " + e.what());
  }
}

template <class T>
void merge(const json& j, T& out, const std::string& where) {
  if constexpr (is_record<T>::value) {
    if (!j.is_object()) throw std::invalid_argument("config field " + where + " must be an object");
    std::set<std::string> known;
    fields(out, [&](const char* key, auto& field) {
      known.insert(key);
      if (j.contains(key)) merge(j.at(key), field, where.empty() ? key : where + "." + key);
    });
    for (const auto& [key, _] : j.items())
      if (!known.count(key)) throw std::invalid_argument("unknown config field " + (where.empty() ? key : where + "." + key));
  } else {
    merge_leaf(j, out, where);
  }
}

template <class T>
json dump(const T& v) {
  if constexpr (is_record<T>::value) {
    json out = json::object();
    fields(const_cast<T&>(v), [&](const char* key, auto& field) { out[key] = dump(field); });
    return out;
  } else if constexpr (std::is_same_v<T, UnconventionalStimulus>) {
    return v == UnconventionalStimulus::Sawtooth ? "sawtooth" : "step";
  } else if constexpr (std::is_same_v<T, VariationMeasure>) {
    return v == VariationMeasure::TotalVariation ? "total_variation" : "range";
  } else if constexpr (std::is_same_v<T, std::optional<fs::path>>) {
    return v ? json(v->string()) : json(nullptr);
  } else {
    return json(v);
  }
}

template <class T>
T resolve(const json& params) {
  T c;
  merge(params.is_null() ? json::object() : params, c, "");
  c.validate();
  return c;
}

}  // namespace

ExperimentConfig parse_experiment_config(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  static const std::set<std::string> known = {"experiment", "seed", "output_dir", "params"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw std::invalid_argument("unknown config field " + key);
  ExperimentConfig c;
  c.experiment = j.value("experiment", std::string());
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("output_dir")) c.output_dir = fs::path(j.at("output_dir").get<std::string>());
  if (j.contains("params")) c.params = j.at("params");
  if (!c.params.is_object()) throw std::invalid_argument("config field params must be an object");
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw std::invalid_argument("cannot parse " + path.string() + ": " + e.what());
  }
  return parse_experiment_config(j);
}

ReconstructionConfig reconstruction_config(const json& params) { return resolve<ReconstructionConfig>(params); }
ProgressiveConfig progressive_config(const json& params) { return resolve<ProgressiveConfig>(params); }
UnconventionalConfig unconventional_config(const json& params) { return resolve<UnconventionalConfig>(params); }
OccamConfig occam_config(const json& params) { return resolve<OccamConfig>(params); }
BiasConfig bias_config(const json& params) { return resolve<BiasConfig>(params); }

json to_json_params(const ReconstructionConfig& c) { return dump(c); }
json to_json_params(const ProgressiveConfig& c) { return dump(c); }
json to_json_params(const UnconventionalConfig& c) { return dump(c); }
json to_json_params(const OccamConfig& c) { return dump(c); }
json to_json_params(const BiasConfig& c) { return dump(c); }

}  // namespace hk
