#pragma once

// Run configuration: one JSON document covering every pipeline stage.
// The default document doubles as the schema: unknown keys and type
// mismatches are rejected, and `--set a.b=value` overrides follow the same
// paths.

#include "cdcflow/core/error.hpp"
#include "cdcflow/dataio.hpp"
#include "cdcflow/flowpath.hpp"
#include "cdcflow/geometry.hpp"
#include "cdcflow/metrics.hpp"
#include "cdcflow/ode.hpp"
#include "cdcflow/train.hpp"

#include <json.hpp>

#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace cdcflow::cli {

using json = nlohmann::ordered_json;

struct EvalSettings {
  double cutoff = kDefaultMemorisationCutoff;
  Index n_samples = 0;
  std::uint64_t seed = 1;
  /// auto | none | reference
  std::string manifold = "auto";
  bool nll = true;
};

/// Each non-empty list becomes one axis of the sweep grid.
struct SweepGrid {
  std::vector<std::int64_t> epochs;
  std::vector<std::string> kind;
  std::vector<double> gamma_scale;
  std::vector<Index> d_cdc;
  std::vector<double> sigma_min;
  std::vector<Index> n_train;
};

struct RunConfig {
  std::string out = "out";
  DatasetSpec dataset;
  /// Source cloud for two-sided flows.
  std::optional<DatasetSpec> source;
  GammaConfig gamma;
  FlowConfig flow;
  Index hidden_layers = 4;
  Index width = 512;
  std::int64_t epochs = 1000;
  Index batch_size = 256;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 0;
  SolverConfig solver;
  EvalSettings eval;
  SweepGrid sweep;

  TrainConfig train_config() const {
    TrainConfig t;
    t.epochs = epochs;
    t.batch_size = batch_size;
    t.learning_rate = learning_rate;
    t.seed = seed;
    t.checkpoint_every = checkpoint_every;
    t.flow = flow;
    t.hidden_layers = hidden_layers;
    t.width = width;
    return t;
  }

  void validate() const {
    dataset.validate();
    if (source) source->validate();
    if (flow.kind == FlowKind::two_sided && !source) throw ConfigError("flow.kind 'two_sided' needs a 'source' dataset");
    train_config().validate();
    MlpArchitecture{1, hidden_layers, width}.validate();
    solver.validate();
    if (!(eval.cutoff > 0)) throw ConfigError("eval.cutoff must be > 0");
    if (eval.n_samples < 0) throw ConfigError("eval.n_samples must be >= 0");
    if (eval.manifold != "auto" && eval.manifold != "none" && eval.manifold != "reference")
      throw ConfigError("eval.manifold must be auto, none or reference");
    for (const auto& k : sweep.kind) flow_kind_from_string(k);
    for (auto e : sweep.epochs)
      if (e < 1) throw ConfigError("sweep.epochs entries must be >= 1");
    if (out.empty()) throw ConfigError("out must not be empty");
  }
};

inline json dataset_to_json(const DatasetSpec& d) {
  json j;
  j["kind"] = std::string(to_string(d.kind));
  j["n_train"] = d.n_train;
  j["n_test"] = d.n_test;
  j["dim"] = d.dim;
  j["radii"] = d.radii;
  j["noise_sigma"] = d.noise_sigma;
  j["seed"] = d.seed;
  j["path"] = d.path;
  return j;
}

inline DatasetSpec dataset_from_json(const json& j) {
  DatasetSpec d;
  d.kind = dataset_kind_from_string(j.at("kind").get<std::string>());
  d.n_train = j.at("n_train").get<Index>();
  d.n_test = j.at("n_test").get<Index>();
  d.dim = j.at("dim").get<Index>();
  d.radii = j.at("radii").get<std::vector<double>>();
  d.noise_sigma = j.at("noise_sigma").get<double>();
  d.seed = j.at("seed").get<std::uint64_t>();
  d.path = j.at("path").get<std::string>();
  return d;
}

inline json to_json(const RunConfig& c) {
  json j;
  j["out"] = c.out;
  j["dataset"] = dataset_to_json(c.dataset);
  j["source"] = c.source ? dataset_to_json(*c.source) : json(nullptr);
  j["gamma"] = {{"k", c.gamma.k},
                {"k_bw", c.gamma.k_bw},
                {"d_cdc", c.gamma.d_cdc},
                {"gamma_scale", c.gamma.gamma_scale},
                {"sigma_min_extra", c.gamma.sigma_min_extra}};
  j["flow"] = {{"kind", std::string(to_string(c.flow.kind))},
               {"sigma_min", c.flow.sigma_min},
               {"pairing", std::string(to_string(c.flow.pairing))}};
  j["model"] = {{"hidden_layers", c.hidden_layers}, {"width", c.width}};
  j["train"] = {{"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"learning_rate", c.learning_rate},
                {"seed", c.seed},
                {"checkpoint_every", c.checkpoint_every}};
  j["solver"] = {{"method", std::string(to_string(c.solver.method))},
                 {"atol", c.solver.atol},
                 {"rtol", c.solver.rtol},
                 {"max_steps", c.solver.max_steps},
                 {"steps", c.solver.steps}};
  j["eval"] = {{"cutoff", c.eval.cutoff},
               {"n_samples", c.eval.n_samples},
               {"seed", c.eval.seed},
               {"manifold", c.eval.manifold},
               {"nll", c.eval.nll}};
  j["sweep"] = {{"epochs", c.sweep.epochs},         {"kind", c.sweep.kind},   {"gamma_scale", c.sweep.gamma_scale},
                {"d_cdc", c.sweep.d_cdc},           {"sigma_min", c.sweep.sigma_min}, {"n_train", c.sweep.n_train}};
  return j;
}

/// Reads a complete (already schema-checked) document.
inline RunConfig from_json(const json& j) {
  try {
    RunConfig c;
    c.out = j.at("out").get<std::string>();
    c.dataset = dataset_from_json(j.at("dataset"));
    if (!j.at("source").is_null()) c.source = dataset_from_json(j.at("source"));
    const auto& g = j.at("gamma");
    c.gamma.k = g.at("k").get<Index>();
    c.gamma.k_bw = g.at("k_bw").get<Index>();
    c.gamma.d_cdc = g.at("d_cdc").get<Index>();
    c.gamma.gamma_scale = g.at("gamma_scale").get<double>();
    c.gamma.sigma_min_extra = g.at("sigma_min_extra").get<double>();
    const auto& f = j.at("flow");
    c.flow.kind = flow_kind_from_string(f.at("kind").get<std::string>());
    c.flow.sigma_min = f.at("sigma_min").get<double>();
    c.flow.pairing = pairing_from_string(f.at("pairing").get<std::string>());
    c.hidden_layers = j.at("model").at("hidden_layers").get<Index>();
    c.width = j.at("model").at("width").get<Index>();
    const auto& t = j.at("train");
    c.epochs = t.at("epochs").get<std::int64_t>();
    c.batch_size = t.at("batch_size").get<Index>();
    c.learning_rate = t.at("learning_rate").get<double>();
    c.seed = t.at("seed").get<std::uint64_t>();
    c.checkpoint_every = t.at("checkpoint_every").get<std::int64_t>();
    const auto& s = j.at("solver");
    c.solver.method = solver_method_from_string(s.at("method").get<std::string>());
    c.solver.atol = s.at("atol").get<double>();
    c.solver.rtol = s.at("rtol").get<double>();
    c.solver.max_steps = s.at("max_steps").get<std::int64_t>();
    c.solver.steps = s.at("steps").get<std::int64_t>();
    const auto& e = j.at("eval");
    c.eval.cutoff = e.at("cutoff").get<double>();
    c.eval.n_samples = e.at("n_samples").get<Index>();
    c.eval.seed = e.at("seed").get<std::uint64_t>();
    c.eval.manifold = e.at("manifold").get<std::string>();
    c.eval.nll = e.at("nll").get<bool>();
    const auto& w = j.at("sweep");
    c.sweep.epochs = w.at("epochs").get<std::vector<std::int64_t>>();
    c.sweep.kind = w.at("kind").get<std::vector<std::string>>();
    c.sweep.gamma_scale = w.at("gamma_scale").get<std::vector<double>>();
    c.sweep.d_cdc = w.at("d_cdc").get<std::vector<Index>>();
    c.sweep.sigma_min = w.at("sigma_min").get<std::vector<double>>();
    c.sweep.n_train = w.at("n_train").get<std::vector<Index>>();
    return c;
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("invalid config: ") + ex.what());
  }
}

namespace detail {

/// Schema = default document, with nullable objects expanded.
inline json schema() {
  json s = to_json(RunConfig{});
  s["source"] = dataset_to_json(DatasetSpec{});
  return s;
}

inline bool nullable(const std::string& path) { return path == "source"; }

inline std::string type_name(const json& v) {
  if (v.is_number_integer()) return "integer";
  if (v.is_number()) return "number";
  return v.type_name();
}

inline void check_value(const json& schema, const json& value, const std::string& path);

inline void check_array(const json& schema, const json& value, const std::string& path) {
  // Element type comes from the default element or from the field's default
  // type (empty defaults: sweep lists).
  static const json element_types = {{"dataset.radii", 1.0},   {"source.radii", 1.0},  {"sweep.epochs", 1},
                                     {"sweep.kind", "fm"},     {"sweep.gamma_scale", 1.0}, {"sweep.d_cdc", 1},
                                     {"sweep.sigma_min", 0.0}, {"sweep.n_train", 1}};
  const auto it = element_types.find(path);
  const json element = it != element_types.end() ? *it : (schema.empty() ? json() : schema.front());
  for (std::size_t i = 0; i < value.size(); ++i) check_value(element, value[i], path + "[" + std::to_string(i) + "]");
}

inline void check_value(const json& schema, const json& value, const std::string& path) {
  auto mismatch = [&] {
    throw ConfigError("config key '" + path + "' expects " + type_name(schema) + ", got " + type_name(value));
  };
  if (schema.is_object()) {
    if (!value.is_object()) mismatch();
    for (const auto& [k, v] : value.items()) {
      const std::string sub = path.empty() ? k : path + "." + k;
      if (!schema.contains(k)) throw ConfigError("unknown config key '" + sub + "'");
      if (v.is_null() && nullable(sub)) continue;
      check_value(schema.at(k), v, sub);
    }
  } else if (schema.is_array()) {
    if (!value.is_array()) mismatch();
    check_array(schema, value, path);
  } else if (schema.is_number_integer()) {
    if (!value.is_number_integer()) mismatch();
    if (schema.is_number_unsigned() && value.get<std::int64_t>() < 0) mismatch();
  } else if (schema.is_number()) {
    if (!value.is_number()) mismatch();
  } else if (schema.is_boolean()) {
    if (!value.is_boolean()) mismatch();
  } else if (schema.is_string()) {
    if (!value.is_string()) mismatch();
  }
}

inline void merge(json& base, const json& patch) {
  for (const auto& [k, v] : patch.items()) {
    if (v.is_object() && base.contains(k) && base[k].is_object()) {
      merge(base[k], v);
    } else if (v.is_object() && base.contains(k) && base[k].is_null()) {
      base[k] = detail::schema().at(k);
      merge(base[k], v);
    } else {
      base[k] = v;
    }
  }
}

}  // namespace detail

/// Parses `a.b.c=value` into a JSON patch. The value is read as JSON when it
/// parses (numbers, booleans, arrays, null), else as a bare string.
inline json parse_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json patch = value;
  std::size_t end = key.size();
  while (true) {
    const auto dot = key.rfind('.', end - 1);
    const std::string part = key.substr(dot == std::string::npos ? 0 : dot + 1, end - (dot == std::string::npos ? 0 : dot + 1));
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    patch = json{{part, patch}};
    if (dot == std::string::npos) break;
    end = dot;
  }
  return patch;
}

/// Defaults <- document <- overrides, each layer schema-checked.
inline RunConfig resolve_config(const json& document, const std::vector<std::string>& overrides = {}) {
  const json schema = detail::schema();
  json merged = to_json(RunConfig{});
  detail::check_value(schema, document, "");
  detail::merge(merged, document);
  for (const auto& o : overrides) {
    const json patch = parse_override(o);
    detail::check_value(schema, patch, "");
    detail::merge(merged, patch);
  }
  RunConfig c = from_json(merged);
  c.validate();
  return c;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config '" + path + "' is not valid JSON");
  return j;
}

inline RunConfig load_config(const std::optional<std::string>& path, const std::vector<std::string>& overrides = {}) {
  return resolve_config(path ? read_json_file(*path) : json::object(), overrides);
}

inline void write_json_file(const json& j, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw Error("write failed for '" + path + "'");
}

}  // namespace cdcflow::cli
