#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "nss/errors.hpp"
#include "nss/io.hpp"
#include "nss/objectives.hpp"
#include "nss/process_oracle.hpp"
#include "nss/search.hpp"
#include "nss/serde.hpp"
#include "nss/space.hpp"
#include "nss/supernet.hpp"

namespace nss {

enum class OracleKind { analytic_surrogate, tabular, external_process, toy_supernet };

inline std::string to_string(OracleKind k) {
  switch (k) {
    case OracleKind::analytic_surrogate: return "analytic_surrogate";
    case OracleKind::tabular: return "tabular";
    case OracleKind::external_process: return "external_process";
    case OracleKind::toy_supernet: return "toy_supernet";
  }
  return "?";
}

inline OracleKind oracle_kind_from_string(const std::string& s) {
  if (s == "analytic_surrogate") return OracleKind::analytic_surrogate;
  if (s == "tabular") return OracleKind::tabular;
  if (s == "external_process") return OracleKind::external_process;
  if (s == "toy_supernet") return OracleKind::toy_supernet;
  throw validation_error("unknown oracle kind: " + s);
}

inline std::string to_string(LossKind k) {
  return k == LossKind::mean_squared_error ? "mean_squared_error" : "cross_entropy";
}

inline LossKind loss_kind_from_string(const std::string& s) {
  if (s == "mean_squared_error" || s == "mse") return LossKind::mean_squared_error;
  if (s == "cross_entropy") return LossKind::cross_entropy;
  throw validation_error("unknown loss kind: " + s);
}

inline json to_json(const SupernetTrainConfig& c) {
  return json{{"steps", c.steps},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"warmup", json{{"p_start", c.warmup.p_start}, {"duration_steps", c.warmup.duration_steps}}},
              {"loss", to_string(c.loss)},
              {"inner_steps_per_theta", c.inner_steps_per_theta}};
}

inline SupernetTrainConfig supernet_train_config_from_json(const json& j) {
  SupernetTrainConfig c;
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  if (j.contains("warmup")) {
    c.warmup.p_start = j.at("warmup").value("p_start", c.warmup.p_start);
    c.warmup.duration_steps = j.at("warmup").value("duration_steps", c.warmup.duration_steps);
  }
  if (j.contains("loss")) c.loss = loss_kind_from_string(j.at("loss").get<std::string>());
  c.inner_steps_per_theta = j.value("inner_steps_per_theta", c.inner_steps_per_theta);
  c.validate();
  return c;
}

/// Declarative oracle selection: exactly one kind with its parameters,
/// validated at load, instantiated on demand.
struct OracleSpec {
  OracleKind kind = OracleKind::analytic_surrogate;

  // analytic_surrogate; per-stage vectors stay empty to mean "defaults".
  SurrogateParams surrogate;
  bool surrogate_has_stage_params = false;

  // tabular
  std::string table_path;

  // external_process
  std::vector<std::string> command;
  double timeout_seconds = 600.0;

  // toy_supernet
  std::string checkpoint_path;  // optional; empty means "train inside the search"
  SyntheticTask task;
  SupernetTrainConfig train;

  void validate(const ExpandedSpaceConfig& cfg) const {
    switch (kind) {
      case OracleKind::analytic_surrogate:
        if (surrogate_has_stage_params) surrogate.validate(cfg);
        break;
      case OracleKind::tabular:
        if (table_path.empty()) throw validation_error("tabular oracle needs a path");
        break;
      case OracleKind::external_process:
        if (command.empty()) throw validation_error("external oracle needs a command");
        if (!(timeout_seconds > 0)) throw validation_error("oracle timeout must be > 0");
        break;
      case OracleKind::toy_supernet:
        task.validate();
        train.validate();
        break;
    }
  }

  SurrogateParams resolved_surrogate(const ExpandedSpaceConfig& cfg) const {
    if (surrogate_has_stage_params) return surrogate;
    SurrogateParams p = SurrogateParams::defaults(cfg);
    p.error_floor = surrogate.error_floor;
    p.scale = surrogate.scale;
    p.flops_exponent = surrogate.flops_exponent;
    p.flops_ref = surrogate.flops_ref;
    p.noise_scale = surrogate.noise_scale;
    p.noise_seed = surrogate.noise_seed;
    return p;
  }
};

inline json to_json(const OracleSpec& o) {
  json j{{"kind", to_string(o.kind)}};
  switch (o.kind) {
    case OracleKind::analytic_surrogate:
      j["error_floor"] = o.surrogate.error_floor;
      j["scale"] = o.surrogate.scale;
      j["flops_exponent"] = o.surrogate.flops_exponent;
      j["flops_ref"] = o.surrogate.flops_ref;
      j["noise_scale"] = o.surrogate.noise_scale;
      j["noise_seed"] = o.surrogate.noise_seed;
      if (o.surrogate_has_stage_params) {
        j["shape_weight"] = o.surrogate.shape_weight;
        j["optimum_depths"] = o.surrogate.optimum_depths;
        j["optimum_widths"] = o.surrogate.optimum_widths;
      }
      break;
    case OracleKind::tabular:
      j["path"] = o.table_path;
      break;
    case OracleKind::external_process:
      j["command"] = o.command;
      j["timeout_seconds"] = o.timeout_seconds;
      break;
    case OracleKind::toy_supernet:
      if (!o.checkpoint_path.empty()) j["checkpoint"] = o.checkpoint_path;
      j["task"] = to_json(o.task);
      j["loss"] = to_string(o.train.loss);
      j["train"] = to_json(o.train);
      break;
  }
  return j;
}

inline OracleSpec oracle_spec_from_json(const json& j) {
  OracleSpec o;
  o.kind = oracle_kind_from_string(j.at("kind").get<std::string>());
  switch (o.kind) {
    case OracleKind::analytic_surrogate:
      o.surrogate.error_floor = j.value("error_floor", o.surrogate.error_floor);
      o.surrogate.scale = j.value("scale", o.surrogate.scale);
      o.surrogate.flops_exponent = j.value("flops_exponent", o.surrogate.flops_exponent);
      o.surrogate.flops_ref = j.value("flops_ref", o.surrogate.flops_ref);
      o.surrogate.noise_scale = j.value("noise_scale", o.surrogate.noise_scale);
      o.surrogate.noise_seed = j.value("noise_seed", o.surrogate.noise_seed);
      if (j.contains("shape_weight") || j.contains("optimum_depths") || j.contains("optimum_widths")) {
        o.surrogate.shape_weight = j.at("shape_weight").get<std::vector<double>>();
        o.surrogate.optimum_depths = j.at("optimum_depths").get<std::vector<int>>();
        o.surrogate.optimum_widths = j.at("optimum_widths").get<std::vector<int>>();
        o.surrogate_has_stage_params = true;
      }
      break;
    case OracleKind::tabular:
      o.table_path = j.at("path").get<std::string>();
      break;
    case OracleKind::external_process:
      o.command = j.at("command").get<std::vector<std::string>>();
      o.timeout_seconds = j.value("timeout_seconds", o.timeout_seconds);
      break;
    case OracleKind::toy_supernet:
      o.checkpoint_path = j.value("checkpoint", std::string());
      if (j.contains("task")) o.task = synthetic_task_from_json(j.at("task"));
      if (j.contains("train")) o.train = supernet_train_config_from_json(j.at("train"));
      if (j.contains("loss")) o.train.loss = loss_kind_from_string(j.at("loss").get<std::string>());
      break;
  }
  return o;
}

/// Supernet oracle that owns its weights and task data (for use outside a
/// bilevel run, where the weights come from a checkpoint).
class FrozenSupernetOracle final : public Oracle {
 public:
  FrozenSupernetOracle(SuperNetParams params, TaskData data, LossKind loss)
      : params_(std::move(params)), data_(std::move(data)), inner_(params_, data_, loss) {}

  double eval(const NetworkConfig& a, Rng& rng) override { return inner_.eval(a, rng); }
  bool differentiable() const override { return true; }

 private:
  SuperNetParams params_;
  TaskData data_;
  SupernetOracle inner_;
};

inline std::unique_ptr<Oracle> make_oracle(const OracleSpec& spec, const ExpandedSpaceConfig& cfg) {
  spec.validate(cfg);
  switch (spec.kind) {
    case OracleKind::analytic_surrogate:
      return std::make_unique<SurrogateOracle>(cfg, spec.resolved_surrogate(cfg));
    case OracleKind::tabular:
      return std::make_unique<TabularOracle>(spec.table_path, cfg.num_stages);
    case OracleKind::external_process:
      return std::make_unique<ExternalProcessOracle>(spec.command, spec.timeout_seconds);
    case OracleKind::toy_supernet: {
      if (spec.checkpoint_path.empty())
        throw validation_error("toy_supernet oracle needs a checkpoint outside a bilevel search");
      const json j = json::parse(read_text_file(spec.checkpoint_path));
      SuperNetParams params = supernet_from_json(j);
      TaskData data = generate_task(spec.task);
      if (params.cfg.input_dim != spec.task.input_dim || params.cfg.output_dim != spec.task.output_dim)
        throw validation_error("supernet checkpoint dimensions do not match the task");
      return std::make_unique<FrozenSupernetOracle>(std::move(params), std::move(data),
                                                    spec.train.loss);
    }
  }
  throw validation_error("unreachable oracle kind");
}

/// One experiment: a space, an oracle, a search config, and where to write.
/// flops_target may be a list; each entry expands into its own subdirectory.
struct ExperimentConfig {
  ExpandedSpaceConfig space;
  OracleSpec oracle;
  SearchConfig search;
  std::vector<std::int64_t> targets;  // >= 1 entry; search.flops_target tracks the first
  bool targets_listed = false;        // whether the config spelled a list
  std::string out_dir = "out";
  std::uint64_t seed = 0;

  static ExperimentConfig from_json(const json& j) {
    ExperimentConfig e;
    if (j.contains("space")) e.space = space_config_from_json(j.at("space"));
    if (j.contains("oracle")) e.oracle = oracle_spec_from_json(j.at("oracle"));
    e.seed = j.value("seed", e.seed);
    if (j.contains("search")) {
      json sj = j.at("search");
      if (sj.contains("flops_target") && sj.at("flops_target").is_array()) {
        e.targets_listed = true;
        for (const json& t : sj.at("flops_target"))
          e.targets.push_back(static_cast<std::int64_t>(t.get<double>()));
      }
      if (!sj.contains("seed")) sj["seed"] = e.seed;
      e.search = search_config_from_json(sj);
    } else {
      e.search.seed = e.seed;
    }
    if (e.targets.empty()) e.targets.push_back(e.search.flops_target.target);
    e.out_dir = j.value("out_dir", e.out_dir);
    e.validate();
    return e;
  }

  static ExperimentConfig load(const std::filesystem::path& path) {
    json j;
    try {
      j = json::parse(read_text_file(path));
    } catch (const json::exception& ex) {
      throw validation_error(path.string() + ": " + ex.what());
    }
    return from_json(j);
  }

  void validate() const {
    space.validate();
    search.validate();
    oracle.validate(space);
    if (targets.empty()) throw validation_error("experiment needs at least one flops target");
    for (std::int64_t t : targets)
      if (t <= 0) throw validation_error("flops targets must be > 0");
  }

  /// (subdirectory, per-target search config) pairs. A single scalar target
  /// runs in the output directory itself.
  std::vector<std::pair<std::string, SearchConfig>> expand() const {
    std::vector<std::pair<std::string, SearchConfig>> out;
    for (std::int64_t t : targets) {
      SearchConfig sc = search;
      sc.flops_target.target = t;
      std::string sub = targets_listed || targets.size() > 1 ? "target_" + std::to_string(t) : "";
      out.emplace_back(std::move(sub), std::move(sc));
    }
    return out;
  }

  std::uint64_t config_hash() const {
    json j{{"space", nss::to_json(space)},
           {"oracle", nss::to_json(oracle)},
           {"search", nss::to_json(search)},
           {"targets", targets},
           {"seed", seed}};
    return fnv1a64(j.dump());
  }
};

}  // namespace nss
