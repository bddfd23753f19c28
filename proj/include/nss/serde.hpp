#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nss/analysis.hpp"
#include "nss/errors.hpp"
#include "nss/flops.hpp"
#include "nss/rng.hpp"
#include "nss/sampling.hpp"
#include "nss/search.hpp"
#include "nss/space.hpp"
#include "nss/supernet.hpp"
#include "nss/version.hpp"

// JSON bindings for every type that crosses a file boundary. Key names track
// the config schema; readers treat missing keys as "keep the default" so
// minimal configs stay short.

namespace nss {

using json = nlohmann::json;

inline json to_json(const ExpandedSpaceConfig& c) {
  return json{{"num_stages", c.num_stages},
              {"d_max", c.d_max},
              {"w_max", c.w_max},
              {"depth_window", c.depth_window},
              {"width_window", c.width_window},
              {"input_resolution", c.input_resolution},
              {"input_channels", c.input_channels},
              {"stem_width", c.stem_width},
              {"num_classes", c.num_classes},
              {"width_granularity", c.width_granularity}};
}

inline ExpandedSpaceConfig space_config_from_json(const json& j) {
  ExpandedSpaceConfig c;
  c.num_stages = j.value("num_stages", c.num_stages);
  c.d_max = j.value("d_max", c.d_max);
  c.w_max = j.value("w_max", c.w_max);
  c.depth_window = j.value("depth_window", c.depth_window);
  c.width_window = j.value("width_window", c.width_window);
  c.input_resolution = j.value("input_resolution", c.input_resolution);
  c.input_channels = j.value("input_channels", c.input_channels);
  c.stem_width = j.value("stem_width", c.stem_width);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.width_granularity = j.value("width_granularity", c.width_granularity);
  c.validate();
  return c;
}

inline json to_json(const NetworkConfig& a) {
  return json{{"depths", a.depths}, {"widths", a.widths}};
}

inline NetworkConfig network_config_from_json(const json& j) {
  NetworkConfig a;
  a.depths = j.at("depths").get<std::vector<int>>();
  a.widths = j.at("widths").get<std::vector<int>>();
  return a;
}

inline json to_json(const NetworkSpace& s) {
  return json{{"depth_window_idx", s.depth_window_idx}, {"width_window_idx", s.width_window_idx}};
}

inline NetworkSpace network_space_from_json(const json& j) {
  NetworkSpace s;
  s.depth_window_idx = j.at("depth_window_idx").get<std::vector<int>>();
  s.width_window_idx = j.at("width_window_idx").get<std::vector<int>>();
  return s;
}

inline json to_json(const FlopsBreakdown& f) {
  return json{{"stem", f.stem}, {"per_stage", f.per_stage}, {"head", f.head}, {"total", f.total}};
}

inline json to_json(const SpaceDistribution& t) {
  return json{{"depth_logits", t.depth_logits}, {"width_logits", t.width_logits}};
}

inline SpaceDistribution space_distribution_from_json(const json& j) {
  SpaceDistribution t;
  t.depth_logits = j.at("depth_logits").get<std::vector<std::vector<double>>>();
  t.width_logits = j.at("width_logits").get<std::vector<std::vector<double>>>();
  return t;
}

inline std::string to_string(FlopsPenaltyLevel level) {
  return level == FlopsPenaltyLevel::per_architecture ? "per_architecture" : "space_mean";
}

inline FlopsPenaltyLevel flops_penalty_level_from_string(const std::string& s) {
  if (s == "per_architecture") return FlopsPenaltyLevel::per_architecture;
  if (s == "space_mean") return FlopsPenaltyLevel::space_mean;
  throw validation_error("unknown flops_penalty_level: " + s);
}

inline std::string to_string(GradientEstimator e) {
  return e == GradientEstimator::score_function ? "score_function" : "pathwise";
}

inline GradientEstimator gradient_estimator_from_string(const std::string& s) {
  if (s == "score_function") return GradientEstimator::score_function;
  if (s == "pathwise") return GradientEstimator::pathwise;
  throw validation_error("unknown estimator: " + s);
}

inline json to_json(const SearchConfig& c) {
  return json{{"epochs", c.epochs},
              {"steps_per_epoch", c.steps_per_epoch},
              {"warmup_fraction", c.warmup_fraction},
              {"spaces_per_step", c.spaces_per_step},
              {"archs_per_space", c.archs_per_space},
              {"learning_rate", c.learning_rate},
              {"baseline_decay", c.baseline_decay},
              {"n_elite", c.n_elite},
              {"lambda", c.weights.lambda},
              {"flops_target", c.flops_target.target},
              {"temperature", json{{"t_start", c.temperature.t_start}, {"t_end", c.temperature.t_end}}},
              {"seed", c.seed},
              {"flops_penalty_level", to_string(c.flops_penalty_level)},
              {"estimator", to_string(c.estimator)},
              {"mean_flops_samples", c.mean_flops_samples},
              {"nas_band", c.nas_band},
              {"nas_sample_cap", c.nas_sample_cap}};
}

inline SearchConfig search_config_from_json(const json& j) {
  SearchConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
  c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
  c.spaces_per_step = j.value("spaces_per_step", c.spaces_per_step);
  c.archs_per_space = j.value("archs_per_space", c.archs_per_space);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.baseline_decay = j.value("baseline_decay", c.baseline_decay);
  c.n_elite = j.value("n_elite", c.n_elite);
  c.weights.lambda = j.value("lambda", c.weights.lambda);
  if (j.contains("flops_target")) {
    const json& t = j.at("flops_target");
    if (t.is_array()) {
      if (t.empty()) throw validation_error("flops_target list is empty");
      c.flops_target.target = static_cast<std::int64_t>(t.front().get<double>());
    } else {
      c.flops_target.target = static_cast<std::int64_t>(t.get<double>());
    }
  }
  if (j.contains("temperature")) {
    c.temperature.t_start = j.at("temperature").value("t_start", c.temperature.t_start);
    c.temperature.t_end = j.at("temperature").value("t_end", c.temperature.t_end);
  }
  c.seed = j.value("seed", c.seed);
  if (j.contains("flops_penalty_level"))
    c.flops_penalty_level = flops_penalty_level_from_string(j.at("flops_penalty_level").get<std::string>());
  if (j.contains("estimator"))
    c.estimator = gradient_estimator_from_string(j.at("estimator").get<std::string>());
  c.mean_flops_samples = j.value("mean_flops_samples", c.mean_flops_samples);
  c.nas_band = j.value("nas_band", c.nas_band);
  c.nas_sample_cap = j.value("nas_sample_cap", c.nas_sample_cap);
  c.validate();
  return c;
}

inline json provenance_json(std::uint64_t config_hash, std::uint64_t seed) {
  return json{{"engine", std::string("nss ") + kVersion},
              {"seed", seed},
              {"config", to_hex16(config_hash)}};
}

inline json to_json(const EliteSpace& e, std::uint64_t config_hash, std::uint64_t seed) {
  return json{{"provenance", provenance_json(config_hash, seed)},
              {"space", to_json(e.space)},
              {"mean_flops", e.mean_flops},
              {"deviation", e.deviation}};
}

inline EliteSpace elite_space_from_json(const json& j) {
  EliteSpace e;
  e.space = network_space_from_json(j.at("space"));
  e.mean_flops = j.at("mean_flops").get<double>();
  e.deviation = j.at("deviation").get<double>();
  return e;
}

// ---- search checkpoint ------------------------------------------------------

inline json state_to_json(const Rng& rng) {
  return json(std::vector<std::uint64_t>(rng.state().begin(), rng.state().end()));
}

inline json checkpoint_to_json(const ExpandedSpaceConfig& space, const SearchConfig& search,
                               const SearchState& state, const Rng& rng) {
  return json{{"version", kVersion},
              {"space", to_json(space)},
              {"search", to_json(search)},
              {"theta", to_json(state.theta)},
              {"step", state.step},
              {"baseline", state.baseline},
              {"baseline_init", state.baseline_init},
              {"rng", state_to_json(rng)}};
}

struct Checkpoint {
  ExpandedSpaceConfig space;
  SearchConfig search;
  SearchState state;  // history not persisted; it lives in the history CSV
  Rng rng;
};

inline Checkpoint checkpoint_from_json(const json& j) {
  Checkpoint c;
  c.space = space_config_from_json(j.at("space"));
  c.search = search_config_from_json(j.at("search"));
  c.state.theta = space_distribution_from_json(j.at("theta"));
  c.state.step = j.at("step").get<long>();
  c.state.baseline = j.at("baseline").get<double>();
  c.state.baseline_init = j.at("baseline_init").get<bool>();
  const auto words = j.at("rng").get<std::vector<std::uint64_t>>();
  if (words.size() != 4) throw validation_error("rng state must have 4 words");
  Rng::State st;
  std::copy(words.begin(), words.end(), st.begin());
  c.rng.set_state(st);
  return c;
}

// ---- toy supernet -----------------------------------------------------------

inline json to_json(const SyntheticTask& t) {
  return json{{"generator_seed", t.generator_seed},
              {"input_dim", t.input_dim},
              {"output_dim", t.output_dim},
              {"num_samples", t.num_samples},
              {"split_fraction", t.split_fraction}};
}

inline SyntheticTask synthetic_task_from_json(const json& j) {
  SyntheticTask t;
  t.generator_seed = j.value("generator_seed", t.generator_seed);
  t.input_dim = j.value("input_dim", t.input_dim);
  t.output_dim = j.value("output_dim", t.output_dim);
  t.num_samples = j.value("num_samples", t.num_samples);
  t.split_fraction = j.value("split_fraction", t.split_fraction);
  t.validate();
  return t;
}

inline json to_json(const Mat& m) {
  return json{{"rows", m.rows}, {"cols", m.cols}, {"data", m.v}};
}

inline Mat mat_from_json(const json& j) {
  Mat m(j.at("rows").get<int>(), j.at("cols").get<int>());
  m.v = j.at("data").get<std::vector<double>>();
  if (m.v.size() != static_cast<std::size_t>(m.rows) * static_cast<std::size_t>(m.cols))
    throw validation_error("tensor data does not match its shape");
  return m;
}

/// Parameter dump: a manifest (shapes, seed, step) plus every tensor.
inline json supernet_to_json(const SuperNetParams& p, std::uint64_t seed, long step) {
  json stages = json::array();
  for (const StageParams& st : p.stages) {
    json blocks = json::array();
    for (const BlockParams& b : st.blocks) {
      blocks.push_back(json{{"first", to_json(b.first)},
                            {"first_bias", b.first_bias},
                            {"second", to_json(b.second)},
                            {"second_bias", b.second_bias},
                            {"scale", b.scale}});
    }
    stages.push_back(json{{"proj", to_json(st.proj)}, {"proj_bias", st.proj_bias}, {"blocks", blocks}});
  }
  return json{{"manifest",
               json{{"num_stages", p.cfg.num_stages},
                    {"d_max", p.cfg.d_max},
                    {"w_max", p.cfg.w_max},
                    {"stem_width", p.cfg.stem_width},
                    {"input_dim", p.cfg.input_dim},
                    {"output_dim", p.cfg.output_dim},
                    {"seed", seed},
                    {"step", step},
                    {"engine", std::string("nss ") + kVersion}}},
              {"stem", to_json(p.stem)},
              {"stem_bias", p.stem_bias},
              {"stages", stages},
              {"head", to_json(p.head)},
              {"head_bias", p.head_bias}};
}

inline SuperNetParams supernet_from_json(const json& j) {
  SuperNetParams p;
  const json& m = j.at("manifest");
  p.cfg.num_stages = m.at("num_stages").get<int>();
  p.cfg.d_max = m.at("d_max").get<int>();
  p.cfg.w_max = m.at("w_max").get<int>();
  p.cfg.stem_width = m.at("stem_width").get<int>();
  p.cfg.input_dim = m.at("input_dim").get<int>();
  p.cfg.output_dim = m.at("output_dim").get<int>();
  p.stem = mat_from_json(j.at("stem"));
  p.stem_bias = j.at("stem_bias").get<std::vector<double>>();
  for (const json& sj : j.at("stages")) {
    StageParams st;
    st.proj = mat_from_json(sj.at("proj"));
    st.proj_bias = sj.at("proj_bias").get<std::vector<double>>();
    for (const json& bj : sj.at("blocks")) {
      BlockParams b;
      b.first = mat_from_json(bj.at("first"));
      b.first_bias = bj.at("first_bias").get<std::vector<double>>();
      b.second = mat_from_json(bj.at("second"));
      b.second_bias = bj.at("second_bias").get<std::vector<double>>();
      b.scale = bj.at("scale").get<std::vector<double>>();
      st.blocks.push_back(std::move(b));
    }
    p.stages.push_back(std::move(st));
  }
  p.head = mat_from_json(j.at("head"));
  p.head_bias = j.at("head_bias").get<std::vector<double>>();
  return p;
}

}  // namespace nss
