#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nss/errors.hpp"
#include "nss/flops.hpp"
#include "nss/objectives.hpp"
#include "nss/rng.hpp"
#include "nss/sampling.hpp"
#include "nss/space.hpp"

namespace nss {

enum class FlopsPenaltyLevel { per_architecture, space_mean };
enum class GradientEstimator { score_function, pathwise };

struct SearchConfig {
  long epochs = 50;
  long steps_per_epoch = 100;
  double warmup_fraction = 0.25;
  int spaces_per_step = 1;
  int archs_per_space = 4;  // m, the inner uniform samples per space
  double learning_rate = 0.05;
  double baseline_decay = 0.9;
  int n_elite = 5;
  LossWeights weights;
  FlopsTarget flops_target;
  TemperatureSchedule temperature;  // total_steps filled from epochs * steps_per_epoch
  std::uint64_t seed = 0;
  FlopsPenaltyLevel flops_penalty_level = FlopsPenaltyLevel::per_architecture;
  GradientEstimator estimator = GradientEstimator::score_function;
  long mean_flops_samples = 4096;  // Monte-Carlo budget for space mean FLOPs
  double nas_band = 0.1;           // +-10% acceptance band for the NAS stage
  long nas_sample_cap = 10000;

  long total_steps() const { return epochs * steps_per_epoch; }
  long warmup_steps() const {
    return static_cast<long>(std::floor(warmup_fraction * static_cast<double>(total_steps())));
  }
  TemperatureSchedule schedule() const {
    TemperatureSchedule s = temperature;
    s.total_steps = total_steps();
    return s;
  }

  void validate() const {
    if (epochs < 1 || steps_per_epoch < 1) throw validation_error("epochs and steps_per_epoch must be >= 1");
    if (!(warmup_fraction >= 0.0) || warmup_fraction >= 1.0)
      throw validation_error("warmup_fraction must be in [0, 1)");
    if (spaces_per_step < 1 || archs_per_space < 1)
      throw validation_error("spaces_per_step and archs_per_space must be >= 1");
    if (!(learning_rate >= 0.0)) throw validation_error("learning_rate must be >= 0");
    if (!(baseline_decay >= 0.0 && baseline_decay < 1.0))
      throw validation_error("baseline_decay must be in [0, 1)");
    if (n_elite < 1) throw validation_error("n_elite must be >= 1");
    if (mean_flops_samples < 1) throw validation_error("mean_flops_samples must be >= 1");
    if (!(nas_band >= 0.0)) throw validation_error("nas_band must be >= 0");
    if (nas_sample_cap < 1) throw validation_error("nas_sample_cap must be >= 1");
    weights.validate();
    flops_target.validate();
    schedule().validate();
  }
};

struct StepRecord {
  long step = 0;
  double temperature = 0.0;
  double task_loss = 0.0;
  double flops_loss = 0.0;
  double combined = 0.0;
  double entropy = 0.0;
};

struct SearchState {
  SpaceDistribution theta;
  long step = 0;
  double baseline = 0.0;
  bool baseline_init = false;
  std::vector<StepRecord> history;
};

inline SearchState init_search_state(const ExpandedSpaceConfig& cfg) {
  SearchState state;
  state.theta = SpaceDistribution::uniform(cfg);
  return state;
}

/// The space sampled from the trained distribution whose mean FLOPs sits
/// closest to the constraint. deviation = |mean_flops/target - 1|.
struct EliteSpace {
  NetworkSpace space;
  double mean_flops = 0.0;
  double deviation = 0.0;
};

/// Gradient of a linearly-relaxed loss through softmax((logits+g)/t):
/// given y = soft_weights and c = dL/dy, returns dL/dlogits with
/// dL/dlogit_j = y_j * (c_j - sum_k y_k c_k) / t.
inline std::vector<double> pathwise_gradient(std::span<const double> soft_weights,
                                             std::span<const double> dloss_dsoft,
                                             double temperature) {
  if (soft_weights.size() != dloss_dsoft.size())
    throw validation_error("pathwise gradient shape mismatch");
  if (!(temperature > 0.0)) throw validation_error("temperature must be > 0");
  double inner = 0.0;
  for (std::size_t i = 0; i < soft_weights.size(); ++i) inner += soft_weights[i] * dloss_dsoft[i];
  std::vector<double> grad(soft_weights.size());
  for (std::size_t i = 0; i < soft_weights.size(); ++i)
    grad[i] = soft_weights[i] * (dloss_dsoft[i] - inner) / temperature;
  return grad;
}

namespace detail {

struct ThetaGrad {
  std::vector<std::vector<double>> depth;
  std::vector<std::vector<double>> width;

  static ThetaGrad zeros_like(const SpaceDistribution& theta) {
    ThetaGrad g;
    for (const auto& v : theta.depth_logits) g.depth.emplace_back(v.size(), 0.0);
    for (const auto& v : theta.width_logits) g.width.emplace_back(v.size(), 0.0);
    return g;
  }

  void scale(double f) {
    for (auto& v : depth)
      for (double& x : v) x *= f;
    for (auto& v : width)
      for (double& x : v) x *= f;
  }
};

// d log softmax(logits)[hard] / d logits = onehot(hard) - softmax(logits),
// scaled by the advantage.
inline void accumulate_score_grad(std::vector<double>& grad, std::span<const double> logits,
                                  int hard, double advantage) {
  const std::vector<double> p = softmax(logits);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double indicator = (static_cast<int>(i) == hard) ? 1.0 : 0.0;
    grad[i] += advantage * (indicator - p[i]);
  }
}

struct SpaceLoss {
  double task = 0.0;
  double flops_penalty = 0.0;
  double combined = 0.0;
};

// Mean combined loss of one sampled space. per_architecture penalizes each
// sampled architecture's FLOPs; space_mean penalizes the space's mean FLOPs.
inline SpaceLoss evaluate_space_loss(Oracle& oracle, const ExpandedSpaceConfig& cfg,
                                     const SearchConfig& search, const NetworkSpace& space,
                                     Rng& rng) {
  SpaceLoss out;
  if (search.flops_penalty_level == FlopsPenaltyLevel::per_architecture) {
    for (int j = 0; j < search.archs_per_space; ++j) {
      const NetworkConfig a = sample_architecture_uniform(cfg, space, rng);
      const double task = oracle.eval(a, rng);
      const double fl = flops_loss(static_cast<double>(network_flops(cfg, a).total),
                                   search.flops_target);
      out.task += task;
      out.flops_penalty += fl;
    }
    out.task /= search.archs_per_space;
    out.flops_penalty /= search.archs_per_space;
  } else {
    const auto [task_mean, task_se] = space_task_loss_estimate(oracle, cfg, space,
                                                               search.archs_per_space, rng);
    (void)task_se;
    out.task = task_mean;
    out.flops_penalty = flops_loss(space_mean_flops(cfg, space, search.mean_flops_samples, rng),
                                   search.flops_target);
  }
  out.combined = combined_loss(out.task, out.flops_penalty, search.weights);
  return out;
}

struct StepEvaluation {
  ThetaGrad grad;
  double mean_task = 0.0;
  double mean_flops_penalty = 0.0;
  double mean_combined = 0.0;
};

inline StepEvaluation evaluate_step_score(const SearchState& state, Oracle& oracle,
                                          const ExpandedSpaceConfig& cfg,
                                          const SearchConfig& search, double t, Rng& rng) {
  StepEvaluation ev;
  ev.grad = ThetaGrad::zeros_like(state.theta);
  const int n = cfg.num_stages;
  for (int k = 0; k < search.spaces_per_step; ++k) {
    auto [space, draws] = sample_space(state.theta, cfg, t, rng);
    const SpaceLoss loss = evaluate_space_loss(oracle, cfg, search, space, rng);
    const double advantage = state.baseline_init ? loss.combined - state.baseline : 0.0;
    for (int i = 0; i < n; ++i) {
      accumulate_score_grad(ev.grad.depth[static_cast<std::size_t>(i)],
                            state.theta.depth_logits[static_cast<std::size_t>(i)],
                            draws[static_cast<std::size_t>(i)].hard_index, advantage);
      accumulate_score_grad(ev.grad.width[static_cast<std::size_t>(i)],
                            state.theta.width_logits[static_cast<std::size_t>(i)],
                            draws[static_cast<std::size_t>(n + i)].hard_index, advantage);
    }
    ev.mean_task += loss.task;
    ev.mean_flops_penalty += loss.flops_penalty;
    ev.mean_combined += loss.combined;
  }
  ev.grad.scale(1.0 / search.spaces_per_step);
  ev.mean_task /= search.spaces_per_step;
  ev.mean_flops_penalty /= search.spaces_per_step;
  ev.mean_combined /= search.spaces_per_step;
  return ev;
}

// Pathwise estimator: relax the loss linearly in each factor's soft weights.
// For factor f with candidate windows w, the relaxed loss is
// sum_w y_w * L(space with f := w), whose soft-weight gradient chains
// exactly through softmax((logits+g)/t). Needs a loss evaluable per
// candidate window, hence a differentiable-declared oracle.
inline StepEvaluation evaluate_step_pathwise(const SearchState& state, Oracle& oracle,
                                             const ExpandedSpaceConfig& cfg,
                                             const SearchConfig& search, double t, Rng& rng) {
  if (!oracle.differentiable())
    throw validation_error("pathwise estimator selected with a non-differentiable oracle");
  StepEvaluation ev;
  ev.grad = ThetaGrad::zeros_like(state.theta);
  const int n = cfg.num_stages;
  for (int k = 0; k < search.spaces_per_step; ++k) {
    auto [space, draws] = sample_space(state.theta, cfg, t, rng);
    const SpaceLoss at_sample = evaluate_space_loss(oracle, cfg, search, space, rng);

    // Per-factor sweep: hold the other factors at their hard draws.
    for (int factor = 0; factor < 2 * n; ++factor) {
      const bool is_depth = factor < n;
      const int stage = is_depth ? factor : factor - n;
      const GumbelDraw& draw = draws[static_cast<std::size_t>(factor)];
      const std::size_t categories = draw.soft_weights.size();
      std::vector<double> per_window_loss(categories, 0.0);
      for (std::size_t w = 0; w < categories; ++w) {
        NetworkSpace probe = space;
        if (is_depth)
          probe.depth_window_idx[static_cast<std::size_t>(stage)] = static_cast<int>(w);
        else
          probe.width_window_idx[static_cast<std::size_t>(stage)] = static_cast<int>(w);
        per_window_loss[w] = evaluate_space_loss(oracle, cfg, search, probe, rng).combined;
      }
      const std::vector<double> g = pathwise_gradient(draw.soft_weights, per_window_loss, t);
      auto& slot = is_depth ? ev.grad.depth[static_cast<std::size_t>(stage)]
                            : ev.grad.width[static_cast<std::size_t>(stage)];
      for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += g[i];
    }

    ev.mean_task += at_sample.task;
    ev.mean_flops_penalty += at_sample.flops_penalty;
    ev.mean_combined += at_sample.combined;
  }
  ev.grad.scale(1.0 / search.spaces_per_step);
  ev.mean_task /= search.spaces_per_step;
  ev.mean_flops_penalty /= search.spaces_per_step;
  ev.mean_combined /= search.spaces_per_step;
  return ev;
}

}  // namespace detail

/// One distributional search step. During warmup only the baseline and the
/// temperature advance; afterwards theta takes a plain SGD step against the
/// chosen gradient estimator with an EMA baseline. Oracle failures propagate
/// and leave the state untouched.
inline void nss_step(SearchState& state, Oracle& oracle, const ExpandedSpaceConfig& cfg,
                     const SearchConfig& search, Rng& rng) {
  search.validate();
  state.theta.validate_shape(cfg);
  const double t = temperature_at(search.schedule(), state.step);

  const detail::StepEvaluation ev =
      search.estimator == GradientEstimator::score_function
          ? detail::evaluate_step_score(state, oracle, cfg, search, t, rng)
          : detail::evaluate_step_pathwise(state, oracle, cfg, search, t, rng);

  if (state.step >= search.warmup_steps()) {
    for (std::size_t i = 0; i < state.theta.depth_logits.size(); ++i)
      for (std::size_t j = 0; j < state.theta.depth_logits[i].size(); ++j)
        state.theta.depth_logits[i][j] -= search.learning_rate * ev.grad.depth[i][j];
    for (std::size_t i = 0; i < state.theta.width_logits.size(); ++i)
      for (std::size_t j = 0; j < state.theta.width_logits[i].size(); ++j)
        state.theta.width_logits[i][j] -= search.learning_rate * ev.grad.width[i][j];
  }

  if (!state.baseline_init) {
    state.baseline = ev.mean_combined;
    state.baseline_init = true;
  } else {
    state.baseline = search.baseline_decay * state.baseline +
                     (1.0 - search.baseline_decay) * ev.mean_combined;
  }

  state.history.push_back({state.step, t, ev.mean_task, ev.mean_flops_penalty, ev.mean_combined,
                           state.theta.entropy()});
  ++state.step;
}

/// Draws n_elite hard samples from the trained distribution (at t_end),
/// collapses duplicates, and keeps the space whose mean FLOPs deviates least
/// from the target. Ties break toward the earliest draw.
inline EliteSpace extract_elite_space(const SpaceDistribution& theta,
                                      const ExpandedSpaceConfig& cfg, const SearchConfig& search,
                                      Rng& rng) {
  std::vector<NetworkSpace> candidates;
  for (int i = 0; i < search.n_elite; ++i) {
    auto [space, draws] = sample_space(theta, cfg, search.temperature.t_end, rng);
    (void)draws;
    if (std::find(candidates.begin(), candidates.end(), space) == candidates.end())
      candidates.push_back(std::move(space));
  }
  EliteSpace best;
  double best_dev = std::numeric_limits<double>::infinity();
  for (const NetworkSpace& s : candidates) {
    const double mean = space_mean_flops(cfg, s, search.mean_flops_samples, rng);
    const double dev = std::abs(mean / static_cast<double>(search.flops_target.target) - 1.0);
    if (dev < best_dev) {
      best_dev = dev;
      best = {s, mean, dev};
    }
  }
  return best;
}

/// Full NSS run: epochs * steps_per_epoch steps from a uniform distribution,
/// then elite extraction. Deterministic given the seed and a deterministic
/// oracle. `final_rng` (when given) receives the generator state after the
/// run, for checkpointing.
inline std::pair<SearchState, EliteSpace> run_nss(const ExpandedSpaceConfig& cfg,
                                                  const SearchConfig& search, Oracle& oracle,
                                                  Rng* final_rng = nullptr) {
  cfg.validate();
  search.validate();
  Rng rng(search.seed);
  SearchState state = init_search_state(cfg);
  const long total = search.total_steps();
  for (long s = 0; s < total; ++s) nss_step(state, oracle, cfg, search, rng);
  EliteSpace elite = extract_elite_space(state.theta, cfg, search, rng);
  if (final_rng) *final_rng = rng;
  return {std::move(state), std::move(elite)};
}

/// Per-stage value windows an architecture-level search runs over. Covers
/// both a NetworkSpace's windows and the whole universe (the baseline).
struct StageWindows {
  std::vector<IntRange> depth;
  std::vector<IntRange> width;

  static StageWindows of(const ExpandedSpaceConfig& cfg, const NetworkSpace& s) {
    validate_space(cfg, s);
    StageWindows w;
    for (int i = 0; i < cfg.num_stages; ++i) {
      w.depth.push_back(depth_range(cfg, s, i));
      w.width.push_back(width_range(cfg, s, i));
    }
    return w;
  }

  static StageWindows full(const ExpandedSpaceConfig& cfg) {
    StageWindows w;
    for (int i = 0; i < cfg.num_stages; ++i) {
      w.depth.push_back({1, cfg.d_max});
      w.width.push_back({1, cfg.w_max});
    }
    return w;
  }
};

/// Architecture-level distribution over the values inside fixed windows.
/// All-zero logits make it the uniform inner distribution used during NSS;
/// the NAS stage optimizes it.
struct ArchDistribution {
  StageWindows windows;
  int width_granularity = 1;
  std::vector<std::vector<double>> depth_logits;
  std::vector<std::vector<double>> width_logits;

  static ArchDistribution uniform(StageWindows w, int granularity) {
    ArchDistribution d;
    d.width_granularity = granularity;
    for (const IntRange& r : w.depth)
      d.depth_logits.emplace_back(static_cast<std::size_t>(r.size()), 0.0);
    for (const IntRange& r : w.width) {
      const int count = (r.size() + granularity - 1) / granularity;
      d.width_logits.emplace_back(static_cast<std::size_t>(count), 0.0);
    }
    d.windows = std::move(w);
    return d;
  }

  NetworkConfig config_at(const std::vector<int>& depth_idx,
                          const std::vector<int>& width_idx) const {
    NetworkConfig a;
    for (std::size_t i = 0; i < windows.depth.size(); ++i)
      a.depths.push_back(windows.depth[i].lo + depth_idx[i]);
    for (std::size_t i = 0; i < windows.width.size(); ++i)
      a.widths.push_back(windows.width[i].lo + width_granularity * width_idx[i]);
    return a;
  }

  double entropy() const {
    double h = 0.0;
    for (const auto& v : depth_logits) h += categorical_entropy(v);
    for (const auto& v : width_logits) h += categorical_entropy(v);
    return h;
  }
};

/// One hard architecture draw from the distribution; 2N factor draws, depth
/// factors first.
inline std::pair<NetworkConfig, std::vector<GumbelDraw>> sample_architecture(
    const ArchDistribution& dist, double temperature, Rng& rng) {
  std::vector<int> depth_idx, width_idx;
  std::vector<GumbelDraw> draws;
  for (const auto& logits : dist.depth_logits) {
    GumbelDraw d = gumbel_softmax_sample(logits, temperature, rng);
    depth_idx.push_back(d.hard_index);
    draws.push_back(std::move(d));
  }
  for (const auto& logits : dist.width_logits) {
    GumbelDraw d = gumbel_softmax_sample(logits, temperature, rng);
    width_idx.push_back(d.hard_index);
    draws.push_back(std::move(d));
  }
  return {dist.config_at(depth_idx, width_idx), std::move(draws)};
}

struct NasOutcome {
  NetworkConfig best;
  long samples_to_constraint = 0;
  double error = 0.0;
  double deviation = 0.0;  // |flops/target - 1| of the returned config
  bool cap_exhausted = false;
  ArchDistribution final_distribution;
  std::vector<StepRecord> history;
};

class cap_exhausted_error : public std::runtime_error {
 public:
  cap_exhausted_error(std::string what, NasOutcome best_seen)
      : std::runtime_error(std::move(what)), best_seen_(std::move(best_seen)) {}
  const NasOutcome& best_seen() const { return best_seen_; }

 private:
  NasOutcome best_seen_;
};

/// Architecture search inside fixed windows using the same step rule as NSS
/// (score-function gradient, EMA baseline, warmup freeze, temperature
/// anneal), then repeated hard sampling from the final distribution until a
/// config lands within the FLOPs band. Never throws on cap exhaustion; the
/// outcome carries the best-deviation config seen instead.
inline NasOutcome nas_search(const StageWindows& windows, Oracle& oracle,
                             const ExpandedSpaceConfig& cfg, const SearchConfig& search,
                             Rng& rng) {
  search.validate();
  ArchDistribution dist = ArchDistribution::uniform(windows, cfg.width_granularity);
  const long total = search.total_steps();
  const long warmup = search.warmup_steps();
  const TemperatureSchedule sched = search.schedule();
  const std::size_t n = dist.depth_logits.size();

  double baseline = 0.0;
  bool baseline_init = false;
  std::vector<StepRecord> history;

  for (long step = 0; step < total; ++step) {
    const double t = temperature_at(sched, step);
    auto grad_depth = dist.depth_logits;
    auto grad_width = dist.width_logits;
    for (auto& v : grad_depth) std::fill(v.begin(), v.end(), 0.0);
    for (auto& v : grad_width) std::fill(v.begin(), v.end(), 0.0);

    double mean_task = 0.0, mean_fl = 0.0, mean_combined = 0.0;
    for (int k = 0; k < search.spaces_per_step; ++k) {
      auto [a, draws] = sample_architecture(dist, t, rng);
      const double task = oracle.eval(a, rng);
      const double fl = flops_loss(static_cast<double>(network_flops(cfg, a).total),
                                   search.flops_target);
      const double loss = combined_loss(task, fl, search.weights);
      const double advantage = baseline_init ? loss - baseline : 0.0;
      for (std::size_t i = 0; i < n; ++i)
        detail::accumulate_score_grad(grad_depth[i], dist.depth_logits[i],
                                      draws[i].hard_index, advantage);
      for (std::size_t i = 0; i < n; ++i)
        detail::accumulate_score_grad(grad_width[i], dist.width_logits[i],
                                      draws[n + i].hard_index, advantage);
      mean_task += task;
      mean_fl += fl;
      mean_combined += loss;
    }
    mean_task /= search.spaces_per_step;
    mean_fl /= search.spaces_per_step;
    mean_combined /= search.spaces_per_step;

    if (step >= warmup) {
      const double scale = search.learning_rate / search.spaces_per_step;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < dist.depth_logits[i].size(); ++j)
          dist.depth_logits[i][j] -= scale * grad_depth[i][j];
        for (std::size_t j = 0; j < dist.width_logits[i].size(); ++j)
          dist.width_logits[i][j] -= scale * grad_width[i][j];
      }
    }
    if (!baseline_init) {
      baseline = mean_combined;
      baseline_init = true;
    } else {
      baseline = search.baseline_decay * baseline + (1.0 - search.baseline_decay) * mean_combined;
    }
    history.push_back({step, t, mean_task, mean_fl, mean_combined, dist.entropy()});
  }

  NasOutcome out;
  out.history = std::move(history);
  double best_dev = std::numeric_limits<double>::infinity();
  NetworkConfig best_seen;
  for (long count = 1; count <= search.nas_sample_cap; ++count) {
    auto [a, draws] = sample_architecture(dist, search.temperature.t_end, rng);
    (void)draws;
    const double flops = static_cast<double>(network_flops(cfg, a).total);
    const double dev = flops_loss(flops, search.flops_target);
    if (dev < best_dev) {
      best_dev = dev;
      best_seen = a;
    }
    if (within_flops_band(flops, static_cast<double>(search.flops_target.target),
                          search.nas_band)) {
      out.best = a;
      out.samples_to_constraint = count;
      out.deviation = dev;
      Rng eval_rng = rng.split(0x6e6173ull);  // independent stream for the final eval
      out.error = oracle.eval(a, eval_rng);
      out.final_distribution = std::move(dist);
      return out;
    }
  }
  out.best = best_seen;
  out.samples_to_constraint = search.nas_sample_cap;
  out.deviation = best_dev;
  out.cap_exhausted = true;
  Rng eval_rng = rng.split(0x6e6173ull);
  out.error = oracle.eval(best_seen, eval_rng);
  out.final_distribution = std::move(dist);
  return out;
}

/// nas_search with the spec'd failure contract: cap exhaustion raises,
/// carrying the best-deviation config seen.
inline NasOutcome run_nas_in_space(const StageWindows& windows, Oracle& oracle,
                                   const ExpandedSpaceConfig& cfg, const SearchConfig& search,
                                   Rng& rng) {
  NasOutcome out = nas_search(windows, oracle, cfg, search, rng);
  if (out.cap_exhausted)
    throw cap_exhausted_error("sampling cap of " + std::to_string(search.nas_sample_cap) +
                                  " exhausted without meeting the FLOPs band",
                              std::move(out));
  return out;
}

}  // namespace nss
