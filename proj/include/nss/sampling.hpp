#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "nss/errors.hpp"
#include "nss/rng.hpp"
#include "nss/space.hpp"

namespace nss {

inline std::vector<double> softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

/// log softmax(logits)[index], via a stable log-sum-exp.
inline double categorical_log_prob(std::span<const double> logits, int index) {
  if (index < 0 || static_cast<std::size_t>(index) >= logits.size())
    throw validation_error("categorical index out of range");
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - m);
  return logits[static_cast<std::size_t>(index)] - m - std::log(z);
}

/// Entropy (nats) of softmax(logits).
inline double categorical_entropy(std::span<const double> logits) {
  const std::vector<double> p = softmax(logits);
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

/// One temperature-relaxed categorical draw. hard_index follows
/// Categorical(softmax(logits)) exactly for any temperature (Gumbel-max);
/// soft_weights carries the relaxation used by pathwise gradients.
struct GumbelDraw {
  int hard_index = 0;
  std::vector<double> soft_weights;
  double log_prob = 0.0;
};

inline GumbelDraw gumbel_softmax_sample(std::span<const double> logits, double temperature,
                                        Rng& rng) {
  if (!(temperature > 0.0)) throw validation_error("temperature must be > 0");
  std::vector<double> perturbed(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!std::isfinite(logits[i])) throw validation_error("non-finite logit");
    perturbed[i] = logits[i] + rng.gumbel();
  }
  GumbelDraw draw;
  draw.hard_index = static_cast<int>(
      std::max_element(perturbed.begin(), perturbed.end()) - perturbed.begin());
  std::vector<double> scaled(perturbed.size());
  for (std::size_t i = 0; i < perturbed.size(); ++i) scaled[i] = perturbed[i] / temperature;
  draw.soft_weights = softmax(scaled);
  draw.log_prob = categorical_log_prob(logits, draw.hard_index);
  return draw;
}

/// Theta: factorized per-stage categorical logits over depth and width
/// windows. softmax of each vector is the per-factor sampling distribution.
struct SpaceDistribution {
  std::vector<std::vector<double>> depth_logits;
  std::vector<std::vector<double>> width_logits;

  static SpaceDistribution uniform(const ExpandedSpaceConfig& cfg) {
    SpaceDistribution theta;
    theta.depth_logits.assign(static_cast<std::size_t>(cfg.num_stages),
                              std::vector<double>(static_cast<std::size_t>(cfg.depth_window_count()), 0.0));
    theta.width_logits.assign(static_cast<std::size_t>(cfg.num_stages),
                              std::vector<double>(static_cast<std::size_t>(cfg.width_window_count()), 0.0));
    return theta;
  }

  void validate_shape(const ExpandedSpaceConfig& cfg) const {
    if (static_cast<int>(depth_logits.size()) != cfg.num_stages ||
        static_cast<int>(width_logits.size()) != cfg.num_stages)
      throw validation_error("space distribution has wrong stage count");
    for (int i = 0; i < cfg.num_stages; ++i) {
      if (static_cast<int>(depth_logits[static_cast<std::size_t>(i)].size()) != cfg.depth_window_count())
        throw validation_error("depth logits shape mismatch at stage " + std::to_string(i + 1));
      if (static_cast<int>(width_logits[static_cast<std::size_t>(i)].size()) != cfg.width_window_count())
        throw validation_error("width logits shape mismatch at stage " + std::to_string(i + 1));
    }
  }

  /// Sum of per-factor entropies (nats).
  double entropy() const {
    double h = 0.0;
    for (const auto& v : depth_logits) h += categorical_entropy(v);
    for (const auto& v : width_logits) h += categorical_entropy(v);
    return h;
  }

  friend bool operator==(const SpaceDistribution&, const SpaceDistribution&) = default;
};

/// Samples one space: an independent Gumbel draw per stage per factor
/// (2N draws, depth factors first, then width factors). The joint log_prob
/// is the sum of factor log_probs.
inline std::pair<NetworkSpace, std::vector<GumbelDraw>> sample_space(
    const SpaceDistribution& theta, const ExpandedSpaceConfig& cfg, double temperature, Rng& rng) {
  theta.validate_shape(cfg);
  NetworkSpace space;
  std::vector<GumbelDraw> draws;
  draws.reserve(static_cast<std::size_t>(2 * cfg.num_stages));
  for (int i = 0; i < cfg.num_stages; ++i) {
    GumbelDraw d = gumbel_softmax_sample(theta.depth_logits[static_cast<std::size_t>(i)], temperature, rng);
    space.depth_window_idx.push_back(d.hard_index);
    draws.push_back(std::move(d));
  }
  for (int i = 0; i < cfg.num_stages; ++i) {
    GumbelDraw d = gumbel_softmax_sample(theta.width_logits[static_cast<std::size_t>(i)], temperature, rng);
    space.width_window_idx.push_back(d.hard_index);
    draws.push_back(std::move(d));
  }
  return {std::move(space), std::move(draws)};
}

/// Uniform architecture draw from a space: per-stage depth uniform over the
/// depth window, width uniform over the granularity grid of the width
/// window, independent across stages.
inline NetworkConfig sample_architecture_uniform(const ExpandedSpaceConfig& cfg,
                                                 const NetworkSpace& s, Rng& rng) {
  validate_space(cfg, s);
  NetworkConfig a;
  a.depths.reserve(static_cast<std::size_t>(cfg.num_stages));
  a.widths.reserve(static_cast<std::size_t>(cfg.num_stages));
  const int step = cfg.width_granularity;
  for (int i = 0; i < cfg.num_stages; ++i) {
    const IntRange dr = depth_range(cfg, s, i);
    const IntRange wr = width_range(cfg, s, i);
    a.depths.push_back(static_cast<int>(rng.uniform_int(dr.lo, dr.hi)));
    const int grid_count = (wr.size() + step - 1) / step;
    a.widths.push_back(wr.lo + step * static_cast<int>(rng.uniform_below(
                                          static_cast<std::uint64_t>(grid_count))));
  }
  return a;
}

/// Linear anneal from t_start down to t_end over total_steps.
struct TemperatureSchedule {
  double t_start = 5.0;
  double t_end = 0.001;
  long total_steps = 1;

  void validate() const {
    if (!(t_start >= t_end) || !(t_end > 0.0))
      throw validation_error("temperature schedule requires t_start >= t_end > 0");
    if (total_steps < 1) throw validation_error("temperature schedule needs total_steps >= 1");
  }
};

inline double temperature_at(const TemperatureSchedule& sched, long step) {
  sched.validate();
  if (step < 0 || step > sched.total_steps)
    throw validation_error("temperature step out of range");
  if (step == 0) return sched.t_start;
  if (step == sched.total_steps) return sched.t_end;
  const double f = static_cast<double>(step) / static_cast<double>(sched.total_steps);
  return sched.t_start + (sched.t_end - sched.t_start) * f;
}

}  // namespace nss
