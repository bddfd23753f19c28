#pragma once

#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

#include "nss/rng.hpp"
#include "nss/sampling.hpp"
#include "nss/space.hpp"

namespace nss {

/// Per-component FLOP counts for one architecture. Convention: one
/// multiply-accumulate = one FLOP; bias, BatchNorm, ReLU and pooling count
/// as zero.
struct FlopsBreakdown {
  std::int64_t stem = 0;
  std::vector<std::int64_t> per_stage;
  std::int64_t head = 0;
  std::int64_t total = 0;
};

namespace detail {

inline std::int64_t conv_macs(int out_res, int kernel, int c_in, int c_out) {
  return static_cast<std::int64_t>(out_res) * out_res * kernel * kernel * c_in * c_out;
}

}  // namespace detail

/// Exact FLOPs of one architecture under the staged residual template:
/// 3x3 stem at full resolution, stages of basic blocks (two 3x3 convs each),
/// stages >= 2 halve resolution in their first block, a 1x1 projection
/// shortcut whenever stride != 1 or the channel count changes, and a
/// global-average-pool + fully-connected head.
inline FlopsBreakdown network_flops(const ExpandedSpaceConfig& cfg, const NetworkConfig& a) {
  cfg.validate();
  validate_config(cfg, a);

  FlopsBreakdown out;
  out.per_stage.resize(static_cast<std::size_t>(cfg.num_stages), 0);

  int res = cfg.input_resolution;
  out.stem = detail::conv_macs(res, 3, cfg.input_channels, cfg.stem_width);

  int in_ch = cfg.stem_width;
  for (int i = 0; i < cfg.num_stages; ++i) {
    const int stride = (i == 0) ? 1 : 2;
    if (stride == 2) res = (res + 1) / 2;  // 3x3 stride-2 conv with pad 1: out = ceil(in/2)
    if (res < 1) throw validation_error("stage resolution underflow at stage " + std::to_string(i + 1));

    const int w = a.widths[static_cast<std::size_t>(i)];
    const int d = a.depths[static_cast<std::size_t>(i)];

    std::int64_t stage = detail::conv_macs(res, 3, in_ch, w) + detail::conv_macs(res, 3, w, w);
    if (stride != 1 || in_ch != w) stage += detail::conv_macs(res, 1, in_ch, w);
    stage += static_cast<std::int64_t>(d - 1) * 2 * detail::conv_macs(res, 3, w, w);

    out.per_stage[static_cast<std::size_t>(i)] = stage;
    in_ch = w;
  }

  out.head = static_cast<std::int64_t>(in_ch) * cfg.num_classes;
  out.total = out.stem + out.head +
              std::accumulate(out.per_stage.begin(), out.per_stage.end(), std::int64_t{0});
  return out;
}

/// FLOPs of the cheapest and the most expensive config of a space. Totals are
/// monotone in every depth and width, so the extremes sit at the window
/// corners (on the granularity grid).
inline std::pair<std::int64_t, std::int64_t> space_flops_bounds(const ExpandedSpaceConfig& cfg,
                                                                const NetworkSpace& s) {
  validate_space(cfg, s);
  NetworkConfig lo, hi;
  for (int i = 0; i < cfg.num_stages; ++i) {
    const IntRange dr = depth_range(cfg, s, i);
    const IntRange wr = width_range(cfg, s, i);
    const std::vector<int> grid = width_grid(wr, cfg.width_granularity);
    lo.depths.push_back(dr.lo);
    lo.widths.push_back(grid.front());
    hi.depths.push_back(dr.hi);
    hi.widths.push_back(grid.back());
  }
  return {network_flops(cfg, lo).total, network_flops(cfg, hi).total};
}

/// Spaces at or below this size get their mean FLOPs by full enumeration.
inline constexpr std::int64_t kExhaustiveThreshold = std::int64_t{1} << 16;

/// Mean FLOPs over the space: exact when the space is small enough to
/// enumerate, otherwise a Monte-Carlo estimate over `samples` uniform draws
/// (deterministic given the rng state).
inline double space_mean_flops(const ExpandedSpaceConfig& cfg, const NetworkSpace& s,
                               long samples, Rng& rng) {
  if (samples < 1) throw validation_error("samples must be >= 1");
  const BigCount size = space_size(cfg, s);
  if (size <= kExhaustiveThreshold) {
    unsigned __int128 sum = 0;
    long n = 0;
    for_each_config(cfg, s, 1, [&](const NetworkConfig& a) {
      sum += static_cast<unsigned __int128>(network_flops(cfg, a).total);
      ++n;
    });
    return static_cast<double>(sum) / static_cast<double>(n);
  }

  unsigned __int128 sum = 0;
  for (long k = 0; k < samples; ++k) {
    const NetworkConfig a = sample_architecture_uniform(cfg, s, rng);
    sum += static_cast<unsigned __int128>(network_flops(cfg, a).total);
  }
  return static_cast<double>(sum) / static_cast<double>(samples);
}

}  // namespace nss
