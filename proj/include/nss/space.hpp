#pragma once

#include <boost/multiprecision/cpp_int.hpp>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nss/errors.hpp"

namespace nss {

/// Arbitrary-precision count of networks/spaces; the universe grows as
/// (d_max * w_max)^N and overflows fixed-width integers for deep configs.
using BigCount = boost::multiprecision::cpp_int;

/// The staged residual-network universe: N stages, each stage free to pick a
/// depth in [1, d_max] and a width in [1, w_max]. Window sizes partition the
/// per-stage axes into the contiguous ranges a NetworkSpace selects from.
struct ExpandedSpaceConfig {
  int num_stages = 3;
  int d_max = 16;
  int w_max = 512;
  int depth_window = 4;
  int width_window = 32;
  int input_resolution = 32;
  int input_channels = 3;
  int stem_width = 16;
  int num_classes = 10;
  int width_granularity = 1;  // channel step inside a width window

  int depth_window_count() const { return d_max / depth_window; }
  int width_window_count() const { return w_max / width_window; }

  void validate() const {
    auto positive = [](int v, const char* name) {
      if (v < 1) throw validation_error(std::string(name) + " must be >= 1");
    };
    positive(num_stages, "num_stages");
    positive(d_max, "d_max");
    positive(w_max, "w_max");
    positive(depth_window, "depth_window");
    positive(width_window, "width_window");
    positive(input_resolution, "input_resolution");
    positive(input_channels, "input_channels");
    positive(stem_width, "stem_width");
    positive(num_classes, "num_classes");
    positive(width_granularity, "width_granularity");
    if (d_max % depth_window != 0)
      throw validation_error("d_max must be divisible by depth_window");
    if (w_max % width_window != 0)
      throw validation_error("w_max must be divisible by width_window");
    int min_res = 1;
    for (int i = 1; i < num_stages; ++i) min_res *= 2;
    if (input_resolution < min_res)
      throw validation_error("input_resolution too small: every stage needs >= 1 pixel");
  }

  friend bool operator==(const ExpandedSpaceConfig&, const ExpandedSpaceConfig&) = default;
};

/// One architecture: per-stage block counts and channel counts.
struct NetworkConfig {
  std::vector<int> depths;
  std::vector<int> widths;

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

/// One network space: per-stage window indices. Window k over depth covers
/// blocks [k*dw + 1, (k+1)*dw]; width windows likewise over channels.
struct NetworkSpace {
  std::vector<int> depth_window_idx;
  std::vector<int> width_window_idx;

  friend bool operator==(const NetworkSpace&, const NetworkSpace&) = default;
};

struct IntRange {
  int lo = 0;
  int hi = 0;  // inclusive
  int size() const { return hi - lo + 1; }
};

inline void validate_config(const ExpandedSpaceConfig& cfg, const NetworkConfig& a) {
  if (static_cast<int>(a.depths.size()) != cfg.num_stages ||
      static_cast<int>(a.widths.size()) != cfg.num_stages)
    throw validation_error("network config has wrong number of stages");
  for (int i = 0; i < cfg.num_stages; ++i) {
    if (a.depths[static_cast<std::size_t>(i)] < 1 || a.depths[static_cast<std::size_t>(i)] > cfg.d_max)
      throw validation_error("depth out of range at stage " + std::to_string(i + 1));
    if (a.widths[static_cast<std::size_t>(i)] < 1 || a.widths[static_cast<std::size_t>(i)] > cfg.w_max)
      throw validation_error("width out of range at stage " + std::to_string(i + 1));
  }
}

inline void validate_space(const ExpandedSpaceConfig& cfg, const NetworkSpace& s) {
  if (static_cast<int>(s.depth_window_idx.size()) != cfg.num_stages ||
      static_cast<int>(s.width_window_idx.size()) != cfg.num_stages)
    throw validation_error("network space has wrong number of stages");
  for (int i = 0; i < cfg.num_stages; ++i) {
    const int di = s.depth_window_idx[static_cast<std::size_t>(i)];
    const int wi = s.width_window_idx[static_cast<std::size_t>(i)];
    if (di < 0 || di >= cfg.depth_window_count())
      throw validation_error("depth window index out of range at stage " + std::to_string(i + 1));
    if (wi < 0 || wi >= cfg.width_window_count())
      throw validation_error("width window index out of range at stage " + std::to_string(i + 1));
  }
}

inline IntRange depth_range(const ExpandedSpaceConfig& cfg, const NetworkSpace& s, int stage) {
  const int idx = s.depth_window_idx[static_cast<std::size_t>(stage)];
  return {idx * cfg.depth_window + 1, (idx + 1) * cfg.depth_window};
}

inline IntRange width_range(const ExpandedSpaceConfig& cfg, const NetworkSpace& s, int stage) {
  const int idx = s.width_window_idx[static_cast<std::size_t>(stage)];
  return {idx * cfg.width_window + 1, (idx + 1) * cfg.width_window};
}

/// Channel values admitted inside a width window: {lo, lo+step, ...} capped
/// at the window's upper edge.
inline std::vector<int> width_grid(IntRange r, int step) {
  std::vector<int> out;
  for (int w = r.lo; w <= r.hi; w += step) out.push_back(w);
  return out;
}

inline BigCount count_networks(const ExpandedSpaceConfig& cfg) {
  cfg.validate();
  BigCount per_stage = BigCount(cfg.d_max) * cfg.w_max;
  BigCount total = 1;
  for (int i = 0; i < cfg.num_stages; ++i) total *= per_stage;
  return total;
}

inline BigCount count_spaces(const ExpandedSpaceConfig& cfg) {
  cfg.validate();
  BigCount per_stage = BigCount(cfg.depth_window_count()) * cfg.width_window_count();
  BigCount total = 1;
  for (int i = 0; i < cfg.num_stages; ++i) total *= per_stage;
  return total;
}

/// Number of configs enumerate_space(cfg, s, stride) emits.
inline BigCount space_size(const ExpandedSpaceConfig& cfg, const NetworkSpace& s, int stride = 1) {
  validate_space(cfg, s);
  if (stride < 1) throw validation_error("stride must be >= 1");
  const int step = cfg.width_granularity * stride;
  BigCount total = 1;
  for (int i = 0; i < cfg.num_stages; ++i) {
    const IntRange dr = depth_range(cfg, s, i);
    const IntRange wr = width_range(cfg, s, i);
    const int width_count = (wr.size() + step - 1) / step;
    total *= BigCount(dr.size()) * width_count;
  }
  return total;
}

/// Visits every config of the space in lexicographic order over
/// (d_1, w_1, ..., d_N, w_N), widths stepping by granularity*stride.
inline void for_each_config(const ExpandedSpaceConfig& cfg, const NetworkSpace& s, int stride,
                            const std::function<void(const NetworkConfig&)>& fn) {
  validate_space(cfg, s);
  if (stride < 1) throw validation_error("stride must be >= 1");
  const int step = cfg.width_granularity * stride;
  const int n = cfg.num_stages;

  std::vector<IntRange> dr(static_cast<std::size_t>(n)), wr(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    dr[static_cast<std::size_t>(i)] = depth_range(cfg, s, i);
    wr[static_cast<std::size_t>(i)] = width_range(cfg, s, i);
  }

  NetworkConfig a;
  a.depths.resize(static_cast<std::size_t>(n));
  a.widths.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    a.depths[static_cast<std::size_t>(i)] = dr[static_cast<std::size_t>(i)].lo;
    a.widths[static_cast<std::size_t>(i)] = wr[static_cast<std::size_t>(i)].lo;
  }

  // Odometer over 2N digits: (d_1, w_1, ..., d_N, w_N), last digit fastest.
  while (true) {
    fn(a);
    int digit = 2 * n - 1;
    for (; digit >= 0; --digit) {
      const int stage = digit / 2;
      const bool is_width = (digit % 2) == 1;
      if (is_width) {
        int& w = a.widths[static_cast<std::size_t>(stage)];
        if (w + step <= wr[static_cast<std::size_t>(stage)].hi) {
          w += step;
          break;
        }
        w = wr[static_cast<std::size_t>(stage)].lo;
      } else {
        int& d = a.depths[static_cast<std::size_t>(stage)];
        if (d + 1 <= dr[static_cast<std::size_t>(stage)].hi) {
          d += 1;
          break;
        }
        d = dr[static_cast<std::size_t>(stage)].lo;
      }
    }
    if (digit < 0) return;
  }
}

inline std::vector<NetworkConfig> enumerate_space(const ExpandedSpaceConfig& cfg,
                                                  const NetworkSpace& s, int stride = 1) {
  std::vector<NetworkConfig> out;
  for_each_config(cfg, s, stride, [&](const NetworkConfig& a) { out.push_back(a); });
  return out;
}

}  // namespace nss
