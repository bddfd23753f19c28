#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nss/errors.hpp"
#include "nss/flops.hpp"
#include "nss/io.hpp"
#include "nss/rng.hpp"
#include "nss/sampling.hpp"
#include "nss/space.hpp"

namespace nss {

struct FlopsTarget {
  std::int64_t target = 600'000'000;

  void validate() const {
    if (target <= 0) throw validation_error("flops target must be > 0");
  }
};

/// Absolute relative deviation from the target: |flops/target - 1|.
inline double flops_loss(double flops, FlopsTarget tgt) {
  tgt.validate();
  if (flops < 0) throw validation_error("flops must be >= 0");
  return std::abs(flops / static_cast<double>(tgt.target) - 1.0);
}

/// Whether |flops/target - 1| <= band, evaluated as |flops - target| <=
/// band * target so the inclusive band edges survive floating point.
inline bool within_flops_band(double flops, double target, double band) {
  if (!(band >= 0.0)) throw validation_error("band must be >= 0");
  if (!(target > 0.0)) throw validation_error("target must be > 0");
  return std::abs(flops - target) <= band * target;
}

struct LossWeights {
  double lambda = 10.0;

  void validate() const {
    if (!(lambda >= 0.0)) throw validation_error("lambda must be >= 0");
  }
};

/// task + lambda * flops penalty.
inline double combined_loss(double task, double flops_l, LossWeights w) {
  w.validate();
  return task + w.lambda * flops_l;
}

/// Task-loss source for architectures. Implementations must be deterministic
/// per (config, rng state); pure implementations may be called concurrently.
class Oracle {
 public:
  virtual ~Oracle() = default;
  virtual double eval(const NetworkConfig& config, Rng& rng) = 0;
  /// Whether the loss admits a relaxation in the sampling weights, enabling
  /// the pathwise gradient estimator.
  virtual bool differentiable() const { return false; }
};

inline double oracle_eval(Oracle& oracle, const NetworkConfig& a, Rng& rng) {
  return oracle.eval(a, rng);
}

/// Analytic error surrogate: a floor plus a power-law decay in FLOPs plus a
/// per-stage quadratic penalty away from a planted optimum shape, plus
/// hash-based noise. The noise is a function of (seed, config), so the
/// surrogate is a fixed random function: repeated evaluations agree bitwise.
struct SurrogateParams {
  double error_floor = 0.03;
  double scale = 0.5;
  double flops_exponent = 0.45;
  double flops_ref = 600e6;
  double noise_scale = 0.01;
  std::uint64_t noise_seed = 0;
  std::vector<double> shape_weight;      // per stage
  std::vector<int> optimum_depths;       // planted per-stage optimum
  std::vector<int> optimum_widths;

  static SurrogateParams defaults(const ExpandedSpaceConfig& cfg) {
    SurrogateParams p;
    p.shape_weight.assign(static_cast<std::size_t>(cfg.num_stages), 0.05);
    // Shallow-wide middle stage by default; mid-size everywhere else.
    for (int i = 0; i < cfg.num_stages; ++i) {
      double f = 0.5;
      if (cfg.num_stages == 3) f = (i == 0) ? 0.25 : (i == 1) ? 0.75 : 0.5;
      p.optimum_depths.push_back(std::max(1, static_cast<int>(std::lround(f * cfg.d_max))));
      p.optimum_widths.push_back(std::max(1, static_cast<int>(std::lround(f * cfg.w_max))));
    }
    return p;
  }

  void validate(const ExpandedSpaceConfig& cfg) const {
    const auto n = static_cast<std::size_t>(cfg.num_stages);
    if (shape_weight.size() != n || optimum_depths.size() != n || optimum_widths.size() != n)
      throw validation_error("surrogate per-stage parameters have wrong length");
    if (!(flops_ref > 0)) throw validation_error("surrogate flops_ref must be > 0");
    if (!(noise_scale >= 0)) throw validation_error("surrogate noise_scale must be >= 0");
  }
};

class SurrogateOracle final : public Oracle {
 public:
  SurrogateOracle(ExpandedSpaceConfig cfg, SurrogateParams params)
      : cfg_(std::move(cfg)), params_(std::move(params)) {
    cfg_.validate();
    params_.validate(cfg_);
  }

  double eval(const NetworkConfig& a, Rng&) override {
    const double flops = static_cast<double>(network_flops(cfg_, a).total);
    double err = params_.error_floor +
                 params_.scale * std::pow(flops / params_.flops_ref, -params_.flops_exponent);
    for (int i = 0; i < cfg_.num_stages; ++i) {
      const auto k = static_cast<std::size_t>(i);
      const double dd = (a.depths[k] - params_.optimum_depths[k]) / static_cast<double>(cfg_.d_max);
      const double dw = (a.widths[k] - params_.optimum_widths[k]) / static_cast<double>(cfg_.w_max);
      err += params_.shape_weight[k] * (dd * dd + dw * dw);
    }
    err += params_.noise_scale * noise_unit(a);
    return err;
  }

  bool differentiable() const override { return true; }

  const ExpandedSpaceConfig& space_config() const { return cfg_; }
  const SurrogateParams& params() const { return params_; }

 private:
  // Deterministic noise in [-1, 1) keyed by (seed, config).
  double noise_unit(const NetworkConfig& a) const {
    std::uint64_t h = params_.noise_seed ^ 0x6b43a9b5d391cull;
    for (int v : a.depths) h = splitmix64(h) ^ static_cast<std::uint64_t>(v);
    for (int v : a.widths) h = splitmix64(h) ^ (static_cast<std::uint64_t>(v) << 17);
    const std::uint64_t bits = splitmix64(h);
    return 2.0 * (static_cast<double>(bits >> 11) * 0x1.0p-53) - 1.0;
  }

  ExpandedSpaceConfig cfg_;
  SurrogateParams params_;
};

/// Exact-match lookup of task error from a CSV table with header
/// d1,..,dN,w1,..,wN,error. A missing row is an error, never interpolated.
class TabularOracle final : public Oracle {
 public:
  TabularOracle(const std::filesystem::path& path, int num_stages) : num_stages_(num_stages) {
    const std::string text = read_text_file(path);
    std::stringstream ss(text);
    std::string line;
    long row = 0;
    bool saw_header = false;
    while (std::getline(ss, line)) {
      ++row;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      const std::vector<std::string> fields = split_csv_row(line);
      if (!saw_header) {
        if (static_cast<int>(fields.size()) != 2 * num_stages_ + 1 || fields.back() != "error")
          throw validation_error(path.string() + ": bad table header at row " + std::to_string(row));
        saw_header = true;
        continue;
      }
      if (static_cast<int>(fields.size()) != 2 * num_stages_ + 1)
        throw validation_error(path.string() + ": bad column count at row " + std::to_string(row));
      NetworkConfig a;
      for (int i = 0; i < num_stages_; ++i)
        a.depths.push_back(static_cast<int>(parse_int(fields[static_cast<std::size_t>(i)],
                                                      "row " + std::to_string(row))));
      for (int i = 0; i < num_stages_; ++i)
        a.widths.push_back(static_cast<int>(parse_int(fields[static_cast<std::size_t>(num_stages_ + i)],
                                                      "row " + std::to_string(row))));
      table_[key(a)] = parse_double(fields.back(), "row " + std::to_string(row));
    }
    if (!saw_header) throw validation_error(path.string() + ": empty oracle table");
  }

  double eval(const NetworkConfig& a, Rng&) override {
    const auto it = table_.find(key(a));
    if (it == table_.end()) throw table_miss_error("no table row for config " + key(a));
    return it->second;
  }

  std::size_t size() const { return table_.size(); }

 private:
  static std::string key(const NetworkConfig& a) {
    std::string k = "d";
    for (int v : a.depths) k += std::to_string(v) + ",";
    k += "w";
    for (int v : a.widths) k += std::to_string(v) + ",";
    return k;
  }

  int num_stages_;
  std::unordered_map<std::string, double> table_;
};

/// Inner expectation of Eq.-style nested sampling: mean task loss over m
/// uniform architecture draws from the space, with the standard error of the
/// mean for diagnostics (0 when m == 1).
inline std::pair<double, double> space_task_loss_estimate(Oracle& oracle,
                                                          const ExpandedSpaceConfig& cfg,
                                                          const NetworkSpace& s, long m, Rng& rng) {
  if (m < 1) throw validation_error("sample count must be >= 1");
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(m));
  for (long i = 0; i < m; ++i) {
    const NetworkConfig a = sample_architecture_uniform(cfg, s, rng);
    losses.push_back(oracle.eval(a, rng));
  }
  double mean = 0.0;
  for (double v : losses) mean += v;
  mean /= static_cast<double>(m);
  if (m == 1) return {mean, 0.0};
  double var = 0.0;
  for (double v : losses) var += (v - mean) * (v - mean);
  var /= static_cast<double>(m - 1);
  return {mean, std::sqrt(var / static_cast<double>(m))};
}

}  // namespace nss
