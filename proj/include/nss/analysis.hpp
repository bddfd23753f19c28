#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "nss/errors.hpp"
#include "nss/flops.hpp"
#include "nss/io.hpp"
#include "nss/objectives.hpp"
#include "nss/rng.hpp"
#include "nss/sampling.hpp"
#include "nss/search.hpp"
#include "nss/space.hpp"

namespace nss {

/// One evaluated architecture; the unit of all analysis.
struct EvalRecord {
  NetworkConfig config;
  std::int64_t flops = 0;
  double error = 0.0;

  friend bool operator==(const EvalRecord&, const EvalRecord&) = default;
};

/// Non-dominated subset minimizing (error, flops): a record survives iff no
/// other has <= on both axes with at least one strict. Records equal on both
/// axes do not dominate each other; exact duplicates collapse to one entry.
/// Output sorted by flops, ties kept in input order.
inline std::vector<EvalRecord> pareto_front(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw validation_error("pareto_front needs at least one record");
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (records[a].flops != records[b].flops) return records[a].flops < records[b].flops;
    return records[a].error < records[b].error;
  });

  // Sweep by ascending flops: within one flops value only the minimum error
  // survives (one copy), and it survives only by strictly improving on
  // everything cheaper.
  std::vector<EvalRecord> front;
  double best_error = std::numeric_limits<double>::infinity();
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && records[order[j]].flops == records[order[i]].flops) ++j;
    const EvalRecord& group_min = records[order[i]];
    if (group_min.error < best_error) {
      front.push_back(group_min);
      best_error = group_min.error;
    }
    i = j;
  }
  return front;
}

/// Empirical distribution function, stored as its breakpoints:
/// F(x) = (1/n) * #{ value_i <= x }.
struct EdfCurve {
  std::vector<std::pair<double, double>> points;  // (value, cumulative fraction), values ascending

  double at(double x) const {
    double f = 0.0;
    for (const auto& [v, frac] : points) {
      if (v <= x)
        f = frac;
      else
        break;
    }
    return f;
  }
};

inline EdfCurve edf(std::vector<double> values) {
  if (values.empty()) throw validation_error("edf needs at least one value");
  std::sort(values.begin(), values.end());
  EdfCurve curve;
  const double n = static_cast<double>(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = values[i];
    if (!curve.points.empty() && curve.points.back().first == v)
      curve.points.back().second = static_cast<double>(i + 1) / n;
    else
      curve.points.emplace_back(v, static_cast<double>(i + 1) / n);
  }
  return curve;
}

inline std::vector<EvalRecord> flops_band_filter(const std::vector<EvalRecord>& records,
                                                 double target, double band) {
  std::vector<EvalRecord> out;
  for (const EvalRecord& r : records)
    if (within_flops_band(static_cast<double>(r.flops), target, band)) out.push_back(r);
  return out;
}

/// Relative FLOPs deviation as a percentage: 100 * |flops/target - 1|.
inline double deviation_percent(double flops, double target) {
  if (!(target > 0.0)) throw validation_error("target must be > 0");
  return 100.0 * std::abs(flops / target - 1.0);
}

/// k architectures drawn uniformly from the windows and evaluated by the
/// oracle; the paper's random-sampling comparison protocol.
inline std::vector<EvalRecord> random_baseline(const StageWindows& windows, Oracle& oracle,
                                               long k, const ExpandedSpaceConfig& cfg, Rng& rng) {
  if (k < 1) throw validation_error("sample count must be >= 1");
  const ArchDistribution uniform = ArchDistribution::uniform(windows, cfg.width_granularity);
  std::vector<EvalRecord> out;
  out.reserve(static_cast<std::size_t>(k));
  for (long i = 0; i < k; ++i) {
    std::vector<int> depth_idx, width_idx;
    for (const auto& logits : uniform.depth_logits)
      depth_idx.push_back(static_cast<int>(rng.uniform_below(logits.size())));
    for (const auto& logits : uniform.width_logits)
      width_idx.push_back(static_cast<int>(rng.uniform_below(logits.size())));
    const NetworkConfig a = uniform.config_at(depth_idx, width_idx);
    out.push_back({a, network_flops(cfg, a).total, oracle.eval(a, rng)});
  }
  return out;
}

/// Number of draws from `flops_sampler` until the first lands within the
/// band around the target. Cap exhaustion raises.
inline long samples_to_constraint(const std::function<double(Rng&)>& flops_sampler, double target,
                                  double band, long cap, Rng& rng) {
  if (cap < 1) throw validation_error("cap must be >= 1");
  if (!(target > 0.0)) throw validation_error("target must be > 0");
  for (long count = 1; count <= cap; ++count) {
    if (within_flops_band(flops_sampler(rng), target, band)) return count;
  }
  throw cap_exhausted_error("no in-band sample within " + std::to_string(cap) + " draws",
                            NasOutcome{});
}

/// Window-midpoint summary of a population of spaces and the weak-order
/// patterns their stage midpoints induce (e.g. "d1<=d3<=d2").
struct SpaceStats {
  std::vector<double> mean_depth_midpoint;  // per stage
  std::vector<double> mean_width_midpoint;
  std::map<std::string, double> depth_pattern_freq;
  std::map<std::string, double> width_pattern_freq;
};

namespace detail {

inline std::string order_pattern(const std::vector<double>& midpoints, char symbol) {
  std::vector<std::size_t> idx(midpoints.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return midpoints[a] < midpoints[b]; });
  std::string out;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (k > 0)
      out += midpoints[idx[k]] == midpoints[idx[k - 1]] ? "=" : "<=";
    out += symbol;
    out += std::to_string(idx[k] + 1);
  }
  return out;
}

}  // namespace detail

inline SpaceStats space_ordering_stats(const std::vector<NetworkSpace>& spaces,
                                       const ExpandedSpaceConfig& cfg) {
  if (spaces.empty()) throw validation_error("space_ordering_stats needs at least one space");
  SpaceStats stats;
  stats.mean_depth_midpoint.assign(static_cast<std::size_t>(cfg.num_stages), 0.0);
  stats.mean_width_midpoint.assign(static_cast<std::size_t>(cfg.num_stages), 0.0);
  for (const NetworkSpace& s : spaces) {
    validate_space(cfg, s);
    std::vector<double> dm, wm;
    for (int i = 0; i < cfg.num_stages; ++i) {
      const IntRange dr = depth_range(cfg, s, i);
      const IntRange wr = width_range(cfg, s, i);
      dm.push_back(0.5 * (dr.lo + dr.hi));
      wm.push_back(0.5 * (wr.lo + wr.hi));
      stats.mean_depth_midpoint[static_cast<std::size_t>(i)] += dm.back();
      stats.mean_width_midpoint[static_cast<std::size_t>(i)] += wm.back();
    }
    stats.depth_pattern_freq[detail::order_pattern(dm, 'd')] += 1.0;
    stats.width_pattern_freq[detail::order_pattern(wm, 'w')] += 1.0;
  }
  const double n = static_cast<double>(spaces.size());
  for (double& v : stats.mean_depth_midpoint) v /= n;
  for (double& v : stats.mean_width_midpoint) v /= n;
  for (auto& [pattern, count] : stats.depth_pattern_freq) count /= n;
  for (auto& [pattern, count] : stats.width_pattern_freq) count /= n;
  return stats;
}

/// Per-variant output of the complexity sweep: how architecture search fares
/// directly on the variant universe versus through an NSS-discovered space,
/// measured by in-band sample density and the FLOPs EDF of in-band samples.
struct SweepEntryResult {
  ExpandedSpaceConfig cfg;
  NasOutcome baseline;  // full-space architecture search; carries its samples_to_constraint
  EliteSpace elite;
  long elite_samples_to_constraint = 0;  // uniform draws from the elite space until in-band
  double baseline_in_band_fraction = 0.0;
  double elite_in_band_fraction = 0.0;
  std::optional<EdfCurve> baseline_band_edf;
  std::optional<EdfCurve> elite_band_edf;
};

/// Runs the full-space architecture-search baseline and an NSS search on
/// each space variant, then compares the FLOPs of architectures drawn from
/// the two final distributions inside the target band.
inline std::vector<SweepEntryResult> complexity_sweep(
    const std::vector<ExpandedSpaceConfig>& variants,
    const std::function<std::unique_ptr<Oracle>(const ExpandedSpaceConfig&)>& oracle_factory,
    const SearchConfig& search, long comparison_samples = 1000) {
  if (variants.empty()) throw validation_error("complexity_sweep needs at least one variant");
  std::vector<SweepEntryResult> out;
  for (std::size_t vi = 0; vi < variants.size(); ++vi) {
    const ExpandedSpaceConfig& cfg = variants[vi];
    cfg.validate();
    std::unique_ptr<Oracle> oracle = oracle_factory(cfg);

    SweepEntryResult entry;
    entry.cfg = cfg;

    Rng nas_rng = Rng(search.seed).split(vi);
    entry.baseline = nas_search(StageWindows::full(cfg), *oracle, cfg, search, nas_rng);

    SearchConfig nss_cfg = search;
    nss_cfg.seed = Rng(search.seed).split(vi + 0x10000).next_u64();
    auto [state, elite] = run_nss(cfg, nss_cfg, *oracle);
    (void)state;
    entry.elite = elite;

    const double target = static_cast<double>(search.flops_target.target);
    Rng draw_rng = Rng(search.seed).split(vi + 0x20000);
    std::vector<double> baseline_flops, elite_flops;
    for (long i = 0; i < comparison_samples; ++i) {
      auto [a, draws] = sample_architecture(entry.baseline.final_distribution,
                                            search.temperature.t_end, draw_rng);
      (void)draws;
      const double f = static_cast<double>(network_flops(cfg, a).total);
      if (within_flops_band(f, target, search.nas_band)) baseline_flops.push_back(f);

      const NetworkConfig b = sample_architecture_uniform(cfg, entry.elite.space, draw_rng);
      const double g = static_cast<double>(network_flops(cfg, b).total);
      if (within_flops_band(g, target, search.nas_band)) elite_flops.push_back(g);
    }
    entry.baseline_in_band_fraction =
        static_cast<double>(baseline_flops.size()) / static_cast<double>(comparison_samples);
    entry.elite_in_band_fraction =
        static_cast<double>(elite_flops.size()) / static_cast<double>(comparison_samples);
    if (!baseline_flops.empty()) entry.baseline_band_edf = edf(std::move(baseline_flops));
    if (!elite_flops.empty()) entry.elite_band_edf = edf(std::move(elite_flops));

    Rng stc_rng = Rng(search.seed).split(vi + 0x30000);
    const NetworkSpace elite_space = entry.elite.space;
    try {
      entry.elite_samples_to_constraint = samples_to_constraint(
          [&cfg, &elite_space](Rng& r) {
            return static_cast<double>(
                network_flops(cfg, sample_architecture_uniform(cfg, elite_space, r)).total);
          },
          target, search.nas_band, search.nas_sample_cap, stc_rng);
    } catch (const cap_exhausted_error&) {
      entry.elite_samples_to_constraint = search.nas_sample_cap;
    }
    out.push_back(std::move(entry));
  }
  return out;
}

// ---- CSV emission/ingestion -------------------------------------------------

/// Records CSV: provenance line, then d1..dN,w1..wN,flops,error.
inline std::string records_to_csv(const std::vector<EvalRecord>& records, int num_stages,
                                  std::uint64_t config_hash, std::uint64_t seed) {
  std::string out = provenance_line(config_hash, seed) + "\n";
  for (int i = 1; i <= num_stages; ++i) out += "d" + std::to_string(i) + ",";
  for (int i = 1; i <= num_stages; ++i) out += "w" + std::to_string(i) + ",";
  out += "flops,error\n";
  for (const EvalRecord& r : records) {
    for (int v : r.config.depths) out += std::to_string(v) + ",";
    for (int v : r.config.widths) out += std::to_string(v) + ",";
    out += std::to_string(r.flops) + "," + format_double(r.error) + "\n";
  }
  return out;
}

inline std::vector<EvalRecord> records_from_csv(const std::string& text) {
  std::stringstream ss(text);
  std::string line;
  std::vector<EvalRecord> out;
  long row = 0;
  int num_stages = -1;
  while (std::getline(ss, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const std::vector<std::string> fields = split_csv_row(line);
    if (num_stages < 0) {
      if (fields.size() < 4 || fields.size() % 2 != 0 || fields[fields.size() - 2] != "flops" ||
          fields.back() != "error")
        throw validation_error("bad records header at row " + std::to_string(row));
      num_stages = static_cast<int>(fields.size() - 2) / 2;
      continue;
    }
    if (static_cast<int>(fields.size()) != 2 * num_stages + 2)
      throw validation_error("bad record at row " + std::to_string(row) + ": wrong column count");
    EvalRecord r;
    const std::string ctx = "row " + std::to_string(row);
    for (int i = 0; i < num_stages; ++i)
      r.config.depths.push_back(static_cast<int>(parse_int(fields[static_cast<std::size_t>(i)], ctx)));
    for (int i = 0; i < num_stages; ++i)
      r.config.widths.push_back(
          static_cast<int>(parse_int(fields[static_cast<std::size_t>(num_stages + i)], ctx)));
    r.flops = parse_int(fields[fields.size() - 2], ctx);
    r.error = parse_double(fields.back(), ctx);
    out.push_back(std::move(r));
  }
  if (num_stages < 0) throw validation_error("records file has no header");
  if (out.empty()) throw validation_error("records file has no rows");
  return out;
}

inline std::string edf_to_csv(const EdfCurve& curve, std::uint64_t config_hash,
                              std::uint64_t seed) {
  std::string out = provenance_line(config_hash, seed) + "\nvalue,fraction\n";
  for (const auto& [v, f] : curve.points)
    out += format_double(v) + "," + format_double(f) + "\n";
  return out;
}

inline std::string history_to_csv(const std::vector<StepRecord>& history,
                                  std::uint64_t config_hash, std::uint64_t seed) {
  std::string out = provenance_line(config_hash, seed) +
                    "\nstep,temperature,task_loss,flops_loss,combined,entropy\n";
  for (const StepRecord& r : history) {
    out += std::to_string(r.step) + "," + format_double(r.temperature) + "," +
           format_double(r.task_loss) + "," + format_double(r.flops_loss) + "," +
           format_double(r.combined) + "," + format_double(r.entropy) + "\n";
  }
  return out;
}

}  // namespace nss
