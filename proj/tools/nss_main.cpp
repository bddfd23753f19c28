// Command-line surface of the network-space-search engine. Every command is
// a thin adapter: parse, validate, delegate to the library, serialize.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "nss/analysis.hpp"
#include "nss/experiment.hpp"
#include "nss/flops.hpp"
#include "nss/search.hpp"
#include "nss/serde.hpp"
#include "nss/supernet.hpp"
#include "nss/version.hpp"

namespace fs = std::filesystem;
using nss::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitCapExhausted = 3;

std::vector<int> parse_int_list(const std::string& csv, const std::string& flag) {
  std::vector<int> out;
  for (const std::string& f : nss::split_csv_row(csv))
    out.push_back(static_cast<int>(nss::parse_int(f, flag)));
  if (out.empty()) throw nss::validation_error(flag + " must list at least one value");
  return out;
}

int worker_cap() {
  unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("NSS_THREADS")) {
    const long v = nss::parse_int(env, "NSS_THREADS");
    if (v < 1) throw nss::validation_error("NSS_THREADS must be >= 1");
    hw = std::min<unsigned>(hw, static_cast<unsigned>(v));
  }
  return static_cast<int>(hw);
}

// Runs jobs with bounded parallelism; failures rethrow in job order.
void run_jobs(const std::vector<std::function<void()>>& jobs) {
  const int cap = worker_cap();
  std::vector<std::exception_ptr> errors(jobs.size());
  std::size_t next = 0;
  while (next < jobs.size()) {
    const std::size_t begin = next;
    const std::size_t end = std::min(jobs.size(), begin + static_cast<std::size_t>(cap));
    std::vector<std::thread> pool;
    for (std::size_t i = begin; i < end; ++i)
      pool.emplace_back([&, i] {
        try {
          jobs[i]();
        } catch (...) {
          errors[i] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    next = end;
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct FlopsArgs {
  std::string config_path;
  std::string space_path;
  std::string depths;
  std::string widths;
  bool as_json = false;
};

int cmd_flops(const FlopsArgs& args) {
  nss::ExpandedSpaceConfig cfg;
  if (!args.config_path.empty())
    cfg = nss::ExperimentConfig::load(args.config_path).space;
  else if (!args.space_path.empty())
    cfg = nss::space_config_from_json(json::parse(nss::read_text_file(args.space_path)));

  nss::NetworkConfig a;
  a.depths = parse_int_list(args.depths, "--depths");
  a.widths = parse_int_list(args.widths, "--widths");
  const nss::FlopsBreakdown b = nss::network_flops(cfg, a);

  if (args.as_json) {
    std::cout << nss::to_json(b).dump(2) << "\n";
    return kExitOk;
  }
  std::cout << "stem   " << b.stem << "\n";
  for (std::size_t i = 0; i < b.per_stage.size(); ++i)
    std::cout << "stage" << (i + 1) << " " << b.per_stage[i] << "\n";
  std::cout << "head   " << b.head << "\n";
  std::cout << "total  " << b.total << "\n";
  return kExitOk;
}

void run_one_search(const nss::ExperimentConfig& exp, const nss::SearchConfig& sc,
                    const fs::path& dir) {
  const std::uint64_t hash = exp.config_hash();
  nss::SearchState state;
  nss::EliteSpace elite;
  nss::Rng rng(sc.seed);
  if (exp.oracle.kind == nss::OracleKind::toy_supernet && exp.oracle.checkpoint_path.empty()) {
    nss::BilevelResult result =
        nss::bilevel_nss(exp.oracle.task, exp.space, sc, exp.oracle.train, rng);
    state = std::move(result.state);
    elite = std::move(result.elite);
    nss::write_text_file(dir / "supernet.json",
                         nss::supernet_to_json(result.params, sc.seed, sc.total_steps()).dump(2) + "\n");
  } else {
    std::unique_ptr<nss::Oracle> oracle = nss::make_oracle(exp.oracle, exp.space);
    auto [st, el] = nss::run_nss(exp.space, sc, *oracle, &rng);
    state = std::move(st);
    elite = std::move(el);
  }
  nss::write_text_file(dir / "history.csv", nss::history_to_csv(state.history, hash, sc.seed));
  nss::write_text_file(dir / "elite.json", nss::to_json(elite, hash, sc.seed).dump(2) + "\n");
  nss::write_text_file(dir / "checkpoint.json",
                       nss::checkpoint_to_json(exp.space, sc, state, rng).dump(2) + "\n");
}

int cmd_search(const std::string& config_path, const std::string& out_override) {
  nss::ExperimentConfig exp = nss::ExperimentConfig::load(config_path);
  const fs::path root = out_override.empty() ? fs::path(exp.out_dir) : fs::path(out_override);

  std::vector<std::function<void()>> jobs;
  for (const auto& [sub, sc] : exp.expand()) {
    const fs::path dir = sub.empty() ? root : root / sub;
    jobs.emplace_back([exp, sc = sc, dir] { run_one_search(exp, sc, dir); });
  }
  run_jobs(jobs);
  return kExitOk;
}

int cmd_elite(const std::string& checkpoint_path, const std::string& out_path, int n_override,
              long seed_override) {
  nss::Checkpoint ckpt = nss::checkpoint_from_json(json::parse(nss::read_text_file(checkpoint_path)));
  if (n_override > 0) ckpt.search.n_elite = n_override;
  nss::Rng rng = seed_override >= 0 ? nss::Rng(static_cast<std::uint64_t>(seed_override)) : ckpt.rng;
  const nss::EliteSpace elite =
      nss::extract_elite_space(ckpt.state.theta, ckpt.space, ckpt.search, rng);
  const std::uint64_t hash = nss::fnv1a64(nss::to_json(ckpt.space).dump());
  nss::write_text_file(out_path, nss::to_json(elite, hash, ckpt.search.seed).dump(2) + "\n");
  std::cout << "elite deviation " << nss::format_double(elite.deviation) << "\n";
  return kExitOk;
}

int cmd_nas(const std::string& config_path, const std::string& space_arg,
            const std::string& out_dir) {
  nss::ExperimentConfig exp = nss::ExperimentConfig::load(config_path);
  nss::StageWindows windows;
  if (space_arg == "full") {
    windows = nss::StageWindows::full(exp.space);
  } else {
    const nss::EliteSpace elite =
        nss::elite_space_from_json(json::parse(nss::read_text_file(space_arg)));
    windows = nss::StageWindows::of(exp.space, elite.space);
  }
  std::unique_ptr<nss::Oracle> oracle = nss::make_oracle(exp.oracle, exp.space);
  const std::uint64_t hash = exp.config_hash();
  nss::Rng rng(exp.search.seed);

  const fs::path dir(out_dir);
  try {
    const nss::NasOutcome out =
        nss::run_nas_in_space(windows, *oracle, exp.space, exp.search, rng);
    const std::int64_t flops = nss::network_flops(exp.space, out.best).total;
    std::string csv = nss::provenance_line(hash, exp.search.seed) +
                      "\nflops,deviation_percent,samples_to_constraint,error\n";
    csv += std::to_string(flops) + "," + nss::format_double(100.0 * out.deviation) + "," +
           std::to_string(out.samples_to_constraint) + "," + nss::format_double(out.error) + "\n";
    nss::write_text_file(dir / "metrics.csv", csv);
    json best{{"provenance", nss::provenance_json(hash, exp.search.seed)},
              {"config", nss::to_json(out.best)},
              {"flops", flops},
              {"deviation_percent", 100.0 * out.deviation},
              {"samples_to_constraint", out.samples_to_constraint},
              {"error", out.error}};
    nss::write_text_file(dir / "best.json", best.dump(2) + "\n");
    return kExitOk;
  } catch (const nss::cap_exhausted_error& e) {
    const nss::NasOutcome& seen = e.best_seen();
    std::cerr << "cap exhausted: " << e.what() << "\n"
              << "best deviation seen " << nss::format_double(100.0 * seen.deviation)
              << "% at config " << nss::to_json(seen.best).dump() << "\n";
    return kExitCapExhausted;
  }
}

struct AnalyzeArgs {
  std::string records_path;
  std::string out_path;
  std::string spaces_path;
  std::string space_config_path;
  std::string metric = "auto";
  double target = 0.0;
  double band = -1.0;
};

int cmd_analyze(const std::string& sub, const AnalyzeArgs& args) {
  const std::uint64_t seed = 0;
  if (sub == "stats") {
    nss::ExpandedSpaceConfig cfg;
    if (!args.space_config_path.empty())
      cfg = nss::space_config_from_json(json::parse(nss::read_text_file(args.space_config_path)));
    const json j = json::parse(nss::read_text_file(args.spaces_path));
    std::vector<nss::NetworkSpace> spaces;
    for (const json& item : j)
      spaces.push_back(nss::network_space_from_json(item.contains("space") ? item.at("space") : item));
    const nss::SpaceStats stats = nss::space_ordering_stats(spaces, cfg);
    const std::uint64_t hash = nss::fnv1a64(nss::to_json(cfg).dump());
    std::string csv = nss::provenance_line(hash, seed) + "\nkind,item,value\n";
    for (const auto& [pattern, freq] : stats.depth_pattern_freq)
      csv += "depth_pattern," + pattern + "," + nss::format_double(freq) + "\n";
    for (const auto& [pattern, freq] : stats.width_pattern_freq)
      csv += "width_pattern," + pattern + "," + nss::format_double(freq) + "\n";
    for (std::size_t i = 0; i < stats.mean_depth_midpoint.size(); ++i)
      csv += "depth_midpoint_mean,stage" + std::to_string(i + 1) + "," +
             nss::format_double(stats.mean_depth_midpoint[i]) + "\n";
    for (std::size_t i = 0; i < stats.mean_width_midpoint.size(); ++i)
      csv += "width_midpoint_mean,stage" + std::to_string(i + 1) + "," +
             nss::format_double(stats.mean_width_midpoint[i]) + "\n";
    nss::write_text_file(args.out_path, csv);
    return kExitOk;
  }

  const std::string text = nss::read_text_file(args.records_path);
  std::vector<nss::EvalRecord> records = nss::records_from_csv(text);
  const std::uint64_t hash = nss::fnv1a64(text);
  const int num_stages = static_cast<int>(records.front().config.depths.size());

  if (sub == "pareto") {
    nss::write_text_file(args.out_path,
                         nss::records_to_csv(nss::pareto_front(records), num_stages, hash, seed));
    return kExitOk;
  }
  if (sub == "band") {
    if (!(args.target > 0) || args.band < 0)
      throw nss::validation_error("band analysis needs --target and --band");
    nss::write_text_file(args.out_path,
                         nss::records_to_csv(nss::flops_band_filter(records, args.target, args.band),
                                             num_stages, hash, seed));
    return kExitOk;
  }
  if (sub == "edf") {
    const bool banded = args.band >= 0;
    if (banded) {
      if (!(args.target > 0)) throw nss::validation_error("--band needs --target");
      records = nss::flops_band_filter(records, args.target, args.band);
      if (records.empty()) throw nss::validation_error("no records inside the FLOPs band");
    }
    // Banded runs default to the FLOPs EDF (the in-band density view);
    // otherwise the error EDF.
    std::string metric = args.metric;
    if (metric == "auto") metric = banded ? "flops" : "error";
    std::vector<double> values;
    for (const nss::EvalRecord& r : records)
      values.push_back(metric == "flops" ? static_cast<double>(r.flops) : r.error);
    nss::write_text_file(args.out_path, nss::edf_to_csv(nss::edf(std::move(values)), hash, seed));
    return kExitOk;
  }
  throw nss::validation_error("unknown analyze subcommand: " + sub);
}

int cmd_supernet_train(const std::string& config_path, const std::string& out_dir,
                       const std::string& space_path) {
  nss::ExperimentConfig exp = nss::ExperimentConfig::load(config_path);
  if (exp.oracle.kind != nss::OracleKind::toy_supernet)
    throw nss::validation_error("supernet-train needs an experiment with a toy_supernet oracle");
  const nss::TaskData data = nss::generate_task(exp.oracle.task);
  const nss::SuperNetConfig net_cfg =
      nss::SuperNetConfig::from(exp.space, exp.oracle.task.input_dim, exp.oracle.task.output_dim);

  // Single-path sampling over the full universe, or over one space when given.
  std::function<nss::NetworkConfig(nss::Rng&)> sampler;
  const nss::ExpandedSpaceConfig space_cfg = exp.space;
  if (space_path.empty()) {
    sampler = [space_cfg](nss::Rng& r) {
      nss::NetworkConfig a;
      for (int i = 0; i < space_cfg.num_stages; ++i) {
        a.depths.push_back(static_cast<int>(r.uniform_int(1, space_cfg.d_max)));
        a.widths.push_back(static_cast<int>(r.uniform_int(1, space_cfg.w_max)));
      }
      return a;
    };
  } else {
    const nss::EliteSpace elite =
        nss::elite_space_from_json(json::parse(nss::read_text_file(space_path)));
    const nss::NetworkSpace space = elite.space;
    sampler = [space_cfg, space](nss::Rng& r) {
      return nss::sample_architecture_uniform(space_cfg, space, r);
    };
  }

  nss::Rng rng(exp.seed);
  std::vector<double> trace;
  const nss::SuperNetParams params =
      nss::train_supernet(data, net_cfg, exp.oracle.train, sampler, rng, &trace);

  const fs::path dir(out_dir);
  const std::uint64_t hash = exp.config_hash();
  nss::write_text_file(dir / "supernet.json",
                       nss::supernet_to_json(params, exp.seed, exp.oracle.train.steps).dump(2) + "\n");
  std::string csv = nss::provenance_line(hash, exp.seed) + "\nstep,loss\n";
  for (std::size_t i = 0; i < trace.size(); ++i)
    csv += std::to_string(i) + "," + nss::format_double(trace[i]) + "\n";
  nss::write_text_file(dir / "trace.csv", csv);
  return kExitOk;
}

int cmd_gen_table(const std::string& config_path, const std::string& out_path, long count) {
  nss::ExperimentConfig exp = nss::ExperimentConfig::load(config_path);
  std::unique_ptr<nss::Oracle> oracle = nss::make_oracle(exp.oracle, exp.space);
  nss::Rng rng(exp.seed);

  std::vector<nss::NetworkConfig> configs;
  while (static_cast<long>(configs.size()) < count) {
    nss::NetworkConfig a;
    for (int i = 0; i < exp.space.num_stages; ++i) {
      a.depths.push_back(static_cast<int>(rng.uniform_int(1, exp.space.d_max)));
      a.widths.push_back(static_cast<int>(rng.uniform_int(1, exp.space.w_max)));
    }
    if (std::find(configs.begin(), configs.end(), a) == configs.end()) configs.push_back(std::move(a));
  }

  std::string csv = nss::provenance_line(exp.config_hash(), exp.seed) + "\n";
  for (int i = 1; i <= exp.space.num_stages; ++i) csv += "d" + std::to_string(i) + ",";
  for (int i = 1; i <= exp.space.num_stages; ++i) csv += "w" + std::to_string(i) + ",";
  csv += "error\n";
  for (const nss::NetworkConfig& a : configs) {
    for (int v : a.depths) csv += std::to_string(v) + ",";
    for (int v : a.widths) csv += std::to_string(v) + ",";
    csv += nss::format_double(oracle->eval(a, rng)) + "\n";
  }
  nss::write_text_file(out_path, csv);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"network space search engine"};
  app.set_version_flag("--version", std::string(nss::kVersion));
  app.require_subcommand(1);

  FlopsArgs flops_args;
  CLI::App* flops = app.add_subcommand("flops", "FLOPs breakdown of one architecture");
  flops->add_option("--config", flops_args.config_path, "experiment config supplying the space");
  flops->add_option("--space", flops_args.space_path, "space config file");
  flops->add_option("--depths", flops_args.depths, "per-stage block counts, comma separated")->required();
  flops->add_option("--widths", flops_args.widths, "per-stage channel counts, comma separated")->required();
  flops->add_flag("--json", flops_args.as_json, "emit JSON");

  std::string search_config, search_out;
  CLI::App* search = app.add_subcommand("search", "run the network-space search");
  search->add_option("--config", search_config, "experiment config")->required();
  search->add_option("--out", search_out, "output directory override");

  std::string elite_ckpt, elite_out;
  int elite_n = 0;
  long elite_seed = -1;
  CLI::App* elite = app.add_subcommand("elite", "extract the elite space from a checkpoint");
  elite->add_option("--checkpoint", elite_ckpt, "search checkpoint")->required();
  elite->add_option("--out", elite_out, "elite space output file")->required();
  elite->add_option("--n", elite_n, "number of candidate draws");
  elite->add_option("--seed", elite_seed, "fresh seed (default: resume checkpoint rng)");

  std::string nas_config, nas_space, nas_out;
  CLI::App* nas = app.add_subcommand("nas", "architecture search inside a space");
  nas->add_option("--config", nas_config, "experiment config")->required();
  nas->add_option("--space", nas_space, "elite space file, or 'full' for the whole universe")->required();
  nas->add_option("--out", nas_out, "output directory")->required();

  AnalyzeArgs an;
  std::string analyze_sub;
  CLI::App* analyze = app.add_subcommand("analyze", "evaluation utilities over record CSVs");
  analyze->add_option("subcommand", analyze_sub, "pareto|edf|band|stats")->required();
  analyze->add_option("--records", an.records_path, "records CSV (d1..dN,w1..wN,flops,error)");
  analyze->add_option("--out", an.out_path, "output CSV")->required();
  analyze->add_option("--target", an.target, "FLOPs target");
  analyze->add_option("--band", an.band, "relative band, e.g. 0.1");
  analyze->add_option("--metric", an.metric, "edf metric: error|flops");
  analyze->add_option("--spaces", an.spaces_path, "JSON list of spaces (stats)");
  analyze->add_option("--space-config", an.space_config_path, "space config file (stats)");

  std::string train_config, train_out, train_space;
  CLI::App* train = app.add_subcommand("supernet-train", "train a standalone toy supernet");
  train->add_option("--config", train_config, "experiment config with a toy_supernet oracle")->required();
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--space", train_space, "elite space file to restrict sampling");

  std::string table_config, table_out;
  long table_count = 256;
  CLI::App* table = app.add_subcommand("gen-table", "write a tabular oracle CSV from the experiment oracle");
  table->add_option("--config", table_config, "experiment config")->required();
  table->add_option("--out", table_out, "table CSV path")->required();
  table->add_option("--count", table_count, "number of distinct configs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (*flops) return cmd_flops(flops_args);
    if (*search) return cmd_search(search_config, search_out);
    if (*elite) return cmd_elite(elite_ckpt, elite_out, elite_n, elite_seed);
    if (*nas) return cmd_nas(nas_config, nas_space, nas_out);
    if (*analyze) return cmd_analyze(analyze_sub, an);
    if (*train) return cmd_supernet_train(train_config, train_out, train_space);
    if (*table) return cmd_gen_table(table_config, table_out, table_count);
  } catch (const nss::validation_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const nss::cap_exhausted_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCapExhausted;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}
