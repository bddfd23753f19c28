#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "nss/analysis.hpp"
#include "nss/experiment.hpp"
#include "nss/flops.hpp"
#include "nss/io.hpp"
#include "nss/search.hpp"
#include "nss/serde.hpp"

using namespace nss;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string output;
};

CliResult run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + std::string(NSS_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CliResult result;
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof(buf), pipe)) result.output.append(buf, n);
  const int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("nss_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// A desk-sized experiment: small universe, surrogate oracle, short search.
json small_experiment(const fs::path& out_dir) {
  return json{
      {"space", json{{"num_stages", 3}, {"d_max", 4}, {"depth_window", 2}, {"w_max", 16},
                     {"width_window", 4}, {"input_resolution", 8}}},
      {"oracle", json{{"kind", "analytic_surrogate"}, {"noise_seed", 9}}},
      {"search",
       json{{"epochs", 2}, {"steps_per_epoch", 80}, {"learning_rate", 0.1}, {"lambda", 10.0},
            {"flops_target", 250000.0}, {"archs_per_space", 2}, {"n_elite", 3},
            {"mean_flops_samples", 256}}},
      {"out_dir", out_dir.string()},
      {"seed", 21}};
}

}  // namespace

TEST_CASE("flops command prints the golden breakdown") {
  const CliResult human = run_cli("flops --depths 1,1,1 --widths 16,16,16");
  CHECK(human.exit_code == 0);
  CHECK(human.output.find("total  6717600") != std::string::npos);

  const CliResult as_json = run_cli("flops --depths 1,1,1 --widths 16,16,16 --json");
  CHECK(as_json.exit_code == 0);
  const json j = json::parse(as_json.output);
  const FlopsBreakdown b = network_flops(ExpandedSpaceConfig{}, NetworkConfig{{1, 1, 1}, {16, 16, 16}});
  CHECK(j.at("total").get<std::int64_t>() == b.total);
  CHECK(j.at("stem").get<std::int64_t>() == b.stem);
  CHECK(j.at("per_stage").get<std::vector<std::int64_t>>() == b.per_stage);
  CHECK(j.at("head").get<std::int64_t>() == b.head);
}

TEST_CASE("missing flags and bad values exit nonzero") {
  CHECK(run_cli("flops --depths 1,1,1").exit_code != 0);
  CHECK(run_cli("flops --depths 1,1,1 --widths 9999,1,1").exit_code == 1);
  CHECK(run_cli("no-such-command").exit_code != 0);
}

TEST_CASE("search writes elite, checkpoint and history; invalid lambda fails fast") {
  const fs::path dir = fresh_dir("search");
  const fs::path cfg_path = dir / "experiment.json";
  write_text_file(cfg_path, small_experiment(dir / "out").dump(2));

  const CliResult run = run_cli("search --config " + cfg_path.string());
  CAPTURE(run.output);
  REQUIRE(run.exit_code == 0);
  CHECK(fs::exists(dir / "out" / "elite.json"));
  CHECK(fs::exists(dir / "out" / "checkpoint.json"));
  CHECK(fs::exists(dir / "out" / "history.csv"));

  // Thin adapter: the emitted elite equals a direct library run.
  const ExperimentConfig exp = ExperimentConfig::load(cfg_path);
  std::unique_ptr<Oracle> oracle = make_oracle(exp.oracle, exp.space);
  const auto [state, elite] = run_nss(exp.space, exp.search, *oracle);
  (void)state;
  const EliteSpace emitted =
      elite_space_from_json(json::parse(read_text_file(dir / "out" / "elite.json")));
  CHECK(emitted.space == elite.space);
  CHECK(emitted.mean_flops == elite.mean_flops);

  // History has the documented header and one row per step.
  const std::string history = read_text_file(dir / "out" / "history.csv");
  CHECK(history.find("step,temperature,task_loss,flops_loss,combined,entropy") != std::string::npos);

  // Validation failure before any work.
  json bad = small_experiment(dir / "bad_out");
  bad["search"]["lambda"] = -1.0;
  const fs::path bad_path = dir / "bad.json";
  write_text_file(bad_path, bad.dump(2));
  const CliResult fail = run_cli("search --config " + bad_path.string());
  CHECK(fail.exit_code == 1);
  CHECK_FALSE(fs::exists(dir / "bad_out"));
}

TEST_CASE("search expands a target list into subdirectories") {
  const fs::path dir = fresh_dir("sweep");
  json cfg = small_experiment(dir / "out");
  cfg["search"]["flops_target"] = json::array({150000.0, 250000.0});
  const fs::path cfg_path = dir / "experiment.json";
  write_text_file(cfg_path, cfg.dump(2));

  REQUIRE(run_cli("search --config " + cfg_path.string()).exit_code == 0);
  CHECK(fs::exists(dir / "out" / "target_150000" / "elite.json"));
  CHECK(fs::exists(dir / "out" / "target_250000" / "elite.json"));

  // Worker parallelism must not change the artifacts.
  const fs::path dir2 = fresh_dir("sweep_threads");
  json cfg2 = cfg;
  cfg2["out_dir"] = (dir2 / "out").string();
  const fs::path cfg2_path = dir2 / "experiment.json";
  write_text_file(cfg2_path, cfg2.dump(2));
  REQUIRE(run_cli("search --config " + cfg2_path.string(), "NSS_THREADS=1").exit_code == 0);
  for (const char* sub : {"target_150000", "target_250000"}) {
    const std::string a = read_text_file(dir / "out" / sub / "elite.json");
    const std::string b = read_text_file(dir2 / "out" / sub / "elite.json");
    CHECK(a == b);
  }
}

TEST_CASE("elite re-extraction works from a checkpoint") {
  const fs::path dir = fresh_dir("elite");
  const fs::path cfg_path = dir / "experiment.json";
  write_text_file(cfg_path, small_experiment(dir / "out").dump(2));
  REQUIRE(run_cli("search --config " + cfg_path.string()).exit_code == 0);

  const CliResult run = run_cli("elite --checkpoint " + (dir / "out" / "checkpoint.json").string() +
                                " --out " + (dir / "elite2.json").string() + " --n 4");
  CAPTURE(run.output);
  CHECK(run.exit_code == 0);
  const EliteSpace e = elite_space_from_json(json::parse(read_text_file(dir / "elite2.json")));
  CHECK(e.deviation >= 0.0);
}

TEST_CASE("nas emits a metrics row matching a direct library run") {
  const fs::path dir = fresh_dir("nas");
  const fs::path cfg_path = dir / "experiment.json";
  write_text_file(cfg_path, small_experiment(dir / "out").dump(2));

  const CliResult run = run_cli("nas --config " + cfg_path.string() + " --space full --out " +
                                (dir / "nas_out").string());
  CAPTURE(run.output);
  REQUIRE(run.exit_code == 0);
  const std::string metrics = read_text_file(dir / "nas_out" / "metrics.csv");
  CHECK(metrics.find("flops,deviation_percent,samples_to_constraint,error") != std::string::npos);

  const ExperimentConfig exp = ExperimentConfig::load(cfg_path);
  std::unique_ptr<Oracle> oracle = make_oracle(exp.oracle, exp.space);
  Rng rng(exp.search.seed);
  const NasOutcome direct =
      run_nas_in_space(StageWindows::full(exp.space), *oracle, exp.space, exp.search, rng);
  const json best = json::parse(read_text_file(dir / "nas_out" / "best.json"));
  CHECK(network_config_from_json(best.at("config")) == direct.best);
  CHECK(best.at("samples_to_constraint").get<long>() == direct.samples_to_constraint);

  // Inside the searched elite space as well.
  const CliResult elite_run =
      run_cli("search --config " + cfg_path.string());
  REQUIRE(elite_run.exit_code == 0);
  const CliResult nas_elite =
      run_cli("nas --config " + cfg_path.string() + " --space " +
              (dir / "out" / "elite.json").string() + " --out " + (dir / "nas_elite").string());
  CAPTURE(nas_elite.output);
  CHECK(nas_elite.exit_code == 0);
}

TEST_CASE("nas cap exhaustion is exit code 3 with diagnostics") {
  const fs::path dir = fresh_dir("nas_cap");
  json cfg = small_experiment(dir / "out");
  cfg["search"]["flops_target"] = 1.0e15;  // unreachable
  cfg["search"]["nas_sample_cap"] = 20;
  const fs::path cfg_path = dir / "experiment.json";
  write_text_file(cfg_path, cfg.dump(2));

  const CliResult run = run_cli("nas --config " + cfg_path.string() + " --space full --out " +
                                (dir / "nas_out").string());
  CHECK(run.exit_code == 3);
  CHECK(run.output.find("cap exhausted") != std::string::npos);
  CHECK(run.output.find("best deviation seen") != std::string::npos);
}

TEST_CASE("gen-table output feeds the tabular oracle") {
  const fs::path dir = fresh_dir("table");
  const fs::path cfg_path = dir / "experiment.json";
  write_text_file(cfg_path, small_experiment(dir / "out").dump(2));
  const fs::path table = dir / "table.csv";

  REQUIRE(run_cli("gen-table --config " + cfg_path.string() + " --out " + table.string() +
                  " --count 64").exit_code == 0);
  TabularOracle oracle(table, 3);
  CHECK(oracle.size() == 64);

  // Rows agree with the surrogate the table was generated from.
  const ExperimentConfig exp = ExperimentConfig::load(cfg_path);
  std::unique_ptr<Oracle> surrogate = make_oracle(exp.oracle, exp.space);
  const std::string text = read_text_file(table);
  bool checked_one = false;
  for (const std::string& line : [&] {
         std::vector<std::string> lines;
         std::stringstream ss(text);
         std::string l;
         while (std::getline(ss, l)) lines.push_back(l);
         return lines;
       }()) {
    if (line.empty() || line[0] == '#' || line[0] == 'd') continue;
    const auto fields = split_csv_row(line);
    NetworkConfig a;
    for (int i = 0; i < 3; ++i) a.depths.push_back(static_cast<int>(parse_int(fields[static_cast<std::size_t>(i)], "t")));
    for (int i = 3; i < 6; ++i) a.widths.push_back(static_cast<int>(parse_int(fields[static_cast<std::size_t>(i)], "t")));
    Rng rng(0);
    CHECK(oracle.eval(a, rng) == Catch::Approx(surrogate->eval(a, rng)).epsilon(1e-14));
    checked_one = true;
    break;
  }
  CHECK(checked_one);
}

TEST_CASE("analyze subcommands mirror the library") {
  const fs::path dir = fresh_dir("analyze");

  // Build a records CSV via the library.
  ExpandedSpaceConfig cfg;
  cfg.d_max = 4;
  cfg.depth_window = 2;
  cfg.w_max = 16;
  cfg.width_window = 4;
  cfg.input_resolution = 8;
  SurrogateOracle oracle(cfg, SurrogateParams::defaults(cfg));
  Rng rng(33);
  const auto records = random_baseline(StageWindows::full(cfg), oracle, 300, cfg, rng);
  const fs::path records_path = dir / "records.csv";
  write_text_file(records_path, records_to_csv(records, cfg.num_stages, 1, 33));

  // pareto
  const fs::path front_path = dir / "front.csv";
  REQUIRE(run_cli("analyze pareto --records " + records_path.string() + " --out " +
                  front_path.string()).exit_code == 0);
  const auto front = records_from_csv(read_text_file(front_path));
  const auto expected = pareto_front(records);
  CHECK(front == expected);

  // band
  const double target = static_cast<double>(records[0].flops);
  const fs::path band_path = dir / "band.csv";
  REQUIRE(run_cli("analyze band --records " + records_path.string() + " --target " +
                  format_double(target) + " --band 0.5 --out " + band_path.string()).exit_code == 0);
  CHECK(records_from_csv(read_text_file(band_path)) == flops_band_filter(records, target, 0.5));

  // edf over errors
  const fs::path edf_path = dir / "edf.csv";
  REQUIRE(run_cli("analyze edf --records " + records_path.string() + " --out " +
                  edf_path.string()).exit_code == 0);
  const std::string edf_text = read_text_file(edf_path);
  CHECK(edf_text.find("value,fraction") != std::string::npos);

  // banded edf defaults to the flops metric
  const fs::path fedf_path = dir / "flops_edf.csv";
  REQUIRE(run_cli("analyze edf --records " + records_path.string() + " --target " +
                  format_double(target) + " --band 0.5 --out " + fedf_path.string()).exit_code == 0);
  std::vector<double> in_band_flops;
  for (const EvalRecord& r : flops_band_filter(records, target, 0.5))
    in_band_flops.push_back(static_cast<double>(r.flops));
  const EdfCurve expected_curve = edf(std::move(in_band_flops));
  const std::string fedf_text = read_text_file(fedf_path);
  CHECK(fedf_text.find(format_double(expected_curve.points.front().first)) != std::string::npos);

  // stats over a few spaces
  json spaces = json::array();
  spaces.push_back(to_json(NetworkSpace{{0, 1, 1}, {0, 2, 1}}));
  spaces.push_back(to_json(NetworkSpace{{1, 1, 1}, {3, 3, 3}}));
  const fs::path spaces_path = dir / "spaces.json";
  write_text_file(spaces_path, spaces.dump());
  const fs::path space_cfg_path = dir / "space.json";
  write_text_file(space_cfg_path, to_json(cfg).dump());
  const fs::path stats_path = dir / "stats.csv";
  REQUIRE(run_cli("analyze stats --spaces " + spaces_path.string() + " --space-config " +
                  space_cfg_path.string() + " --out " + stats_path.string()).exit_code == 0);
  const std::string stats_text = read_text_file(stats_path);
  CHECK(stats_text.find("depth_pattern") != std::string::npos);
  CHECK(stats_text.find("width_pattern") != std::string::npos);

  // empty records file: explicit error
  const fs::path empty_path = dir / "empty.csv";
  write_text_file(empty_path, "");
  CHECK(run_cli("analyze pareto --records " + empty_path.string() + " --out " +
                (dir / "x.csv").string()).exit_code == 1);
}

TEST_CASE("supernet-train then frozen-oracle search") {
  const fs::path dir = fresh_dir("supernet");
  json cfg{
      {"space", json{{"num_stages", 2}, {"d_max", 4}, {"depth_window", 2}, {"w_max", 8},
                     {"width_window", 2}, {"input_resolution", 4}, {"input_channels", 6},
                     {"stem_width", 4}, {"num_classes", 3}}},
      {"oracle", json{{"kind", "toy_supernet"},
                      {"task", json{{"generator_seed", 7}, {"input_dim", 6}, {"output_dim", 3},
                                    {"num_samples", 128}}},
                      {"train", json{{"steps", 400}, {"batch_size", 8}, {"learning_rate", 0.02},
                                     {"warmup", json{{"p_start", 1.0}, {"duration_steps", 100}}}}}}},
      {"search", json{{"epochs", 1}, {"steps_per_epoch", 30}, {"learning_rate", 0.1},
                      {"lambda", 10.0}, {"flops_target", 12000.0}, {"archs_per_space", 2}}},
      {"out_dir", (dir / "out").string()},
      {"seed", 5}};
  const fs::path cfg_path = dir / "experiment.json";
  write_text_file(cfg_path, cfg.dump(2));

  const CliResult train = run_cli("supernet-train --config " + cfg_path.string() + " --out " +
                                  (dir / "trained").string());
  CAPTURE(train.output);
  REQUIRE(train.exit_code == 0);
  CHECK(fs::exists(dir / "trained" / "supernet.json"));
  CHECK(fs::exists(dir / "trained" / "trace.csv"));

  // Search against the frozen checkpointed supernet.
  cfg["oracle"]["checkpoint"] = (dir / "trained" / "supernet.json").string();
  write_text_file(cfg_path, cfg.dump(2));
  const CliResult search = run_cli("search --config " + cfg_path.string());
  CAPTURE(search.output);
  CHECK(search.exit_code == 0);
  CHECK(fs::exists(dir / "out" / "elite.json"));

  // Without a checkpoint the search runs the joint bilevel loop and also
  // dumps the trained weights.
  cfg["oracle"].erase("checkpoint");
  cfg["out_dir"] = (dir / "bilevel_out").string();
  write_text_file(cfg_path, cfg.dump(2));
  const CliResult bilevel = run_cli("search --config " + cfg_path.string());
  CAPTURE(bilevel.output);
  CHECK(bilevel.exit_code == 0);
  CHECK(fs::exists(dir / "bilevel_out" / "elite.json"));
  CHECK(fs::exists(dir / "bilevel_out" / "supernet.json"));
}
