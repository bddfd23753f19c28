#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "nss/io.hpp"
#include "nss/sampling.hpp"
#include "nss/serde.hpp"
#include "nss/supernet.hpp"

using namespace nss;

namespace {

SuperNetConfig toy_net() { return SuperNetConfig{2, 3, 6, 4, 5, 3}; }

Mat random_input(int batch, int dim, Rng& rng) {
  Mat x(batch, dim);
  for (double& v : x.v) v = rng.normal();
  return x;
}

NetworkConfig random_arch(const SuperNetConfig& cfg, Rng& rng) {
  NetworkConfig a;
  for (int i = 0; i < cfg.num_stages; ++i) {
    a.depths.push_back(static_cast<int>(rng.uniform_int(1, cfg.d_max)));
    a.widths.push_back(static_cast<int>(rng.uniform_int(1, cfg.w_max)));
  }
  return a;
}

std::uint64_t params_hash(const SuperNetParams& p) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  SuperNetParams copy = p;
  copy.for_each_tensor([&](std::vector<double>& t) {
    for (double v : t) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof(bits));
      h ^= bits;
      h *= 0x100000001b3ull;
    }
  });
  return h;
}

}  // namespace

TEST_CASE("full mask equals the unmasked dense forward bitwise") {
  Rng rng(1);
  const SuperNetConfig cfg = toy_net();
  const SuperNetParams params = SuperNetParams::init(cfg, rng);
  const Mat x = random_input(4, cfg.input_dim, rng);

  NetworkConfig full_arch;
  full_arch.depths.assign(static_cast<std::size_t>(cfg.num_stages), cfg.d_max);
  full_arch.widths.assign(static_cast<std::size_t>(cfg.num_stages), cfg.w_max);

  const Mat masked = masked_forward(params, MaskSpec::of(full_arch), x);
  const Mat dense = masked_forward(params, full_mask(params), x);
  CHECK(masked.v == dense.v);
}

TEST_CASE("masked forward equals the physically sliced subnetwork bitwise") {
  Rng rng(2);
  const SuperNetConfig cfg = toy_net();
  const SuperNetParams params = SuperNetParams::init(cfg, rng);
  const Mat x = random_input(3, cfg.input_dim, rng);

  for (int trial = 0; trial < 50; ++trial) {
    const NetworkConfig a = random_arch(cfg, rng);
    CAPTURE(a.depths, a.widths);
    const Mat masked = masked_forward(params, MaskSpec::of(a), x);
    const SuperNetParams sliced = slice_network(params, a);
    const Mat standalone = masked_forward(sliced, full_mask(sliced), x);
    CHECK(masked.v == standalone.v);
  }
}

TEST_CASE("zero input flows the bias pathway only") {
  Rng rng(3);
  SuperNetConfig cfg = toy_net();
  cfg.num_stages = 1;
  cfg.d_max = 1;
  SuperNetParams params = SuperNetParams::init(cfg, rng);
  // Nonzero biases so the pathway is visible.
  params.for_each_tensor([&](std::vector<double>& t) {
    for (double& v : t) if (v == 0.0) v = 0.1 * rng.normal();
  });
  const Mat x(1, cfg.input_dim);  // zeros

  const NetworkConfig a{{1}, {cfg.w_max}};
  const Mat out = masked_forward(params, MaskSpec::of(a), x);

  // Closed form for one stage of one block on zero input: biases compose.
  std::vector<double> stem(static_cast<std::size_t>(cfg.stem_width));
  for (int c = 0; c < cfg.stem_width; ++c)
    stem[static_cast<std::size_t>(c)] = std::max(0.0, params.stem_bias[static_cast<std::size_t>(c)]);
  const StageParams& st = params.stages[0];
  std::vector<double> z(static_cast<std::size_t>(cfg.w_max));
  for (int c = 0; c < cfg.w_max; ++c) {
    double acc = st.proj_bias[static_cast<std::size_t>(c)];
    for (int k = 0; k < cfg.stem_width; ++k) acc += st.proj(c, k) * stem[static_cast<std::size_t>(k)];
    z[static_cast<std::size_t>(c)] = acc;
  }
  const BlockParams& blk = st.blocks[0];
  std::vector<double> hid(static_cast<std::size_t>(cfg.w_max));
  for (int c = 0; c < cfg.w_max; ++c) {
    double acc = blk.first_bias[static_cast<std::size_t>(c)];
    for (int k = 0; k < cfg.w_max; ++k) acc += blk.first(c, k) * z[static_cast<std::size_t>(k)];
    hid[static_cast<std::size_t>(c)] = std::max(0.0, acc);
  }
  std::vector<double> znext(static_cast<std::size_t>(cfg.w_max));
  for (int c = 0; c < cfg.w_max; ++c) {
    double acc = blk.second_bias[static_cast<std::size_t>(c)];
    for (int k = 0; k < cfg.w_max; ++k) acc += blk.second(c, k) * hid[static_cast<std::size_t>(k)];
    znext[static_cast<std::size_t>(c)] = z[static_cast<std::size_t>(c)] + blk.scale[static_cast<std::size_t>(c)] * acc;
  }
  for (int o = 0; o < cfg.output_dim; ++o) {
    double acc = params.head_bias[static_cast<std::size_t>(o)];
    for (int k = 0; k < cfg.w_max; ++k) acc += params.head(o, k) * znext[static_cast<std::size_t>(k)];
    CHECK(out(0, o) == Catch::Approx(acc).margin(1e-12));
  }
}

TEST_CASE("hand backprop matches central finite differences") {
  Rng rng(4);
  SuperNetConfig cfg = toy_net();
  cfg.d_max = 2;  // 2-block stages keep the FD sweep quick
  SuperNetParams params = SuperNetParams::init(cfg, rng);

  Batch batch;
  batch.x = random_input(4, cfg.input_dim, rng);
  batch.targets = random_input(4, cfg.output_dim, rng);
  batch.labels = {0, 2, 1, 0};

  for (LossKind kind : {LossKind::mean_squared_error, LossKind::cross_entropy}) {
    const NetworkConfig a{{2, 1}, {4, 5}};
    MaskSpec mask = MaskSpec::of(a);
    mask.extra_channels[0] = {5};  // one warmup-enabled unit in each direction
    mask.extra_blocks[1] = {1};

    SuperNetParams grads;
    masked_backward(params, mask, batch, kind, grads);

    const double h = 1e-5;
    double max_rel = 0.0;
    std::vector<std::vector<double>*> grad_tensors;
    grads.for_each_tensor([&](std::vector<double>& t) { grad_tensors.push_back(&t); });

    SuperNetParams probe = params;
    std::vector<std::vector<double>*> probe_tensors;
    probe.for_each_tensor([&](std::vector<double>& t) { probe_tensors.push_back(&t); });
    REQUIRE(probe_tensors.size() == grad_tensors.size());

    for (std::size_t ti = 0; ti < probe_tensors.size(); ++ti) {
      for (std::size_t i = 0; i < probe_tensors[ti]->size(); ++i) {
        const double analytic = (*grad_tensors[ti])[i];
        const double saved = (*probe_tensors[ti])[i];
        SuperNetParams scratch;
        (*probe_tensors[ti])[i] = saved + h;
        const double up = masked_backward(probe, mask, batch, kind, scratch);
        (*probe_tensors[ti])[i] = saved - h;
        const double down = masked_backward(probe, mask, batch, kind, scratch);
        (*probe_tensors[ti])[i] = saved;
        const double fd = (up - down) / (2.0 * h);
        if (fd == 0.0 && analytic == 0.0) continue;
        const double rel = std::abs(analytic - fd) / std::max({1.0, std::abs(analytic), std::abs(fd)});
        max_rel = std::max(max_rel, rel);
      }
    }
    CAPTURE(static_cast<int>(kind));
    CHECK(max_rel <= 1e-5);
  }
}

TEST_CASE("masked-out coordinates receive exactly zero gradient") {
  Rng rng(5);
  const SuperNetConfig cfg = toy_net();
  const SuperNetParams params = SuperNetParams::init(cfg, rng);
  Batch batch;
  batch.x = random_input(3, cfg.input_dim, rng);
  batch.targets = random_input(3, cfg.output_dim, rng);

  const NetworkConfig a{{1, 2}, {3, 4}};
  const MaskSpec mask = MaskSpec::of(a);
  SuperNetParams grads;
  masked_backward(params, mask, batch, LossKind::mean_squared_error, grads);

  for (int stage = 0; stage < cfg.num_stages; ++stage) {
    const StageParams& gst = grads.stages[static_cast<std::size_t>(stage)];
    const int w = a.widths[static_cast<std::size_t>(stage)];
    const int d = a.depths[static_cast<std::size_t>(stage)];
    for (int r = w; r < cfg.w_max; ++r)
      for (int c = 0; c < gst.proj.cols; ++c) CHECK(gst.proj(r, c) == 0.0);
    for (int bi = d; bi < cfg.d_max; ++bi) {
      const BlockParams& gblk = gst.blocks[static_cast<std::size_t>(bi)];
      for (double v : gblk.first.v) CHECK(v == 0.0);
      for (double v : gblk.second.v) CHECK(v == 0.0);
      for (double v : gblk.scale) CHECK(v == 0.0);
    }
    // Inside executed blocks, rows beyond the active width stay zero.
    const BlockParams& gblk = gst.blocks[0];
    for (int r = w; r < cfg.w_max; ++r)
      for (int c = 0; c < cfg.w_max; ++c) {
        CHECK(gblk.first(r, c) == 0.0);
        CHECK(gblk.second(r, c) == 0.0);
      }
  }
}

TEST_CASE("a gradient step changes no weight outside the participating set") {
  Rng rng(15);
  const SuperNetConfig cfg = toy_net();
  SuperNetParams params = SuperNetParams::init(cfg, rng);
  const SuperNetParams before = params;

  SyntheticTask task;
  task.generator_seed = 50;
  task.input_dim = cfg.input_dim;
  task.output_dim = cfg.output_dim;
  task.num_samples = 64;
  const TaskData data = generate_task(task);

  const NetworkConfig a{{1, 2}, {3, 4}};
  MaskSpec mask = MaskSpec::of(a);
  mask.extra_channels[0] = {4};
  SupernetTrainConfig train;
  train.learning_rate = 0.05;
  train.batch_size = 8;
  detail::supernet_train_step(params, mask, data.train, train, rng, 0);

  // Stage 1: channels {0,1,2,4} participate; channel 3 and 5 stay put.
  const StageParams& st0 = params.stages[0];
  const StageParams& b0 = before.stages[0];
  for (int c = 0; c < st0.proj.cols; ++c) {
    CHECK(st0.proj(3, c) == b0.proj(3, c));
    CHECK(st0.proj(5, c) == b0.proj(5, c));
  }
  // Stage 1 blocks beyond depth 1 stay put entirely.
  for (int bi = 1; bi < cfg.d_max; ++bi)
    CHECK(st0.blocks[static_cast<std::size_t>(bi)] == b0.blocks[static_cast<std::size_t>(bi)]);
  // Stage 2 rows beyond width 4 stay put.
  const StageParams& st1 = params.stages[1];
  const StageParams& b1 = before.stages[1];
  for (int r = 4; r < cfg.w_max; ++r)
    for (int c = 0; c < st1.proj.cols; ++c) CHECK(st1.proj(r, c) == b1.proj(r, c));
}

TEST_CASE("duplicating the batch leaves the mean-loss gradient unchanged") {
  Rng rng(6);
  const SuperNetConfig cfg = toy_net();
  const SuperNetParams params = SuperNetParams::init(cfg, rng);
  Batch batch;
  batch.x = random_input(3, cfg.input_dim, rng);
  batch.targets = random_input(3, cfg.output_dim, rng);

  Batch doubled;
  doubled.x = Mat(6, cfg.input_dim);
  doubled.targets = Mat(6, cfg.output_dim);
  for (int b = 0; b < 6; ++b) {
    for (int c = 0; c < cfg.input_dim; ++c) doubled.x(b, c) = batch.x(b % 3, c);
    for (int o = 0; o < cfg.output_dim; ++o) doubled.targets(b, o) = batch.targets(b % 3, o);
  }

  const NetworkConfig a{{2, 2}, {4, 6}};
  SuperNetParams g1, g2;
  const double l1 = masked_backward(params, MaskSpec::of(a), batch, LossKind::mean_squared_error, g1);
  const double l2 = masked_backward(params, MaskSpec::of(a), doubled, LossKind::mean_squared_error, g2);
  CHECK(l1 == Catch::Approx(l2));
  std::vector<std::vector<double>*> t1, t2;
  g1.for_each_tensor([&](std::vector<double>& t) { t1.push_back(&t); });
  g2.for_each_tensor([&](std::vector<double>& t) { t2.push_back(&t); });
  for (std::size_t ti = 0; ti < t1.size(); ++ti)
    for (std::size_t i = 0; i < t1[ti]->size(); ++i)
      CHECK((*t1[ti])[i] == Catch::Approx((*t2[ti])[i]).margin(1e-12));
}

TEST_CASE("warmup schedule endpoints and halfway point") {
  WarmupSchedule sched{1.0, 1000};
  CHECK(warmup_probability(sched, 0) == 1.0);
  CHECK(warmup_probability(sched, 1000) == 0.0);
  CHECK(warmup_probability(sched, 2000) == 0.0);
  CHECK(warmup_probability(sched, 500) == Catch::Approx(0.5));

  WarmupSchedule scaled{0.6, 100};
  CHECK(warmup_probability(scaled, 0) == 0.6);
  CHECK(warmup_probability(scaled, 100) == 0.0);
}

TEST_CASE("warmup mask: p=1 enables everything, p=0 changes nothing") {
  Rng rng(7);
  const SuperNetConfig cfg = toy_net();
  const SuperNetParams params = SuperNetParams::init(cfg, rng);
  const NetworkConfig a{{1, 1}, {2, 2}};
  const MaskSpec base = MaskSpec::of(a);

  const MaskSpec all = warmup_mask(base, params, WarmupSchedule{1.0, 10}, 0, rng);
  for (int i = 0; i < cfg.num_stages; ++i) {
    CHECK(static_cast<int>(all.channels(i).size()) == cfg.w_max);
    CHECK(static_cast<int>(all.blocks(i).size()) == cfg.d_max);
  }

  const MaskSpec none = warmup_mask(base, params, WarmupSchedule{1.0, 10}, 10, rng);
  for (int i = 0; i < cfg.num_stages; ++i) {
    CHECK(none.extra_channels[static_cast<std::size_t>(i)].empty());
    CHECK(none.extra_blocks[static_cast<std::size_t>(i)].empty());
  }
}

TEST_CASE("warmup mask halfway: enablement frequency near 0.5") {
  Rng rng(8);
  const SuperNetConfig cfg = toy_net();
  const SuperNetParams params = SuperNetParams::init(cfg, rng);
  const NetworkConfig a{{1, 1}, {2, 2}};
  const MaskSpec base = MaskSpec::of(a);
  const WarmupSchedule sched{1.0, 100};

  long enabled = 0, possible = 0;
  const long draws = 10000;
  for (long i = 0; i < draws; ++i) {
    const MaskSpec m = warmup_mask(base, params, sched, 50, rng);
    for (int s = 0; s < cfg.num_stages; ++s) {
      enabled += static_cast<long>(m.extra_channels[static_cast<std::size_t>(s)].size() +
                                   m.extra_blocks[static_cast<std::size_t>(s)].size());
      possible += (cfg.w_max - 2) + (cfg.d_max - 1);
    }
  }
  const double freq = static_cast<double>(enabled) / static_cast<double>(possible);
  CHECK(freq == Catch::Approx(0.5).margin(0.02));
}

TEST_CASE("training reduces the loss on a teacher task") {
  SyntheticTask task;
  task.generator_seed = 41;
  task.input_dim = 5;
  task.output_dim = 3;
  task.num_samples = 256;
  const TaskData data = generate_task(task);

  const SuperNetConfig cfg{2, 3, 6, 4, task.input_dim, task.output_dim};
  SupernetTrainConfig train;
  train.steps = 2000;
  train.batch_size = 16;
  train.learning_rate = 0.02;
  train.warmup = {1.0, 500};

  Rng rng(9);
  auto sampler = [cfg](Rng& r) {
    NetworkConfig a;
    for (int i = 0; i < cfg.num_stages; ++i) {
      a.depths.push_back(static_cast<int>(r.uniform_int(1, cfg.d_max)));
      a.widths.push_back(static_cast<int>(r.uniform_int(1, cfg.w_max)));
    }
    return a;
  };
  std::vector<double> trace;
  train_supernet(data, cfg, train, sampler, rng, &trace);
  REQUIRE(trace.size() == 2000);
  double early = 0.0, late = 0.0;
  for (int i = 0; i < 100; ++i) early += trace[static_cast<std::size_t>(i)];
  for (int i = 1900; i < 2000; ++i) late += trace[static_cast<std::size_t>(i)];
  CHECK(late < 0.5 * early);
}

TEST_CASE("zero learning rate leaves parameters unchanged; fixed seed reproduces them") {
  SyntheticTask task;
  task.generator_seed = 42;
  task.input_dim = 4;
  task.output_dim = 2;
  task.num_samples = 64;
  const TaskData data = generate_task(task);
  const SuperNetConfig cfg{1, 2, 4, 3, 4, 2};
  auto sampler = [](Rng&) { return NetworkConfig{{2}, {4}}; };

  SupernetTrainConfig frozen;
  frozen.steps = 50;
  frozen.learning_rate = 0.0;
  Rng r1(10);
  const SuperNetParams p1 = train_supernet(data, cfg, frozen, sampler, r1);
  Rng r_init(10);
  const SuperNetParams init = SuperNetParams::init(cfg, r_init);
  CHECK(p1.stem.v == init.stem.v);
  CHECK(p1.head.v == init.head.v);

  SupernetTrainConfig moving = frozen;
  moving.learning_rate = 0.05;
  Rng r2(11), r3(11);
  const SuperNetParams a = train_supernet(data, cfg, moving, sampler, r2);
  const SuperNetParams b = train_supernet(data, cfg, moving, sampler, r3);
  CHECK(a == b);
}

TEST_CASE("supernet oracle is read-only and consistent") {
  SyntheticTask task;
  task.generator_seed = 43;
  task.input_dim = 5;
  task.output_dim = 3;
  task.num_samples = 128;
  const TaskData data = generate_task(task);
  Rng rng(12);
  const SuperNetConfig cfg = toy_net();
  const SuperNetParams params = SuperNetParams::init(cfg, rng);
  SupernetOracle oracle(params, data);

  const std::uint64_t before = params_hash(params);
  const NetworkConfig a{{2, 1}, {4, 5}};
  Rng r1(1), r2(2);
  const double l1 = oracle.eval(a, r1);
  const double l2 = oracle.eval(a, r2);
  CHECK(l1 == l2);
  CHECK(params_hash(params) == before);

  // Full-size config equals the dense network's validation loss.
  NetworkConfig full;
  full.depths.assign(2, cfg.d_max);
  full.widths.assign(2, cfg.w_max);
  const Mat out = masked_forward(params, full_mask(params), data.val.x);
  Mat dout;
  const double dense_loss = detail::output_loss(out, data.val, LossKind::mean_squared_error, dout);
  CHECK(oracle.eval(full, r1) == dense_loss);
}

TEST_CASE("divergence is reported with diagnostics") {
  SyntheticTask task;
  task.generator_seed = 44;
  task.input_dim = 4;
  task.output_dim = 2;
  task.num_samples = 64;
  const TaskData data = generate_task(task);
  const SuperNetConfig cfg{2, 4, 8, 4, 4, 2};
  SupernetTrainConfig explosive;
  explosive.steps = 4000;
  explosive.learning_rate = 150.0;
  auto sampler = [](Rng&) { return NetworkConfig{{4, 4}, {8, 8}}; };
  Rng rng(13);
  CHECK_THROWS_AS(train_supernet(data, cfg, explosive, sampler, rng), divergence_error);
}

TEST_CASE("supernet params serialize and restore exactly") {
  Rng rng(14);
  const SuperNetConfig cfg = toy_net();
  const SuperNetParams params = SuperNetParams::init(cfg, rng);
  const json j = supernet_to_json(params, 14, 0);
  const SuperNetParams back = supernet_from_json(json::parse(j.dump()));
  CHECK(back == params);
}

TEST_CASE("bilevel search: warmup trains weights only, end-to-end finds a compliant space") {
  SyntheticTask task;
  task.generator_seed = 45;
  task.input_dim = 6;
  task.output_dim = 3;
  task.num_samples = 192;

  ExpandedSpaceConfig space;
  space.num_stages = 2;
  space.d_max = 4;
  space.depth_window = 2;
  space.w_max = 8;
  space.width_window = 2;
  space.input_resolution = 4;
  space.input_channels = task.input_dim;
  space.stem_width = 4;
  space.num_classes = task.output_dim;

  SearchConfig search;
  search.epochs = 8;
  search.steps_per_epoch = 60;
  search.warmup_fraction = 0.25;
  search.learning_rate = 0.12;
  search.archs_per_space = 2;
  search.weights.lambda = 20.0;
  // The mean-FLOPs penalty is exact at this scale (spaces enumerate), which
  // keeps the planted optimum unambiguous.
  search.flops_penalty_level = FlopsPenaltyLevel::space_mean;
  search.seed = 15;
  // A target with several spaces inside the +-10% band.
  search.flops_target.target = 12000;

  SupernetTrainConfig train;
  train.batch_size = 8;
  train.learning_rate = 0.02;
  train.inner_steps_per_theta = 4;
  train.warmup = {1.0, search.warmup_steps() * train.inner_steps_per_theta};

  // Warmup phase: theta stays uniform while weights move.
  {
    Rng rng(search.seed);
    const TaskData data = generate_task(task);
    const SuperNetConfig net_cfg = SuperNetConfig::from(space, task.input_dim, task.output_dim);
    SuperNetParams params = SuperNetParams::init(net_cfg, rng);
    const SuperNetParams before = params;
    SearchState state = init_search_state(space);
    SupernetOracle oracle(params, data);
    const TemperatureSchedule sched = search.schedule();
    long weight_step = 0;
    for (long step = 0; step < search.warmup_steps(); ++step) {
      const double t = temperature_at(sched, step);
      for (int k = 0; k < train.inner_steps_per_theta; ++k) {
        auto [s, d] = sample_space(state.theta, space, t, rng);
        (void)d;
        const NetworkConfig arch = sample_architecture_uniform(space, s, rng);
        const MaskSpec mask = warmup_mask(MaskSpec::of(arch), params, train.warmup, weight_step, rng);
        detail::supernet_train_step(params, mask, data.train, train, rng, weight_step);
        ++weight_step;
      }
      nss_step(state, oracle, space, search, rng);
      CHECK(state.theta == SpaceDistribution::uniform(space));
    }
    CHECK(params.stem.v != before.stem.v);
  }

  // Full run: deterministic, and the elite space lands inside the band.
  Rng rng_a(search.seed), rng_b(search.seed);
  const BilevelResult a = bilevel_nss(task, space, search, train, rng_a);
  const BilevelResult b = bilevel_nss(task, space, search, train, rng_b);
  CHECK(a.elite.space == b.elite.space);
  CHECK(a.elite.deviation <= 0.10);
}
