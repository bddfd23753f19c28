#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "nss/errors.hpp"
#include "nss/rng.hpp"
#include "nss/sampling.hpp"
#include "nss/search.hpp"
#include "nss/space.hpp"

namespace nss {

/// Dense row-major matrix; the supernet is small enough that hand-rolled
/// loops beat pulling in a linear-algebra stack, and they keep the masked
/// plans bitwise-reproducible against sliced subnetworks.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), 0.0) {}

  double& operator()(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }

  friend bool operator==(const Mat&, const Mat&) = default;
};

struct SuperNetConfig {
  int num_stages = 3;
  int d_max = 4;
  int w_max = 16;
  int stem_width = 8;
  int input_dim = 8;
  int output_dim = 4;

  static SuperNetConfig from(const ExpandedSpaceConfig& space, int input_dim, int output_dim) {
    return {space.num_stages, space.d_max, space.w_max, space.stem_width, input_dim, output_dim};
  }

  void validate() const {
    if (num_stages < 1 || d_max < 1 || w_max < 1 || stem_width < 1 || input_dim < 1 || output_dim < 1)
      throw validation_error("supernet dimensions must be >= 1");
  }

  friend bool operator==(const SuperNetConfig&, const SuperNetConfig&) = default;
};

/// One residual block: two affine maps with a ReLU between, plus a learnable
/// per-channel residual scale standing in for normalization.
struct BlockParams {
  Mat first;
  std::vector<double> first_bias;
  Mat second;
  std::vector<double> second_bias;
  std::vector<double> scale;

  friend bool operator==(const BlockParams&, const BlockParams&) = default;
};

struct StageParams {
  Mat proj;  // stage-entry projection, prev capacity -> this stage's capacity
  std::vector<double> proj_bias;
  std::vector<BlockParams> blocks;

  int capacity() const { return proj.rows; }

  friend bool operator==(const StageParams&, const StageParams&) = default;
};

/// Weights allocated at maximal sizes; masks simulate smaller depths and
/// widths by restricting which channels and blocks participate.
struct SuperNetParams {
  SuperNetConfig cfg;
  Mat stem;
  std::vector<double> stem_bias;
  std::vector<StageParams> stages;
  Mat head;
  std::vector<double> head_bias;

  static SuperNetParams init(const SuperNetConfig& cfg, Rng& rng) {
    cfg.validate();
    SuperNetParams p;
    p.cfg = cfg;
    p.stem = random_mat(cfg.stem_width, cfg.input_dim, rng);
    p.stem_bias.assign(static_cast<std::size_t>(cfg.stem_width), 0.0);
    int prev = cfg.stem_width;
    for (int i = 0; i < cfg.num_stages; ++i) {
      StageParams st;
      st.proj = random_mat(cfg.w_max, prev, rng);
      st.proj_bias.assign(static_cast<std::size_t>(cfg.w_max), 0.0);
      for (int j = 0; j < cfg.d_max; ++j) {
        BlockParams b;
        b.first = random_mat(cfg.w_max, cfg.w_max, rng);
        b.first_bias.assign(static_cast<std::size_t>(cfg.w_max), 0.0);
        b.second = random_mat(cfg.w_max, cfg.w_max, rng);
        b.second_bias.assign(static_cast<std::size_t>(cfg.w_max), 0.0);
        b.scale.assign(static_cast<std::size_t>(cfg.w_max), 0.5);
        st.blocks.push_back(std::move(b));
      }
      p.stages.push_back(std::move(st));
      prev = cfg.w_max;
    }
    p.head = random_mat(cfg.output_dim, cfg.w_max, rng);
    p.head_bias.assign(static_cast<std::size_t>(cfg.output_dim), 0.0);
    return p;
  }

  static SuperNetParams zeros_like(const SuperNetParams& other) {
    SuperNetParams g = other;
    auto zero = [](Mat& m) { std::fill(m.v.begin(), m.v.end(), 0.0); };
    auto zerov = [](std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); };
    zero(g.stem);
    zerov(g.stem_bias);
    for (auto& st : g.stages) {
      zero(st.proj);
      zerov(st.proj_bias);
      for (auto& b : st.blocks) {
        zero(b.first);
        zerov(b.first_bias);
        zero(b.second);
        zerov(b.second_bias);
        zerov(b.scale);
      }
    }
    zero(g.head);
    zerov(g.head_bias);
    return g;
  }

  void for_each_tensor(const std::function<void(std::vector<double>&)>& fn) {
    fn(stem.v);
    fn(stem_bias);
    for (auto& st : stages) {
      fn(st.proj.v);
      fn(st.proj_bias);
      for (auto& b : st.blocks) {
        fn(b.first.v);
        fn(b.first_bias);
        fn(b.second.v);
        fn(b.second_bias);
        fn(b.scale);
      }
    }
    fn(head.v);
    fn(head_bias);
  }

  friend bool operator==(const SuperNetParams&, const SuperNetParams&) = default;

 private:
  static Mat random_mat(int rows, int cols, Rng& rng) {
    Mat m(rows, cols);
    const double s = 1.0 / std::sqrt(static_cast<double>(cols));
    for (double& x : m.v) x = s * rng.normal();
    return m;
  }
};

/// Which channels and blocks participate in a pass. Base sets come from a
/// NetworkConfig (first w channels, first d blocks); warmup may enable extra
/// channels/blocks beyond them.
struct MaskSpec {
  std::vector<int> active_depths;
  std::vector<int> active_widths;
  std::vector<std::vector<int>> extra_channels;  // per stage, indices >= active width
  std::vector<std::vector<int>> extra_blocks;    // per stage, 0-based indices >= active depth

  static MaskSpec of(const NetworkConfig& a) {
    MaskSpec m;
    m.active_depths = a.depths;
    m.active_widths = a.widths;
    m.extra_channels.assign(a.depths.size(), {});
    m.extra_blocks.assign(a.depths.size(), {});
    return m;
  }

  /// Participating channel indices of a stage, ascending.
  std::vector<int> channels(int stage) const {
    std::vector<int> out;
    const int w = active_widths[static_cast<std::size_t>(stage)];
    out.reserve(static_cast<std::size_t>(w) + extra_channels[static_cast<std::size_t>(stage)].size());
    for (int c = 0; c < w; ++c) out.push_back(c);
    for (int c : extra_channels[static_cast<std::size_t>(stage)]) out.push_back(c);
    return out;
  }

  /// Executed block indices of a stage, ascending; the stage output is taken
  /// after the last one.
  std::vector<int> blocks(int stage) const {
    std::vector<int> out;
    const int d = active_depths[static_cast<std::size_t>(stage)];
    out.reserve(static_cast<std::size_t>(d) + extra_blocks[static_cast<std::size_t>(stage)].size());
    for (int b = 0; b < d; ++b) out.push_back(b);
    for (int b : extra_blocks[static_cast<std::size_t>(stage)]) out.push_back(b);
    return out;
  }

  void validate(const SuperNetParams& p) const {
    const auto n = p.stages.size();
    if (active_depths.size() != n || active_widths.size() != n ||
        extra_channels.size() != n || extra_blocks.size() != n)
      throw validation_error("mask has wrong number of stages");
    for (std::size_t i = 0; i < n; ++i) {
      const int cap = p.stages[i].capacity();
      const int blocks_cap = static_cast<int>(p.stages[i].blocks.size());
      if (active_widths[i] < 1 || active_widths[i] > cap)
        throw validation_error("mask width out of range at stage " + std::to_string(i + 1));
      if (active_depths[i] < 1 || active_depths[i] > blocks_cap)
        throw validation_error("mask depth out of range at stage " + std::to_string(i + 1));
      for (int c : extra_channels[i])
        if (c < active_widths[i] || c >= cap)
          throw validation_error("warmup channel outside the inactive range");
      for (int b : extra_blocks[i])
        if (b < active_depths[i] || b >= blocks_cap)
          throw validation_error("warmup block outside the inactive range");
    }
  }
};

/// Linear anneal of the random-enablement probability from p_start to 0.
struct WarmupSchedule {
  double p_start = 1.0;
  long duration_steps = 0;

  void validate() const {
    if (!(p_start >= 0.0 && p_start <= 1.0)) throw validation_error("p_start must be in [0, 1]");
    if (duration_steps < 0) throw validation_error("duration_steps must be >= 0");
  }
};

inline double warmup_probability(const WarmupSchedule& sched, long step) {
  sched.validate();
  if (step < 0) throw validation_error("warmup step must be >= 0");
  if (sched.duration_steps == 0 || step >= sched.duration_steps) return 0.0;
  return sched.p_start * (1.0 - static_cast<double>(step) / static_cast<double>(sched.duration_steps));
}

/// Randomly enables each inactive channel and block with probability p(step),
/// so rarely-selected units keep receiving gradient early in training.
inline MaskSpec warmup_mask(const MaskSpec& base, const SuperNetParams& params,
                            const WarmupSchedule& sched, long step, Rng& rng) {
  base.validate(params);
  const double p = warmup_probability(sched, step);
  MaskSpec out = base;
  if (p <= 0.0) return out;
  auto contains = [](const std::vector<int>& v, int x) {
    return std::find(v.begin(), v.end(), x) != v.end();
  };
  for (std::size_t i = 0; i < params.stages.size(); ++i) {
    const int cap = params.stages[i].capacity();
    const int blocks_cap = static_cast<int>(params.stages[i].blocks.size());
    for (int c = base.active_widths[i]; c < cap; ++c)
      if (!contains(base.extra_channels[i], c) && rng.uniform() < p)
        out.extra_channels[i].push_back(c);
    for (int b = base.active_depths[i]; b < blocks_cap; ++b)
      if (!contains(base.extra_blocks[i], b) && rng.uniform() < p)
        out.extra_blocks[i].push_back(b);
    std::sort(out.extra_channels[i].begin(), out.extra_channels[i].end());
    std::sort(out.extra_blocks[i].begin(), out.extra_blocks[i].end());
  }
  return out;
}

namespace detail {

// out[b, r] = sum_{c in in_idx} W(r, c) * x[b, c] + bias[r], rows restricted
// to out_idx, everything else left at zero. Ascending index order keeps the
// FP op sequence identical to a physically sliced network.
inline void masked_affine(const Mat& w, const std::vector<double>& bias, const Mat& x,
                          const std::vector<int>& out_idx, const std::vector<int>& in_idx,
                          Mat& out) {
  for (int b = 0; b < x.rows; ++b) {
    for (int r : out_idx) {
      double acc = bias[static_cast<std::size_t>(r)];
      for (int c : in_idx) acc += w(r, c) * x(b, c);
      out(b, r) = acc;
    }
  }
}

}  // namespace detail

struct StageCache {
  std::vector<int> channels;
  std::vector<int> blocks;
  Mat post_proj;
  std::vector<Mat> pre_hidden;   // per executed block, before the ReLU
  std::vector<Mat> hidden;       // per executed block, after the ReLU
  std::vector<Mat> second_out;   // per executed block, before the residual scale
  std::vector<Mat> states;       // states[k] = activation after k executed blocks
};

struct ForwardCache {
  Mat stem_pre;
  Mat stem_out;
  std::vector<StageCache> stages;
  Mat output;
};

/// Forward pass under a mask. Stage i applies its projection then the
/// executed blocks in order, all arithmetic restricted to the stage's
/// participating channel set; inactive coordinates stay exactly zero.
inline Mat masked_forward(const SuperNetParams& p, const MaskSpec& mask, const Mat& x,
                          ForwardCache* cache = nullptr) {
  mask.validate(p);
  if (x.cols != p.cfg.input_dim) throw validation_error("input dimension mismatch");
  const int batch = x.rows;

  ForwardCache local;
  ForwardCache& fc = cache ? *cache : local;
  fc.stages.assign(p.stages.size(), {});

  std::vector<int> all_inputs(static_cast<std::size_t>(p.cfg.input_dim));
  for (int i = 0; i < p.cfg.input_dim; ++i) all_inputs[static_cast<std::size_t>(i)] = i;
  std::vector<int> stem_rows(static_cast<std::size_t>(p.stem.rows));
  for (int i = 0; i < p.stem.rows; ++i) stem_rows[static_cast<std::size_t>(i)] = i;

  fc.stem_pre = Mat(batch, p.stem.rows);
  detail::masked_affine(p.stem, p.stem_bias, x, stem_rows, all_inputs, fc.stem_pre);
  fc.stem_out = fc.stem_pre;
  for (double& v : fc.stem_out.v) v = std::max(0.0, v);

  const Mat* prev = &fc.stem_out;
  std::vector<int> prev_chan = stem_rows;

  for (std::size_t i = 0; i < p.stages.size(); ++i) {
    const StageParams& st = p.stages[i];
    StageCache& sc = fc.stages[i];
    sc.channels = mask.channels(static_cast<int>(i));
    sc.blocks = mask.blocks(static_cast<int>(i));

    sc.post_proj = Mat(batch, st.capacity());
    detail::masked_affine(st.proj, st.proj_bias, *prev, sc.channels, prev_chan, sc.post_proj);

    sc.states.clear();
    sc.states.push_back(sc.post_proj);
    for (int bi : sc.blocks) {
      const BlockParams& blk = st.blocks[static_cast<std::size_t>(bi)];
      const Mat& z = sc.states.back();

      Mat pre(batch, st.capacity());
      detail::masked_affine(blk.first, blk.first_bias, z, sc.channels, sc.channels, pre);
      Mat hid = pre;
      for (double& v : hid.v) v = std::max(0.0, v);
      Mat second(batch, st.capacity());
      detail::masked_affine(blk.second, blk.second_bias, hid, sc.channels, sc.channels, second);

      Mat next = z;
      for (int b = 0; b < batch; ++b)
        for (int c : sc.channels)
          next(b, c) = z(b, c) + blk.scale[static_cast<std::size_t>(c)] * second(b, c);

      sc.pre_hidden.push_back(std::move(pre));
      sc.hidden.push_back(std::move(hid));
      sc.second_out.push_back(std::move(second));
      sc.states.push_back(std::move(next));
    }

    prev = &sc.states.back();
    prev_chan = sc.channels;
  }

  std::vector<int> head_rows(static_cast<std::size_t>(p.head.rows));
  for (int i = 0; i < p.head.rows; ++i) head_rows[static_cast<std::size_t>(i)] = i;
  fc.output = Mat(batch, p.cfg.output_dim);
  detail::masked_affine(p.head, p.head_bias, *prev, head_rows, prev_chan, fc.output);
  return fc.output;
}

enum class LossKind { mean_squared_error, cross_entropy };

struct Batch {
  Mat x;
  Mat targets;              // used by mean_squared_error
  std::vector<int> labels;  // used by cross_entropy
};

namespace detail {

// Loss over the forward outputs plus its gradient d loss / d output.
inline double output_loss(const Mat& out, const Batch& batch, LossKind kind, Mat& dout) {
  const int b_n = out.rows;
  const int o_n = out.cols;
  dout = Mat(b_n, o_n);
  if (kind == LossKind::mean_squared_error) {
    if (batch.targets.rows != b_n || batch.targets.cols != o_n)
      throw validation_error("target shape mismatch");
    double loss = 0.0;
    const double norm = 1.0 / (static_cast<double>(b_n) * o_n);
    for (int b = 0; b < b_n; ++b) {
      for (int o = 0; o < o_n; ++o) {
        const double diff = out(b, o) - batch.targets(b, o);
        loss += diff * diff * norm;
        dout(b, o) = 2.0 * diff * norm;
      }
    }
    return loss;
  }
  if (static_cast<int>(batch.labels.size()) != b_n)
    throw validation_error("label count mismatch");
  double loss = 0.0;
  const double norm = 1.0 / static_cast<double>(b_n);
  for (int b = 0; b < b_n; ++b) {
    double m = out(b, 0);
    for (int o = 1; o < o_n; ++o) m = std::max(m, out(b, o));
    double z = 0.0;
    for (int o = 0; o < o_n; ++o) z += std::exp(out(b, o) - m);
    const int label = batch.labels[static_cast<std::size_t>(b)];
    if (label < 0 || label >= o_n) throw validation_error("label out of range");
    loss += -(out(b, label) - m - std::log(z)) * norm;
    for (int o = 0; o < o_n; ++o) {
      const double p = std::exp(out(b, o) - m) / z;
      dout(b, o) = (p - (o == label ? 1.0 : 0.0)) * norm;
    }
  }
  return loss;
}

}  // namespace detail

/// Exact reverse-mode gradients of the mean loss with respect to every
/// participating weight; masked-out coordinates keep gradient exactly zero.
/// Returns the loss value.
inline double masked_backward(const SuperNetParams& p, const MaskSpec& mask, const Batch& batch,
                              LossKind kind, SuperNetParams& grads) {
  ForwardCache fc;
  const Mat out = masked_forward(p, mask, batch.x, &fc);
  grads = SuperNetParams::zeros_like(p);

  Mat dout;
  const double loss = detail::output_loss(out, batch, kind, dout);
  const int batch_n = batch.x.rows;

  // Head.
  const StageCache& last = fc.stages.back();
  const Mat& last_state = last.states.back();
  Mat dstate(batch_n, p.stages.back().capacity());
  for (int b = 0; b < batch_n; ++b) {
    for (int o = 0; o < p.head.rows; ++o) {
      const double g = dout(b, o);
      grads.head_bias[static_cast<std::size_t>(o)] += g;
      for (int c : last.channels) {
        grads.head(o, c) += g * last_state(b, c);
        dstate(b, c) += p.head(o, c) * g;
      }
    }
  }

  // Stages in reverse.
  for (int i = static_cast<int>(p.stages.size()) - 1; i >= 0; --i) {
    const StageParams& st = p.stages[static_cast<std::size_t>(i)];
    StageParams& gst = grads.stages[static_cast<std::size_t>(i)];
    const StageCache& sc = fc.stages[static_cast<std::size_t>(i)];

    for (int k = static_cast<int>(sc.blocks.size()) - 1; k >= 0; --k) {
      const int bi = sc.blocks[static_cast<std::size_t>(k)];
      const BlockParams& blk = st.blocks[static_cast<std::size_t>(bi)];
      BlockParams& gblk = gst.blocks[static_cast<std::size_t>(bi)];
      const Mat& z_in = sc.states[static_cast<std::size_t>(k)];
      const Mat& pre = sc.pre_hidden[static_cast<std::size_t>(k)];
      const Mat& hid = sc.hidden[static_cast<std::size_t>(k)];
      const Mat& second = sc.second_out[static_cast<std::size_t>(k)];

      Mat dsecond(batch_n, st.capacity());
      for (int b = 0; b < batch_n; ++b) {
        for (int c : sc.channels) {
          const double g = dstate(b, c);
          gblk.scale[static_cast<std::size_t>(c)] += g * second(b, c);
          dsecond(b, c) = g * blk.scale[static_cast<std::size_t>(c)];
        }
      }

      Mat dhid(batch_n, st.capacity());
      for (int b = 0; b < batch_n; ++b) {
        for (int r : sc.channels) {
          const double g = dsecond(b, r);
          gblk.second_bias[static_cast<std::size_t>(r)] += g;
          for (int c : sc.channels) {
            gblk.second(r, c) += g * hid(b, c);
            dhid(b, c) += blk.second(r, c) * g;
          }
        }
      }

      // dstate stays: the residual passes the gradient through; the block
      // branch adds its contribution via the first affine map.
      for (int b = 0; b < batch_n; ++b) {
        for (int r : sc.channels) {
          const double dpre = pre(b, r) > 0.0 ? dhid(b, r) : 0.0;
          if (dpre == 0.0) continue;
          gblk.first_bias[static_cast<std::size_t>(r)] += dpre;
          for (int c : sc.channels) {
            gblk.first(r, c) += dpre * z_in(b, c);
            dstate(b, c) += blk.first(r, c) * dpre;
          }
        }
      }
    }

    // Projection; its input is the previous stage's output (or the stem).
    const bool first_stage = (i == 0);
    const std::vector<int>* prev_chan;
    const Mat* prev_act;
    std::vector<int> stem_rows;
    if (first_stage) {
      stem_rows.resize(static_cast<std::size_t>(p.stem.rows));
      for (int r = 0; r < p.stem.rows; ++r) stem_rows[static_cast<std::size_t>(r)] = r;
      prev_chan = &stem_rows;
      prev_act = &fc.stem_out;
    } else {
      prev_chan = &fc.stages[static_cast<std::size_t>(i - 1)].channels;
      prev_act = &fc.stages[static_cast<std::size_t>(i - 1)].states.back();
    }

    Mat dprev(batch_n, first_stage ? p.stem.rows
                                   : p.stages[static_cast<std::size_t>(i - 1)].capacity());
    for (int b = 0; b < batch_n; ++b) {
      for (int r : sc.channels) {
        const double g = dstate(b, r);
        gst.proj_bias[static_cast<std::size_t>(r)] += g;
        for (int c : *prev_chan) {
          gst.proj(r, c) += g * (*prev_act)(b, c);
          dprev(b, c) += st.proj(r, c) * g;
        }
      }
    }
    dstate = std::move(dprev);
  }

  // Stem.
  for (int b = 0; b < batch_n; ++b) {
    for (int r = 0; r < p.stem.rows; ++r) {
      const double dpre = fc.stem_pre(b, r) > 0.0 ? dstate(b, r) : 0.0;
      if (dpre == 0.0) continue;
      grads.stem_bias[static_cast<std::size_t>(r)] += dpre;
      for (int c = 0; c < p.stem.cols; ++c) grads.stem(r, c) += dpre * batch.x(b, c);
    }
  }

  return loss;
}

/// Builds the standalone subnetwork of one architecture by physically
/// slicing every tensor to the active dimensions. Its dense forward is the
/// independent reference for the masking-equivalence property.
inline SuperNetParams slice_network(const SuperNetParams& p, const NetworkConfig& a) {
  SuperNetParams s;
  s.cfg = p.cfg;
  s.cfg.w_max = 0;  // capacities now vary per stage; dims live in the tensors
  s.cfg.d_max = 0;
  s.stem = p.stem;
  s.stem_bias = p.stem_bias;
  int prev = p.stem.rows;
  for (std::size_t i = 0; i < p.stages.size(); ++i) {
    const int w = a.widths[i];
    const int d = a.depths[i];
    const StageParams& st = p.stages[i];
    StageParams out;
    out.proj = Mat(w, prev);
    for (int r = 0; r < w; ++r)
      for (int c = 0; c < prev; ++c) out.proj(r, c) = st.proj(r, c);
    out.proj_bias.assign(st.proj_bias.begin(), st.proj_bias.begin() + w);
    for (int bi = 0; bi < d; ++bi) {
      const BlockParams& blk = st.blocks[static_cast<std::size_t>(bi)];
      BlockParams o;
      o.first = Mat(w, w);
      o.second = Mat(w, w);
      for (int r = 0; r < w; ++r)
        for (int c = 0; c < w; ++c) {
          o.first(r, c) = blk.first(r, c);
          o.second(r, c) = blk.second(r, c);
        }
      o.first_bias.assign(blk.first_bias.begin(), blk.first_bias.begin() + w);
      o.second_bias.assign(blk.second_bias.begin(), blk.second_bias.begin() + w);
      o.scale.assign(blk.scale.begin(), blk.scale.begin() + w);
      out.blocks.push_back(std::move(o));
    }
    s.stages.push_back(std::move(out));
    prev = w;
  }
  const int w_last = a.widths.back();
  s.head = Mat(p.head.rows, w_last);
  for (int r = 0; r < p.head.rows; ++r)
    for (int c = 0; c < w_last; ++c) s.head(r, c) = p.head(r, c);
  s.head_bias = p.head_bias;
  return s;
}

/// Full mask of a sliced network: every tensor dimension is active.
inline MaskSpec full_mask(const SuperNetParams& p) {
  MaskSpec m;
  for (const StageParams& st : p.stages) {
    m.active_depths.push_back(static_cast<int>(st.blocks.size()));
    m.active_widths.push_back(st.capacity());
  }
  m.extra_channels.assign(p.stages.size(), {});
  m.extra_blocks.assign(p.stages.size(), {});
  return m;
}

/// Synthetic regression/classification task: inputs are standard normal,
/// targets come from a fixed random two-layer teacher of mid-level width so
/// that capacity genuinely moves the validation loss.
struct SyntheticTask {
  std::uint64_t generator_seed = 0;
  int input_dim = 8;
  int output_dim = 4;
  long num_samples = 512;
  double split_fraction = 0.5;

  void validate() const {
    if (input_dim < 1 || output_dim < 1) throw validation_error("task dimensions must be >= 1");
    if (num_samples < 2) throw validation_error("task needs at least 2 samples");
    if (!(split_fraction > 0.0 && split_fraction < 1.0))
      throw validation_error("split_fraction must be in (0, 1)");
  }
};

struct TaskData {
  Batch train;
  Batch val;
};

inline TaskData generate_task(const SyntheticTask& task) {
  task.validate();
  Rng rng(task.generator_seed);
  const int teacher_width = task.input_dim + task.output_dim;

  Mat w1(teacher_width, task.input_dim);
  for (double& v : w1.v) v = rng.normal() / std::sqrt(static_cast<double>(task.input_dim));
  Mat w2(task.output_dim, teacher_width);
  for (double& v : w2.v) v = rng.normal() / std::sqrt(static_cast<double>(teacher_width));

  const long n = task.num_samples;
  Mat x(static_cast<int>(n), task.input_dim);
  for (double& v : x.v) v = rng.normal();
  Mat y(static_cast<int>(n), task.output_dim);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (long s = 0; s < n; ++s) {
    std::vector<double> hid(static_cast<std::size_t>(teacher_width), 0.0);
    for (int h = 0; h < teacher_width; ++h) {
      double acc = 0.0;
      for (int c = 0; c < task.input_dim; ++c) acc += w1(h, c) * x(static_cast<int>(s), c);
      hid[static_cast<std::size_t>(h)] = std::max(0.0, acc);
    }
    int best = 0;
    for (int o = 0; o < task.output_dim; ++o) {
      double acc = 0.0;
      for (int h = 0; h < teacher_width; ++h) acc += w2(o, h) * hid[static_cast<std::size_t>(h)];
      y(static_cast<int>(s), o) = acc;
      if (acc > y(static_cast<int>(s), best)) best = o;
    }
    labels[static_cast<std::size_t>(s)] = best;
  }

  const long n_train = std::max<long>(1, std::min<long>(n - 1, std::lround(task.split_fraction * static_cast<double>(n))));
  TaskData data;
  auto take = [&](long lo, long hi, Batch& out) {
    out.x = Mat(static_cast<int>(hi - lo), task.input_dim);
    out.targets = Mat(static_cast<int>(hi - lo), task.output_dim);
    out.labels.resize(static_cast<std::size_t>(hi - lo));
    for (long s = lo; s < hi; ++s) {
      for (int c = 0; c < task.input_dim; ++c) out.x(static_cast<int>(s - lo), c) = x(static_cast<int>(s), c);
      for (int o = 0; o < task.output_dim; ++o)
        out.targets(static_cast<int>(s - lo), o) = y(static_cast<int>(s), o);
      out.labels[static_cast<std::size_t>(s - lo)] = labels[static_cast<std::size_t>(s)];
    }
  };
  take(0, n_train, data.train);
  take(n_train, n, data.val);
  return data;
}

struct SupernetTrainConfig {
  long steps = 2000;
  int batch_size = 16;
  double learning_rate = 0.02;
  WarmupSchedule warmup;
  LossKind loss = LossKind::mean_squared_error;
  int inner_steps_per_theta = 4;  // weight steps per distribution step in bilevel runs

  void validate() const {
    if (steps < 1 || batch_size < 1) throw validation_error("train steps and batch_size must be >= 1");
    if (!(learning_rate >= 0.0)) throw validation_error("learning_rate must be >= 0");
    if (inner_steps_per_theta < 1) throw validation_error("inner_steps_per_theta must be >= 1");
    warmup.validate();
  }
};

namespace detail {

inline Batch sample_batch(const Batch& pool, int batch_size, Rng& rng) {
  Batch out;
  out.x = Mat(batch_size, pool.x.cols);
  out.targets = Mat(batch_size, pool.targets.cols);
  out.labels.resize(static_cast<std::size_t>(batch_size));
  for (int b = 0; b < batch_size; ++b) {
    const auto idx = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(pool.x.rows)));
    for (int c = 0; c < pool.x.cols; ++c) out.x(b, c) = pool.x(idx, c);
    for (int o = 0; o < pool.targets.cols; ++o) out.targets(b, o) = pool.targets(idx, o);
    out.labels[static_cast<std::size_t>(b)] = pool.labels[static_cast<std::size_t>(idx)];
  }
  return out;
}

inline double supernet_train_step(SuperNetParams& params, const MaskSpec& mask, const Batch& pool,
                                  const SupernetTrainConfig& cfg, Rng& rng, long step) {
  const Batch batch = sample_batch(pool, cfg.batch_size, rng);
  SuperNetParams grads;
  const double loss = masked_backward(params, mask, batch, cfg.loss, grads);
  if (!std::isfinite(loss))
    throw divergence_error("supernet training diverged at step " + std::to_string(step) +
                           " (loss not finite)");
  std::vector<std::vector<double>*> grad_tensors;
  grads.for_each_tensor([&](std::vector<double>& t) { grad_tensors.push_back(&t); });
  std::size_t k = 0;
  params.for_each_tensor([&](std::vector<double>& t) {
    const std::vector<double>& g = *grad_tensors[k++];
    for (std::size_t i = 0; i < t.size(); ++i) t[i] -= cfg.learning_rate * g[i];
  });
  return loss;
}

}  // namespace detail

/// Trains the supernet by single-path sampling: each step draws one
/// architecture from `sampler`, widens its mask by the warmup schedule, and
/// takes one gradient step on a train-split minibatch. Returns the final
/// parameters; `trace` (when given) collects the per-step loss.
inline SuperNetParams train_supernet(const TaskData& data, const SuperNetConfig& net_cfg,
                                     const SupernetTrainConfig& train_cfg,
                                     const std::function<NetworkConfig(Rng&)>& sampler, Rng& rng,
                                     std::vector<double>* trace = nullptr) {
  net_cfg.validate();
  train_cfg.validate();
  SuperNetParams params = SuperNetParams::init(net_cfg, rng);
  for (long step = 0; step < train_cfg.steps; ++step) {
    const NetworkConfig a = sampler(rng);
    const MaskSpec mask = warmup_mask(MaskSpec::of(a), params, train_cfg.warmup, step, rng);
    const double loss = detail::supernet_train_step(params, mask, data.train, train_cfg, rng, step);
    if (trace) trace->push_back(loss);
  }
  return params;
}

/// Task-loss oracle over frozen supernet weights: masked forward on the
/// validation split, mean loss. Never mutates the parameters.
class SupernetOracle final : public Oracle {
 public:
  SupernetOracle(const SuperNetParams& params, const TaskData& data,
                 LossKind loss = LossKind::mean_squared_error)
      : params_(&params), data_(&data), loss_(loss) {}

  double eval(const NetworkConfig& a, Rng&) override {
    const Mat out = masked_forward(*params_, MaskSpec::of(a), data_->val.x);
    Mat dout;
    return detail::output_loss(out, data_->val, loss_, dout);
  }

  bool differentiable() const override { return true; }

 private:
  const SuperNetParams* params_;
  const TaskData* data_;
  LossKind loss_;
};

struct BilevelResult {
  SearchState state;
  EliteSpace elite;
  SuperNetParams params;
};

/// Joint optimization of supernet weights and the space distribution:
/// inner_steps_per_theta single-path weight steps (architectures drawn
/// through the current theta, uniform within the sampled space) alternate
/// with one distribution step against the live supernet oracle. Warmup
/// freezes theta per the search config while weights keep training.
inline BilevelResult bilevel_nss(const SyntheticTask& task, const ExpandedSpaceConfig& space_cfg,
                                 const SearchConfig& search, const SupernetTrainConfig& train_cfg,
                                 Rng& rng) {
  space_cfg.validate();
  search.validate();
  train_cfg.validate();
  const TaskData data = generate_task(task);
  const SuperNetConfig net_cfg = SuperNetConfig::from(space_cfg, task.input_dim, task.output_dim);

  BilevelResult out;
  out.params = SuperNetParams::init(net_cfg, rng);
  out.state = init_search_state(space_cfg);
  SupernetOracle oracle(out.params, data, train_cfg.loss);

  const TemperatureSchedule sched = search.schedule();
  long weight_step = 0;
  const long total = search.total_steps();
  for (long step = 0; step < total; ++step) {
    const double t = temperature_at(sched, step);
    for (int k = 0; k < train_cfg.inner_steps_per_theta; ++k) {
      auto [space, draws] = sample_space(out.state.theta, space_cfg, t, rng);
      (void)draws;
      const NetworkConfig a = sample_architecture_uniform(space_cfg, space, rng);
      const MaskSpec mask =
          warmup_mask(MaskSpec::of(a), out.params, train_cfg.warmup, weight_step, rng);
      detail::supernet_train_step(out.params, mask, data.train, train_cfg, rng, weight_step);
      ++weight_step;
    }
    nss_step(out.state, oracle, space_cfg, search, rng);
  }
  out.elite = extract_elite_space(out.state.theta, space_cfg, search, rng);
  return out;
}

}  // namespace nss
