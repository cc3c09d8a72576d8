#pragma once

// Fusion network: a spiking encoder on event frames and an analog encoder on
// intensity frames, fused by channel concatenation, followed by residual blocks and
// a four-level decoder that emits flow at 1/8, 1/4, 1/2 and full resolution.
//
// Channel plan for base width F:
//   encoder widths F, 2F, 4F, 8F (k3 s2 p1). In the fused variants each stage is two
//   narrow branches of half width whose concatenation restores the full width.
//   residual blocks at 8F (two k3 s1 convs, identity skip).
//   decoder i: U_i = lrelu(deconv_i(X_i)), X_{i+1} = concat(U_i, skip_i, 2*up(flow_{i-1}))
//   with skip_i the fused encoder output at that scale (none at full resolution);
//   flow_i = head_i(X_{i+1}), k3 to 2 channels, no activation.
//
// Early: branches span the encoder only. Late: branches also span the residual
// blocks (two narrow 4F blocks each) and fusion happens after them.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "fusionflow/autodiff.hpp"
#include "fusionflow/error.hpp"
#include "fusionflow/events.hpp"
#include "fusionflow/neuron.hpp"
#include "fusionflow/ops.hpp"
#include "fusionflow/tensor.hpp"

namespace fusionflow {

enum class Variant { early, late, ann };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::early: return "early";
    case Variant::late: return "late";
    case Variant::ann: return "ann";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "early") return Variant::early;
  if (s == "late") return Variant::late;
  if (s == "ann" || s == "ann_baseline") return Variant::ann;
  throw InvalidInput("unknown variant '" + s + "' (expected early|late|ann)");
}

struct FusionConfig {
  Variant variant = Variant::early;
  std::size_t base_channels = 8;
  std::size_t n_steps = 5;
  SifConfig sif;
  NeuronModel neuron = NeuronModel::sif;
  double alpha = 0.1;
  std::size_t input_h = 64;  // nominal size; any positive multiple of 16 is accepted at run time
  std::size_t input_w = 64;
  std::size_t frame_channels = 2;

  void validate() const {
    if (base_channels < 2 || base_channels % 2) throw InvalidInput("base_channels must be even and >= 2");
    if (n_steps == 0) throw InvalidInput("n_steps must be >= 1");
    if (input_h == 0 || input_w == 0 || input_h % 16 || input_w % 16)
      throw InvalidInput("input size must be a positive multiple of 16, got " + std::to_string(input_h) + "x" +
                         std::to_string(input_w));
    if (frame_channels == 0) throw InvalidInput("frame_channels must be >= 1");
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidInput("alpha must be in (0, 1)");
    sif.validate();
  }

  bool has_snn() const { return variant != Variant::ann; }
};

enum class Role { snn_encoder, ann_encoder, residual, decoder, flow_head };

inline std::string to_string(Role r) {
  switch (r) {
    case Role::snn_encoder: return "snn_encoder";
    case Role::ann_encoder: return "ann_encoder";
    case Role::residual: return "residual";
    case Role::decoder: return "decoder";
    case Role::flow_head: return "flow_head";
  }
  return "?";
}

enum class LayerKind { conv, deconv };

template <typename T>
struct Layer {
  std::string name;
  Role role = Role::ann_encoder;
  LayerKind kind = LayerKind::conv;
  bool spiking = false;  // conv followed by a spiking neuron; no batch norm
  bool batch_norm = false;
  std::size_t cin = 0, cout = 0, kernel = 3, stride = 1, pad = 1;

  Parameter<T> weight, bias;
  Parameter<T> gamma, beta;  // present when batch_norm
  BatchNormState<T> bn;

  std::size_t param_count() const {
    std::size_t n = weight.numel() + bias.numel();
    if (batch_norm) n += gamma.numel() + beta.numel();
    return n;
  }
};

/// Per-layer operation counters filled during an instrumented forward pass.
struct LayerOps {
  std::string name;
  bool spiking = false;
  std::size_t kernel = 0, cout = 0, cin = 0;
  std::uint64_t input_count = 0;     // input activations per step, summed over the batch
  std::uint64_t nonzero_inputs = 0;  // spiking layers: nonzero input spikes over all steps
  std::uint64_t steps = 0;           // spiking layers: time-steps observed
  std::uint64_t macs = 0;            // analog layers
};

class OpsCounter {
public:
  LayerOps& layer(const std::string& name) {
    auto it = index_.find(name);
    if (it != index_.end()) return layers_[it->second];
    index_.emplace(name, layers_.size());
    layers_.push_back(LayerOps{name});
    return layers_.back();
  }
  const std::vector<LayerOps>& layers() const { return layers_; }

private:
  std::vector<LayerOps> layers_;
  std::map<std::string, std::size_t> index_;
};

/// Flow predictions from coarse to fine: 1/8, 1/4, 1/2, 1/1 of the input size.
template <typename T>
struct MultiScaleFlow {
  std::vector<Var<T>> flows;
  const Var<T>& finest() const { return flows.back(); }
};

/// Membrane potentials and spike accumulators of the spiking branch. Carrying a state
/// across several encode calls is equivalent to one call over the concatenated steps.
template <typename T>
struct SnnState {
  std::vector<Var<T>> potentials;    // one per spiking layer
  std::vector<Var<T>> accumulators;  // summed post-neuron spikes, one per spiking layer
  std::size_t steps = 0;
};

template <typename T>
class Model {
public:
  Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const FusionConfig& config() const { return config_; }
  Mode mode() const { return mode_; }
  void set_mode(Mode m) { mode_ = m; }

  std::deque<Layer<T>>& layers() { return layers_; }
  const std::deque<Layer<T>>& layers() const { return layers_; }

  Layer<T>& layer(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidInput("no layer named '" + name + "'");
    return layers_[it->second];
  }
  const Layer<T>& layer(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidInput("no layer named '" + name + "'");
    return layers_[it->second];
  }
  bool has_layer(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    for (auto& l : layers_) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
      if (l.batch_norm) {
        out.push_back(&l.gamma);
        out.push_back(&l.beta);
      }
    }
    return out;
  }

  /// Parameters plus batch-norm running statistics, keyed by a stable name.
  std::vector<std::pair<std::string, Tensor<T>*>> state_tensors() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (auto* p : parameters()) out.emplace_back(p->name, &p->value);
    for (auto& l : layers_)
      if (l.batch_norm) {
        out.emplace_back(l.name + ".running_mean", &l.bn.running_mean);
        out.emplace_back(l.name + ".running_var", &l.bn.running_var);
      }
    return out;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  /// Names of the spiking layers in execution order.
  const std::vector<std::string>& snn_layers() const { return snn_order_; }

  // ------------------------------------------------------------------ building

  Layer<T>& add_layer(std::string name, Role role, LayerKind kind, std::size_t cin, std::size_t cout,
                      std::size_t k, std::size_t stride, std::size_t pad, bool spiking, bool bn) {
    if (index_.count(name)) throw InvalidInput("duplicate layer '" + name + "'");
    Layer<T> l;
    l.name = name;
    l.role = role;
    l.kind = kind;
    l.cin = cin;
    l.cout = cout;
    l.kernel = k;
    l.stride = stride;
    l.pad = pad;
    l.spiking = spiking;
    l.batch_norm = bn;
    const Shape wshape = kind == LayerKind::conv ? Shape{cout, cin, k, k} : Shape{cin, cout, k, k};
    l.weight = Parameter<T>(name + ".weight", Tensor<T>(wshape));
    l.bias = Parameter<T>(name + ".bias", Tensor<T>(Shape{cout}));
    if (bn) {
      l.gamma = Parameter<T>(name + ".gamma", Tensor<T>(Shape{cout}, T(1)));
      l.beta = Parameter<T>(name + ".beta", Tensor<T>(Shape{cout}));
      l.bn = BatchNormState<T>(cout);
    }
    index_.emplace(name, layers_.size());
    layers_.push_back(std::move(l));
    if (spiking) snn_order_.push_back(name);
    return layers_.back();
  }

  /// Kaiming-uniform weights (bound sqrt(6 / fan_in)), zero biases, unit BN scale.
  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& l : layers_) {
      const double taps = double(l.kernel * l.kernel);
      const double fan_in =
          l.kind == LayerKind::conv ? double(l.cin) * taps : double(l.cin) * taps / double(l.stride * l.stride);
      std::uniform_real_distribution<double> d(-std::sqrt(6.0 / fan_in), std::sqrt(6.0 / fan_in));
      for (auto& w : l.weight.value.storage()) w = static_cast<T>(d(rng));
      l.bias.value.fill(T(0));
      if (l.batch_norm) {
        l.gamma.value.fill(T(1));
        l.beta.value.fill(T(0));
        l.bn = BatchNormState<T>(l.cout);
      }
    }
  }

  FusionConfig config_;

private:
  std::deque<Layer<T>> layers_;
  std::map<std::string, std::size_t> index_;
  std::vector<std::string> snn_order_;
  Mode mode_ = Mode::train;
};

/// Builds the layer graph for `cfg` and initialises it from `seed`.
template <typename T>
Model<T> build(const FusionConfig& cfg, std::uint64_t seed = 0) {
  cfg.validate();
  Model<T> m;
  m.config_ = cfg;
  const std::size_t F = cfg.base_channels, h = F / 2;
  auto conv = [&](std::string name, Role role, std::size_t cin, std::size_t cout, std::size_t stride, bool spiking,
                  bool bn) { m.add_layer(std::move(name), role, LayerKind::conv, cin, cout, 3, stride, 1, spiking, bn); };

  const std::size_t widths[4] = {F, 2 * F, 4 * F, 8 * F};
  if (cfg.variant == Variant::ann) {
    std::size_t cin = cfg.frame_channels;
    for (int i = 0; i < 4; ++i) {
      conv("ann_enc" + std::to_string(i + 1), Role::ann_encoder, cin, widths[i], 2, false, true);
      cin = widths[i];
    }
  } else {
    std::size_t s_in = SpikeVolume::channels, a_in = cfg.frame_channels;
    for (int i = 0; i < 4; ++i) {
      conv("snn_enc" + std::to_string(i + 1), Role::snn_encoder, s_in, widths[i] / 2, 2, true, false);
      conv("ann_enc" + std::to_string(i + 1), Role::ann_encoder, a_in, widths[i] / 2, 2, false, true);
      s_in = a_in = widths[i] / 2;
    }
  }

  if (cfg.variant == Variant::late) {
    for (int b = 1; b <= 2; ++b)
      for (const char* part : {"a", "b"}) {
        conv("snn_res" + std::to_string(b) + part, Role::residual, 4 * F, 4 * F, 1, true, false);
        conv("ann_res" + std::to_string(b) + part, Role::residual, 4 * F, 4 * F, 1, false, true);
      }
  } else {
    for (int b = 1; b <= 2; ++b)
      for (const char* part : {"a", "b"}) conv("res" + std::to_string(b) + part, Role::residual, 8 * F, 8 * F, 1, false, true);
  }

  // Decoder: deconv inputs 8F, 8F, 4F+2, 2F+2; outputs 4F, 2F, F, F/2.
  const std::size_t dec_in[4] = {8 * F, 8 * F, 4 * F + 2, 2 * F + 2};
  const std::size_t dec_out[4] = {4 * F, 2 * F, F, h};
  const std::size_t skip_w[4] = {4 * F, 2 * F, F, 0};
  for (int i = 0; i < 4; ++i) {
    m.add_layer("deconv" + std::to_string(i + 1), Role::decoder, LayerKind::deconv, dec_in[i], dec_out[i], 4, 2, 1,
                false, false);
    const std::size_t head_in = dec_out[i] + skip_w[i] + (i > 0 ? 2 : 0);
    m.add_layer("flow" + std::to_string(i + 1), Role::flow_head, LayerKind::conv, head_in, 2, 3, 1, 1, false, false);
  }
  m.initialize(seed);
  return m;
}

// --------------------------------------------------------------- parameter count

struct ParamCount {
  struct Entry {
    std::string name;
    Role role;
    std::size_t count;
  };
  std::vector<Entry> layers;
  std::map<Role, std::size_t> by_role;
  std::size_t total = 0;
};

template <typename T>
ParamCount count_params(const Model<T>& m) {
  ParamCount pc;
  for (const auto& l : m.layers()) {
    const std::size_t n = l.param_count();
    pc.layers.push_back({l.name, l.role, n});
    pc.by_role[l.role] += n;
    pc.total += n;
  }
  return pc;
}

// ------------------------------------------------------------------- forward

/// Stacks per-sample spike volumes into [N, B, 4, H, W].
template <typename T>
Tensor<T> stack_volumes(const std::vector<const SpikeVolume*>& vols) {
  if (vols.empty()) throw InvalidInput("stack_volumes: no volumes");
  const std::size_t N = vols[0]->steps, H = vols[0]->height, W = vols[0]->width, B = vols.size();
  const std::size_t plane = SpikeVolume::channels * H * W;
  Tensor<T> out(Shape{N, B, SpikeVolume::channels, H, W});
  for (std::size_t b = 0; b < B; ++b) {
    const auto& v = *vols[b];
    if (v.steps != N || v.height != H || v.width != W) throw InvalidInput("stack_volumes: volume shapes differ");
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < plane; ++i) out[(n * B + b) * plane + i] = static_cast<T>(v.data[n * plane + i]);
  }
  return out;
}

/// Stacks images as channels: [B, C, H, W] from B groups of C images.
template <typename T>
Tensor<T> stack_frames(const std::vector<std::vector<const Image*>>& batch) {
  if (batch.empty() || batch[0].empty()) throw InvalidInput("stack_frames: no frames");
  const std::size_t B = batch.size(), C = batch[0].size(), H = batch[0][0]->height, W = batch[0][0]->width;
  Tensor<T> out(Shape{B, C, H, W});
  for (std::size_t b = 0; b < B; ++b) {
    if (batch[b].size() != C) throw InvalidInput("stack_frames: inconsistent frame count");
    for (std::size_t c = 0; c < C; ++c) {
      const Image& img = *batch[b][c];
      if (img.height != H || img.width != W) throw InvalidInput("stack_frames: frame sizes differ");
      for (std::size_t i = 0; i < H * W; ++i) out[(b * C + c) * H * W + i] = static_cast<T>(img.pixels[i]);
    }
  }
  return out;
}

namespace detail {

template <typename T>
std::uint64_t count_nonzero(const Tensor<T>& t) {
  std::uint64_t n = 0;
  for (T v : t.values()) n += v != T(0);
  return n;
}

template <typename T>
Var<T> apply_conv(Tape<T>& tape, Layer<T>& l, const Var<T>& x, OpsCounter* ops) {
  Var<T> y = l.kind == LayerKind::conv
                 ? conv2d(x, tape.param(l.weight), tape.param(l.bias), l.stride, l.pad)
                 : conv_transpose2d(x, tape.param(l.weight), tape.param(l.bias), l.stride, l.pad);
  if (ops) {
    LayerOps& r = ops->layer(l.name);
    r.kernel = l.kernel;
    r.cin = l.cin;
    r.cout = l.cout;
    r.spiking = l.spiking;
    if (l.spiking) {
      r.input_count = x.value().numel();
      r.nonzero_inputs += count_nonzero(x.value());
      r.steps += 1;
    } else {
      const auto& io = l.kind == LayerKind::conv ? y.value() : x.value();
      r.input_count = x.value().numel();
      r.macs += std::uint64_t(io.dim(0)) * io.dim(2) * io.dim(3) * l.cin * l.cout * l.kernel * l.kernel;
    }
  }
  return y;
}

/// conv + batch norm + LeakyReLU (the LeakyReLU is skipped when `activate` is false).
template <typename T>
Var<T> ann_block(Tape<T>& tape, Model<T>& m, Layer<T>& l, const Var<T>& x, OpsCounter* ops, bool activate = true) {
  Var<T> y = apply_conv(tape, l, x, ops);
  if (l.batch_norm) y = batch_norm(y, tape.param(l.gamma), tape.param(l.beta), l.bn, m.mode());
  return activate ? leaky_relu(y, T(m.config().alpha)) : y;
}

template <typename T>
Var<T> fire(const Var<T>& pot, const FusionConfig& cfg) {
  return cfg.neuron == NeuronModel::sif ? sif(pot, cfg.sif) : if_spike(pot, cfg.sif.v_th_pos);
}

/// Integrates `current` into spiking layer `k`, fires, resets, and accumulates.
template <typename T>
Var<T> spike_update(Tape<T>& tape, const FusionConfig& cfg, SnnState<T>& st, std::size_t k, const Var<T>& current) {
  if (!st.potentials[k].valid()) {
    st.potentials[k] = tape.constant(Tensor<T>(current.shape()), "membrane_init");
    st.accumulators[k] = tape.constant(Tensor<T>(current.shape()), "accumulator_init");
  }
  Var<T> pot = add(st.potentials[k], current);
  Var<T> s = fire(pot, cfg);
  st.potentials[k] = membrane_reset(pot, s, cfg.sif);
  st.accumulators[k] = add(st.accumulators[k], s);
  return s;
}

}  // namespace detail

/// Runs the spiking branch over every step of `volume` ([N, B, 4, H, W]), continuing
/// from `state`. No-op for the analog baseline.
template <typename T>
void encode_events(Tape<T>& tape, Model<T>& m, SnnState<T>& state, const Tensor<T>& volume,
                   OpsCounter* ops = nullptr) {
  const FusionConfig& cfg = m.config();
  if (!cfg.has_snn()) return;
  if (volume.rank() != 5 || volume.dim(2) != SpikeVolume::channels || volume.dim(3) % 16 || volume.dim(4) % 16 ||
      volume.dim(3) == 0 || volume.dim(4) == 0)
    throw InvalidInput("event volume " + shape_str(volume.shape()) +
                       " must be [N,B,4,H,W] with H and W positive multiples of 16");
  const auto& names = m.snn_layers();
  if (state.potentials.empty()) {
    state.potentials.resize(names.size());
    state.accumulators.resize(names.size());
  }
  const std::size_t N = volume.dim(0), B = volume.dim(1);
  const std::size_t plane = B * SpikeVolume::channels * volume.dim(3) * volume.dim(4);
  for (std::size_t n = 0; n < N; ++n) {
    Tensor<T> frame(Shape{B, SpikeVolume::channels, volume.dim(3), volume.dim(4)});
    std::copy_n(volume.data() + n * plane, plane, frame.data());
    Var<T> x = tape.constant(std::move(frame), "event_frame");
    for (std::size_t k = 0; k < 4; ++k)
      x = detail::spike_update(tape, cfg, state, k, detail::apply_conv(tape, m.layer(names[k]), x, ops));
    if (cfg.variant == Variant::late) {
      // Two spiking residual blocks: h = S(conv_a(x)); y = S(conv_b(h) + x).
      for (std::size_t b = 0; b < 2; ++b) {
        const std::size_t ka = 4 + 2 * b, kb = ka + 1;
        Var<T> hs = detail::spike_update(tape, cfg, state, ka, detail::apply_conv(tape, m.layer(names[ka]), x, ops));
        x = detail::spike_update(tape, cfg, state, kb, add(detail::apply_conv(tape, m.layer(names[kb]), hs, ops), x));
      }
    }
  }
  state.steps += N;
}

/// Accumulated outputs consumed downstream: the four encoder stages, plus the
/// residual output for the late variant.
template <typename T>
std::vector<Var<T>> snn_features(const Model<T>& m, const SnnState<T>& st) {
  if (!m.config().has_snn()) return {};
  if (st.accumulators.empty() || !st.accumulators[0].valid()) throw InvalidState("spiking branch has not run");
  std::vector<Var<T>> f(st.accumulators.begin(), st.accumulators.begin() + 4);
  if (m.config().variant == Variant::late) f.push_back(st.accumulators.back());
  return f;
}

/// Analog branch, fusion, residual blocks and decoder. `snn` holds the accumulated
/// spiking features (see snn_features); frames are [B, frame_channels, H, W].
template <typename T>
MultiScaleFlow<T> decode(Tape<T>& tape, Model<T>& m, const std::vector<Var<T>>& snn, const Var<T>& frames,
                         OpsCounter* ops = nullptr) {
  const FusionConfig& cfg = m.config();
  const auto& fs = frames.shape();
  if (fs.size() != 4 || fs[1] != cfg.frame_channels || fs[2] % 16 || fs[3] % 16 || fs[2] == 0 || fs[3] == 0)
    throw InvalidInput("frames " + shape_str(fs) + " must be [B," + std::to_string(cfg.frame_channels) +
                       ",H,W] with H and W positive multiples of 16");
  if (!snn.empty() && (snn[0].dim(0) != fs[0] || snn[0].dim(2) * 2 != fs[2] || snn[0].dim(3) * 2 != fs[3]))
    throw InvalidInput("event and frame inputs differ in batch or spatial size");
  const std::size_t expected_snn = cfg.variant == Variant::early ? 4 : (cfg.variant == Variant::late ? 5 : 0);
  if (snn.size() != expected_snn) throw InvalidInput("decode: wrong number of spiking features");

  std::vector<Var<T>> enc(4);
  Var<T> a = frames;
  for (std::size_t i = 0; i < 4; ++i) {
    a = detail::ann_block(tape, m, m.layer("ann_enc" + std::to_string(i + 1)), a, ops);
    enc[i] = cfg.has_snn() ? concat<T>({snn[i], a}, 1) : a;
  }

  Var<T> x;
  if (cfg.variant == Variant::late) {
    Var<T> r = a;
    for (int b = 1; b <= 2; ++b) {
      const std::string p = "ann_res" + std::to_string(b);
      Var<T> hh = detail::ann_block(tape, m, m.layer(p + "a"), r, ops);
      r = add(detail::ann_block(tape, m, m.layer(p + "b"), hh, ops, false), r);
    }
    x = concat<T>({snn[4], r}, 1);
  } else {
    x = enc[3];
    for (int b = 1; b <= 2; ++b) {
      const std::string p = "res" + std::to_string(b);
      Var<T> hh = detail::ann_block(tape, m, m.layer(p + "a"), x, ops);
      x = add(detail::ann_block(tape, m, m.layer(p + "b"), hh, ops, false), x);
    }
  }

  MultiScaleFlow<T> out;
  for (std::size_t i = 0; i < 4; ++i) {
    Var<T> u = leaky_relu(detail::apply_conv(tape, m.layer("deconv" + std::to_string(i + 1)), x, ops), T(cfg.alpha));
    std::vector<Var<T>> parts{u};
    if (i < 3) parts.push_back(enc[2 - i]);
    if (i > 0) parts.push_back(scale(upsample_nearest(out.flows.back(), 2), T(2)));
    x = parts.size() == 1 ? u : concat<T>(parts, 1);
    out.flows.push_back(detail::apply_conv(tape, m.layer("flow" + std::to_string(i + 1)), x, ops));
  }
  return out;
}

/// Full forward pass. `volume` is [N, B, 4, H, W] with N = n_steps (ignored for the
/// analog baseline), `frames` is [B, frame_channels, H, W].
template <typename T>
MultiScaleFlow<T> forward(Tape<T>& tape, Model<T>& m, const Tensor<T>& volume, const Tensor<T>& frames,
                          OpsCounter* ops = nullptr) {
  const FusionConfig& cfg = m.config();
  SnnState<T> st;
  if (cfg.has_snn()) {
    if (volume.rank() != 5 || volume.dim(0) != cfg.n_steps)
      throw InvalidInput("event volume " + shape_str(volume.shape()) + " must have " + std::to_string(cfg.n_steps) +
                         " steps");
    if (frames.rank() != 4 || volume.dim(1) != frames.dim(0) || volume.dim(3) != frames.dim(2) ||
        volume.dim(4) != frames.dim(3))
      throw InvalidInput("event volume " + shape_str(volume.shape()) + " and frames " + shape_str(frames.shape()) +
                         " differ in batch or spatial size");
    encode_events(tape, m, st, volume, ops);
  }
  return decode(tape, m, snn_features(m, st), tape.constant(frames, "frames"), ops);
}

}  // namespace fusionflow
