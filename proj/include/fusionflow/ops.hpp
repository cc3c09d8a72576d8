#pragma once

// Differentiable primitives recorded on a Tape.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fusionflow/autodiff.hpp"
#include "fusionflow/kernels.hpp"
#include "fusionflow/neuron.hpp"
#include "fusionflow/tensor.hpp"

namespace fusionflow {

namespace detail {

template <typename T>
Tape<T>& tape_of(const Var<T>& a) {
  if (!a.valid()) throw InvalidInput("use of an empty variable");
  return *a.tape();
}

template <typename T>
Tape<T>& tape_of(const Var<T>& a, const Var<T>& b) {
  Tape<T>& t = tape_of(a);
  if (b.tape() != &t) throw InvalidInput("variables recorded on different tapes");
  return t;
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw InvalidInput(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
}

template <typename T>
void require_rank4(const Var<T>& a, const char* op) {
  if (a.value().rank() != 4)
    throw InvalidInput(std::string(op) + ": expected [B,C,H,W], got " + shape_str(a.shape()));
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src, T factor = T(1)) {
  for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += factor * src[i];
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = detail::tape_of(a, b);
  detail::require_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  detail::add_into(out, b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record("add", std::move(out), {a, b}, [ia, ib](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(ia)) detail::add_into(t.grad_buffer(ia), g);
    if (t.requires_grad(ib)) detail::add_into(t.grad_buffer(ib), g);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = detail::tape_of(a, b);
  detail::require_same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  detail::add_into(out, b.value(), T(-1));
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record("sub", std::move(out), {a, b}, [ia, ib](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(ia)) detail::add_into(t.grad_buffer(ia), g);
    if (t.requires_grad(ib)) detail::add_into(t.grad_buffer(ib), g, T(-1));
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = detail::tape_of(a, b);
  detail::require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record("mul", std::move(out), {a, b}, [ia, ib](Tape<T>& t, const Tensor<T>& g) {
    const auto &va = t.value(ia), &vb = t.value(ib);
    if (t.requires_grad(ia)) {
      auto& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * vb[i];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * va[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T c) {
  Tape<T>& tape = detail::tape_of(a);
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= c;
  const std::size_t ia = a.id();
  return tape.record("scale", std::move(out), {a}, [ia, c](Tape<T>& t, const Tensor<T>& g) {
    detail::add_into(t.grad_buffer(ia), g, c);
  });
}

/// Elementwise product with a constant tensor (no gradient to the mask).
template <typename T>
Var<T> mul_const(const Var<T>& a, Tensor<T> mask) {
  Tape<T>& tape = detail::tape_of(a);
  if (mask.shape() != a.shape())
    throw InvalidInput("mul_const: mask shape " + shape_str(mask.shape()) + " vs " + shape_str(a.shape()));
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * mask[i];
  const std::size_t ia = a.id();
  return tape.record("mul_const", std::move(out), {a},
                     [ia, m = std::move(mask)](Tape<T>& t, const Tensor<T>& g) {
                       auto& ga = t.grad_buffer(ia);
                       for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * m[i];
                     });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T alpha) {
  Tape<T>& tape = detail::tape_of(x);
  Tensor<T> out = leaky_relu(x.value(), alpha);
  const std::size_t ix = x.id();
  return tape.record("leaky_relu", std::move(out), {x}, [ix, alpha](Tape<T>& t, const Tensor<T>& g) {
    const auto& v = t.value(ix);
    auto& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * leaky_relu_grad(v[i], alpha);
  });
}

/// Charbonnier penalty (x^2 + eta^2)^r, elementwise.
template <typename T>
Var<T> charbonnier(const Var<T>& x, T eta, T r) {
  Tape<T>& tape = detail::tape_of(x);
  if (!(eta > T(0))) throw InvalidInput("charbonnier: eta must be > 0");
  Tensor<T> out(x.shape());
  const T eta2 = eta * eta;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const T v = x.value()[i];
    out[i] = std::pow(v * v + eta2, r);
  }
  const std::size_t ix = x.id();
  return tape.record("charbonnier", std::move(out), {x}, [ix, eta2, r](Tape<T>& t, const Tensor<T>& g) {
    const auto& v = t.value(ix);
    auto& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const T s = v[i] * v[i] + eta2;
      gx[i] += g[i] * r * std::pow(s, r - T(1)) * T(2) * v[i];
    }
  });
}

// ------------------------------------------------------------------ reductions

template <typename T>
Var<T> sum(const Var<T>& x) {
  Tape<T>& tape = detail::tape_of(x);
  double acc = 0.0;
  for (T v : x.value().values()) acc += static_cast<double>(v);
  const std::size_t ix = x.id();
  return tape.record("sum", Tensor<T>::scalar(static_cast<T>(acc)), {x},
                     [ix](Tape<T>& t, const Tensor<T>& g) {
                       auto& gx = t.grad_buffer(ix);
                       const T gv = g[0];
                       for (auto& v : gx.values()) v += gv;
                     });
}

/// Anisotropic L1 total variation of a [B,C,H,W] field: |f(y,x)-f(y+1,x)| + |f(y,x)-f(y,x+1)|
/// over all pairs with both neighbours inside the image. Subgradient 0 at ties.
template <typename T>
Var<T> smoothness_l1(const Var<T>& flow) {
  Tape<T>& tape = detail::tape_of(flow);
  detail::require_rank4(flow, "smoothness_l1");
  const auto& f = flow.value();
  const std::size_t B = f.dim(0), C = f.dim(1), H = f.dim(2), W = f.dim(3);
  double acc = 0.0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          if (y + 1 < H) acc += std::abs(static_cast<double>(f.at(b, c, y, x) - f.at(b, c, y + 1, x)));
          if (x + 1 < W) acc += std::abs(static_cast<double>(f.at(b, c, y, x) - f.at(b, c, y, x + 1)));
        }
  const std::size_t id = flow.id();
  return tape.record("smoothness_l1", Tensor<T>::scalar(static_cast<T>(acc)), {flow},
                     [id, B, C, H, W](Tape<T>& t, const Tensor<T>& g) {
                       const auto& f = t.value(id);
                       auto& gf = t.grad_buffer(id);
                       const T gv = g[0];
                       auto sgn = [](T d) { return d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)); };
                       for (std::size_t b = 0; b < B; ++b)
                         for (std::size_t c = 0; c < C; ++c)
                           for (std::size_t y = 0; y < H; ++y)
                             for (std::size_t x = 0; x < W; ++x) {
                               if (y + 1 < H) {
                                 const T s = gv * sgn(f.at(b, c, y, x) - f.at(b, c, y + 1, x));
                                 gf.at(b, c, y, x) += s;
                                 gf.at(b, c, y + 1, x) -= s;
                               }
                               if (x + 1 < W) {
                                 const T s = gv * sgn(f.at(b, c, y, x) - f.at(b, c, y, x + 1));
                                 gf.at(b, c, y, x) += s;
                                 gf.at(b, c, y, x + 1) -= s;
                               }
                             }
                     });
}

// ----------------------------------------------------------------------- shape

/// Concatenates along `axis`; all other extents must agree.
template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw InvalidInput("concat: no inputs");
  Tape<T>& tape = detail::tape_of(parts.front());
  const Shape& s0 = parts.front().shape();
  if (axis >= s0.size()) throw InvalidInput("concat: axis out of range");
  Shape out_shape = s0;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    if (p.tape() != &tape) throw InvalidInput("concat: variables recorded on different tapes");
    const Shape& s = p.shape();
    if (s.size() != s0.size()) throw InvalidInput("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != s0[d])
        throw InvalidInput("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(s0));
    out_shape[axis] += s[axis];
    extents.push_back(s[axis]);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s0[d];
  for (std::size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];
  const std::size_t total = out_shape[axis];

  Tensor<T> out(out_shape);
  std::size_t offset = 0;
  std::vector<std::size_t> ids;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    const std::size_t e = extents[k];
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(v.data() + o * e * inner, e * inner, out.data() + (o * total + offset) * inner);
    offset += e;
    ids.push_back(parts[k].id());
  }
  return tape.record("concat", std::move(out), parts,
                     [ids, extents, outer, inner, total](Tape<T>& t, const Tensor<T>& g) {
                       std::size_t offset = 0;
                       for (std::size_t k = 0; k < ids.size(); ++k) {
                         const std::size_t e = extents[k];
                         if (t.requires_grad(ids[k])) {
                           auto& gk = t.grad_buffer(ids[k]);
                           for (std::size_t o = 0; o < outer; ++o) {
                             const T* src = g.data() + (o * total + offset) * inner;
                             T* dst = gk.data() + o * e * inner;
                             for (std::size_t i = 0; i < e * inner; ++i) dst[i] += src[i];
                           }
                         }
                         offset += e;
                       }
                     });
}

/// Channel range [begin, end) of a [B,C,H,W] tensor.
template <typename T>
Var<T> slice_channels(const Var<T>& x, std::size_t begin, std::size_t end) {
  Tape<T>& tape = detail::tape_of(x);
  detail::require_rank4(x, "slice_channels");
  const auto& v = x.value();
  const std::size_t B = v.dim(0), C = v.dim(1), HW = v.dim(2) * v.dim(3);
  if (begin >= end || end > C) throw InvalidInput("slice_channels: bad channel range");
  const std::size_t n = end - begin;
  Tensor<T> out(Shape{B, n, v.dim(2), v.dim(3)});
  for (std::size_t b = 0; b < B; ++b)
    std::copy_n(v.data() + (b * C + begin) * HW, n * HW, out.data() + b * n * HW);
  const std::size_t ix = x.id();
  return tape.record("slice_channels", std::move(out), {x},
                     [ix, B, C, HW, begin, n](Tape<T>& t, const Tensor<T>& g) {
                       auto& gx = t.grad_buffer(ix);
                       for (std::size_t b = 0; b < B; ++b)
                         for (std::size_t i = 0; i < n * HW; ++i)
                           gx[(b * C + begin) * HW + i] += g[b * n * HW + i];
                     });
}

/// Non-overlapping average pooling by an integer factor.
template <typename T>
Tensor<T> avg_pool(const Tensor<T>& x, std::size_t factor) {
  require_rank(x, 4, "avg_pool");
  if (factor == 0 || x.dim(2) % factor || x.dim(3) % factor)
    throw InvalidInput("avg_pool: spatial size " + shape_str(x.shape()) + " not divisible by " +
                       std::to_string(factor));
  const std::size_t B = x.dim(0), C = x.dim(1), Ho = x.dim(2) / factor, Wo = x.dim(3) / factor;
  Tensor<T> out(Shape{B, C, Ho, Wo});
  const T inv = T(1) / T(factor * factor);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < Ho; ++y)
        for (std::size_t xx = 0; xx < Wo; ++xx) {
          T acc = T(0);
          for (std::size_t dy = 0; dy < factor; ++dy)
            for (std::size_t dx = 0; dx < factor; ++dx) acc += x.at(b, c, y * factor + dy, xx * factor + dx);
          out.at(b, c, y, xx) = acc * inv;
        }
  return out;
}

template <typename T>
Var<T> avg_pool(const Var<T>& x, std::size_t factor) {
  Tape<T>& tape = detail::tape_of(x);
  Tensor<T> out = avg_pool(x.value(), factor);
  const std::size_t ix = x.id();
  return tape.record("avg_pool", std::move(out), {x}, [ix, factor](Tape<T>& t, const Tensor<T>& g) {
    auto& gx = t.grad_buffer(ix);
    const T inv = T(1) / T(factor * factor);
    for (std::size_t b = 0; b < g.dim(0); ++b)
      for (std::size_t c = 0; c < g.dim(1); ++c)
        for (std::size_t y = 0; y < g.dim(2); ++y)
          for (std::size_t xx = 0; xx < g.dim(3); ++xx) {
            const T s = g.at(b, c, y, xx) * inv;
            for (std::size_t dy = 0; dy < factor; ++dy)
              for (std::size_t dx = 0; dx < factor; ++dx) gx.at(b, c, y * factor + dy, xx * factor + dx) += s;
          }
  });
}

/// Nearest-neighbour upsampling by an integer factor.
template <typename T>
Var<T> upsample_nearest(const Var<T>& x, std::size_t factor) {
  Tape<T>& tape = detail::tape_of(x);
  detail::require_rank4(x, "upsample_nearest");
  const auto& v = x.value();
  Tensor<T> out(Shape{v.dim(0), v.dim(1), v.dim(2) * factor, v.dim(3) * factor});
  for (std::size_t b = 0; b < out.dim(0); ++b)
    for (std::size_t c = 0; c < out.dim(1); ++c)
      for (std::size_t y = 0; y < out.dim(2); ++y)
        for (std::size_t xx = 0; xx < out.dim(3); ++xx) out.at(b, c, y, xx) = v.at(b, c, y / factor, xx / factor);
  const std::size_t ix = x.id();
  return tape.record("upsample_nearest", std::move(out), {x}, [ix, factor](Tape<T>& t, const Tensor<T>& g) {
    auto& gx = t.grad_buffer(ix);
    for (std::size_t b = 0; b < g.dim(0); ++b)
      for (std::size_t c = 0; c < g.dim(1); ++c)
        for (std::size_t y = 0; y < g.dim(2); ++y)
          for (std::size_t xx = 0; xx < g.dim(3); ++xx) gx.at(b, c, y / factor, xx / factor) += g.at(b, c, y, xx);
  });
}

// -------------------------------------------------------------------- spiking

/// Signed spike nonlinearity applied to post-integration potentials. Backward is
/// the surrogate: 1/v_th_pos above the positive threshold, 1/v_th_neg_mag below the
/// negative one, 0 in between.
template <typename T>
Var<T> sif(const Var<T>& v, const SifConfig& cfg) {
  Tape<T>& tape = detail::tape_of(v);
  Tensor<T> out(v.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = T(sif_fire(v.value()[i], cfg));
  const std::size_t iv = v.id();
  return tape.record("sif", std::move(out), {v}, [iv, cfg](Tape<T>& t, const Tensor<T>& g) {
    const auto& pot = t.value(iv);
    auto& gv = t.grad_buffer(iv);
    for (std::size_t i = 0; i < g.numel(); ++i) gv[i] += g[i] * sif_surrogate(pot[i], cfg);
  });
}

/// Unsigned integrate-and-fire spike nonlinearity (positive threshold only).
template <typename T>
Var<T> if_spike(const Var<T>& v, double v_th_pos) {
  Tape<T>& tape = detail::tape_of(v);
  Tensor<T> out(v.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = T(if_fire(v.value()[i], v_th_pos));
  const std::size_t iv = v.id();
  return tape.record("if", std::move(out), {v}, [iv, v_th_pos](Tape<T>& t, const Tensor<T>& g) {
    const auto& pot = t.value(iv);
    auto& gv = t.grad_buffer(iv);
    for (std::size_t i = 0; i < g.numel(); ++i) gv[i] += g[i] * if_surrogate(pot[i], v_th_pos);
  });
}

/// Membrane carry after firing. Hard reset: v where no spike, 0 where a spike fired,
/// with gradient factor 1 / 0 respectively. Soft reset: v - spike * threshold, factor 1.
template <typename T>
Var<T> membrane_reset(const Var<T>& v, const Var<T>& spikes, const SifConfig& cfg) {
  detail::require_same_shape(v, spikes, "membrane_reset");
  const auto& s = spikes.value();
  if (cfg.soft_reset) {
    Tensor<T> offset(s.shape());
    for (std::size_t i = 0; i < s.numel(); ++i)
      offset[i] = s[i] > T(0) ? T(-cfg.v_th_pos) * s[i] : (s[i] < T(0) ? T(cfg.v_th_neg_mag) * -s[i] : T(0));
    Tape<T>& tape = detail::tape_of(v);
    return add(v, tape.constant(std::move(offset)));
  }
  Tensor<T> keep(s.shape());
  for (std::size_t i = 0; i < s.numel(); ++i) keep[i] = s[i] == T(0) ? T(1) : T(0);
  return mul_const(v, std::move(keep));
}

// ---------------------------------------------------------------- convolution

namespace detail {
inline kernels::ConvGeometry conv_geometry(std::size_t C, std::size_t H, std::size_t W, std::size_t k,
                                           std::size_t stride, std::size_t pad, const char* op) {
  if (stride == 0 || k == 0) throw InvalidInput(std::string(op) + ": kernel and stride must be positive");
  if (H + 2 * pad < k || W + 2 * pad < k) throw InvalidInput(std::string(op) + ": kernel larger than padded input");
  return {C, H, W, k, stride, pad, (H + 2 * pad - k) / stride + 1, (W + 2 * pad - k) / stride + 1};
}

template <typename T>
void check_bias(const Var<T>& bias, std::size_t cout, const char* op) {
  if (bias.valid() && (bias.value().rank() != 1 || bias.dim(0) != cout))
    throw InvalidInput(std::string(op) + ": bias must have shape [" + std::to_string(cout) + "]");
}
}  // namespace detail

/// Cross-correlation. input [B,Cin,H,W], weight [Cout,Cin,k,k], bias [Cout] (optional).
/// Output extent floor((H + 2*pad - k) / stride) + 1; trailing rows/columns that do not
/// complete a stride are ignored.
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, std::size_t stride,
              std::size_t pad) {
  Tape<T>& tape = detail::tape_of(input, weight);
  detail::require_rank4(input, "conv2d");
  detail::require_rank4(weight, "conv2d weight");
  const auto& x = input.value();
  const auto& w = weight.value();
  const std::size_t B = x.dim(0), Cin = x.dim(1), Cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != Cin || w.dim(3) != k)
    throw InvalidInput("conv2d: weight " + shape_str(w.shape()) + " incompatible with input " + shape_str(x.shape()));
  detail::check_bias(bias, Cout, "conv2d");
  const auto g = detail::conv_geometry(Cin, x.dim(2), x.dim(3), k, stride, pad, "conv2d");

  Tensor<T> out(Shape{B, Cout, g.out_height, g.out_width});
  const std::size_t HWo = g.col_cols(), in_plane = Cin * x.dim(2) * x.dim(3);
  std::vector<T> col(g.col_rows() * HWo);
  for (std::size_t b = 0; b < B; ++b) {
    T* ob = out.data() + b * Cout * HWo;
    if (bias.valid())
      for (std::size_t c = 0; c < Cout; ++c) std::fill(ob + c * HWo, ob + (c + 1) * HWo, bias.value()[c]);
    kernels::im2col(g, x.data() + b * in_plane, col.data());
    kernels::gemm_nn(Cout, HWo, g.col_rows(), w.data(), col.data(), ob);
  }

  const std::size_t ix = input.id(), iw = weight.id();
  const bool has_bias = bias.valid();
  const std::size_t ib = has_bias ? bias.id() : 0;
  std::vector<Var<T>> inputs{input, weight};
  if (has_bias) inputs.push_back(bias);
  return tape.record("conv2d", std::move(out), inputs,
                     [=](Tape<T>& t, const Tensor<T>& gout) {
                       const auto& x = t.value(ix);
                       const auto& w = t.value(iw);
                       std::vector<T> col(g.col_rows() * HWo);
                       for (std::size_t b = 0; b < B; ++b) {
                         const T* gb = gout.data() + b * Cout * HWo;
                         if (t.requires_grad(iw)) {
                           kernels::im2col(g, x.data() + b * in_plane, col.data());
                           kernels::gemm_nt(Cout, g.col_rows(), HWo, gb, col.data(), t.grad_buffer(iw).data());
                         }
                         if (has_bias && t.requires_grad(ib)) {
                           auto& gbias = t.grad_buffer(ib);
                           for (std::size_t c = 0; c < Cout; ++c) {
                             T acc = T(0);
                             for (std::size_t i = 0; i < HWo; ++i) acc += gb[c * HWo + i];
                             gbias[c] += acc;
                           }
                         }
                         if (t.requires_grad(ix)) {
                           std::fill(col.begin(), col.end(), T(0));
                           kernels::gemm_tn(g.col_rows(), HWo, Cout, w.data(), gb, col.data());
                           kernels::col2im(g, col.data(), t.grad_buffer(ix).data() + b * in_plane);
                         }
                       }
                     });
}

/// Transposed convolution (adjoint of conv2d's input path).
/// input [B,Cin,H,W], weight [Cin,Cout,k,k]; output extent (H-1)*stride - 2*pad + k.
template <typename T>
Var<T> conv_transpose2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, std::size_t stride,
                        std::size_t pad) {
  Tape<T>& tape = detail::tape_of(input, weight);
  detail::require_rank4(input, "conv_transpose2d");
  detail::require_rank4(weight, "conv_transpose2d weight");
  const auto& x = input.value();
  const auto& w = weight.value();
  const std::size_t B = x.dim(0), Cin = x.dim(1), Hin = x.dim(2), Win = x.dim(3);
  const std::size_t Cout = w.dim(1), k = w.dim(2);
  if (w.dim(0) != Cin || w.dim(3) != k)
    throw InvalidInput("conv_transpose2d: weight " + shape_str(w.shape()) + " incompatible with input " +
                       shape_str(x.shape()));
  if (stride == 0 || Hin == 0 || Win == 0 || (Hin - 1) * stride + k <= 2 * pad ||
      (Win - 1) * stride + k <= 2 * pad)
    throw InvalidInput("conv_transpose2d: empty output for input " + shape_str(x.shape()));
  detail::check_bias(bias, Cout, "conv_transpose2d");
  const std::size_t Ho = (Hin - 1) * stride + k - 2 * pad, Wo = (Win - 1) * stride + k - 2 * pad;
  const kernels::ConvGeometry g{Cout, Ho, Wo, k, stride, pad, Hin, Win};

  Tensor<T> out(Shape{B, Cout, Ho, Wo});
  const std::size_t HWi = Hin * Win, HWo = Ho * Wo;
  std::vector<T> col(g.col_rows() * HWi);
  for (std::size_t b = 0; b < B; ++b) {
    T* ob = out.data() + b * Cout * HWo;
    if (bias.valid())
      for (std::size_t c = 0; c < Cout; ++c) std::fill(ob + c * HWo, ob + (c + 1) * HWo, bias.value()[c]);
    std::fill(col.begin(), col.end(), T(0));
    kernels::gemm_tn(g.col_rows(), HWi, Cin, w.data(), x.data() + b * Cin * HWi, col.data());
    kernels::col2im(g, col.data(), ob);
  }

  const std::size_t ix = input.id(), iw = weight.id();
  const bool has_bias = bias.valid();
  const std::size_t ib = has_bias ? bias.id() : 0;
  std::vector<Var<T>> inputs{input, weight};
  if (has_bias) inputs.push_back(bias);
  return tape.record("conv_transpose2d", std::move(out), inputs,
                     [=](Tape<T>& t, const Tensor<T>& gout) {
                       const auto& x = t.value(ix);
                       const auto& w = t.value(iw);
                       std::vector<T> col(g.col_rows() * HWi);
                       for (std::size_t b = 0; b < B; ++b) {
                         const T* gb = gout.data() + b * Cout * HWo;
                         kernels::im2col(g, gb, col.data());
                         if (t.requires_grad(ix))
                           kernels::gemm_nn(Cin, HWi, g.col_rows(), w.data(), col.data(),
                                            t.grad_buffer(ix).data() + b * Cin * HWi);
                         if (t.requires_grad(iw))
                           kernels::gemm_nt(Cin, g.col_rows(), HWi, x.data() + b * Cin * HWi, col.data(),
                                            t.grad_buffer(iw).data());
                         if (has_bias && t.requires_grad(ib)) {
                           auto& gbias = t.grad_buffer(ib);
                           for (std::size_t c = 0; c < Cout; ++c) {
                             T acc = T(0);
                             for (std::size_t i = 0; i < HWo; ++i) acc += gb[c * HWo + i];
                             gbias[c] += acc;
                           }
                         }
                       }
                     });
}

// ----------------------------------------------------------------- batch norm

template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels)
      : running_mean(Shape{channels}, T(0)), running_var(Shape{channels}, T(1)) {}
};

enum class Mode { train, eval };

/// Per-channel normalisation over (B,H,W). Train mode uses batch statistics (biased
/// variance) and updates the running estimates; eval mode uses the running estimates.
template <typename T>
Var<T> batch_norm(const Var<T>& input, const Var<T>& gamma, const Var<T>& beta, BatchNormState<T>& state,
                  Mode mode, T eps = T(1e-5), T momentum = T(0.1)) {
  Tape<T>& tape = detail::tape_of(input, gamma);
  detail::require_rank4(input, "batch_norm");
  const auto& x = input.value();
  const std::size_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3), n = B * HW;
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C} || state.running_mean.shape() != Shape{C} ||
      state.running_var.shape() != Shape{C})
    throw InvalidInput("batch_norm: parameter shapes do not match " + std::to_string(C) + " channels");
  if (n == 0) throw InvalidInput("batch_norm: empty input");

  std::vector<T> mean(C), inv_std(C);
  if (mode == Mode::train) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < HW; ++i) s += x[(b * C + c) * HW + i];
      const double m = s / double(n);
      double sq = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < HW; ++i) {
          const double d = x[(b * C + c) * HW + i] - m;
          sq += d * d;
        }
      const double var = sq / double(n);
      mean[c] = T(m);
      inv_std[c] = T(1.0 / std::sqrt(var + double(eps)));
      state.running_mean[c] = (T(1) - momentum) * state.running_mean[c] + momentum * T(m);
      state.running_var[c] = (T(1) - momentum) * state.running_var[c] + momentum * T(var);
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = T(1) / std::sqrt(state.running_var[c] + eps);
    }
  }

  Tensor<T> xhat(x.shape()), out(x.shape());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < HW; ++i) {
        const std::size_t o = (b * C + c) * HW + i;
        xhat[o] = (x[o] - mean[c]) * inv_std[c];
        out[o] = gamma.value()[c] * xhat[o] + beta.value()[c];
      }

  const std::size_t ix = input.id(), ig = gamma.id(), ibt = beta.id();
  const bool train = mode == Mode::train;
  return tape.record("batch_norm", std::move(out), {input, gamma, beta},
                     [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t, const Tensor<T>& g) {
                       const auto& gm = t.value(ig);
                       for (std::size_t c = 0; c < C; ++c) {
                         double sg = 0.0, sgx = 0.0;
                         for (std::size_t b = 0; b < B; ++b)
                           for (std::size_t i = 0; i < HW; ++i) {
                             const std::size_t o = (b * C + c) * HW + i;
                             sg += g[o];
                             sgx += double(g[o]) * xhat[o];
                           }
                         if (t.requires_grad(ig)) t.grad_buffer(ig)[c] += T(sgx);
                         if (t.requires_grad(ibt)) t.grad_buffer(ibt)[c] += T(sg);
                         if (!t.requires_grad(ix)) continue;
                         auto& gx = t.grad_buffer(ix);
                         const T k = gm[c] * inv_std[c];
                         const T mg = T(sg / double(n)), mgx = T(sgx / double(n));
                         for (std::size_t b = 0; b < B; ++b)
                           for (std::size_t i = 0; i < HW; ++i) {
                             const std::size_t o = (b * C + c) * HW + i;
                             gx[o] += train ? k * (g[o] - mg - xhat[o] * mgx) : k * g[o];
                           }
                       }
                     });
}

// ------------------------------------------------------------------- sampling

/// Bilinear sampling of image [B,C,H,W] at absolute pixel positions coords [B,2,Ho,Wo]
/// (channel 0 = x/column, channel 1 = y/row). Positions are clamped to the image, and
/// the coordinate gradient is zero wherever clamping is active.
template <typename T>
Var<T> bilinear_sample(const Var<T>& image, const Var<T>& coords) {
  Tape<T>& tape = detail::tape_of(image, coords);
  detail::require_rank4(image, "bilinear_sample");
  detail::require_rank4(coords, "bilinear_sample coords");
  const auto& img = image.value();
  const auto& crd = coords.value();
  const std::size_t B = img.dim(0), C = img.dim(1), H = img.dim(2), W = img.dim(3);
  if (crd.dim(0) != B || crd.dim(1) != 2)
    throw InvalidInput("bilinear_sample: coords " + shape_str(crd.shape()) + " incompatible with image " +
                       shape_str(img.shape()));
  if (H == 0 || W == 0) throw InvalidInput("bilinear_sample: empty image");
  const std::size_t Ho = crd.dim(2), Wo = crd.dim(3);

  struct Tap {
    std::size_t x0, x1, y0, y1;
    T wx, wy;
    bool clamp_x, clamp_y;
  };
  auto tap = [H, W](T px, T py) {
    Tap s{};
    const T maxx = T(W - 1), maxy = T(H - 1);
    s.clamp_x = !(px >= T(0) && px <= maxx);
    s.clamp_y = !(py >= T(0) && py <= maxy);
    const T cx = std::clamp(px, T(0), maxx), cy = std::clamp(py, T(0), maxy);
    s.x0 = std::min(static_cast<std::size_t>(std::floor(cx)), W - 1);
    s.y0 = std::min(static_cast<std::size_t>(std::floor(cy)), H - 1);
    s.x1 = std::min(s.x0 + 1, W - 1);
    s.y1 = std::min(s.y0 + 1, H - 1);
    s.wx = cx - T(s.x0);
    s.wy = cy - T(s.y0);
    return s;
  };

  Tensor<T> out(Shape{B, C, Ho, Wo});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t y = 0; y < Ho; ++y)
      for (std::size_t x = 0; x < Wo; ++x) {
        const Tap s = tap(crd.at(b, 0, y, x), crd.at(b, 1, y, x));
        for (std::size_t c = 0; c < C; ++c) {
          out.at(b, c, y, x) = (T(1) - s.wx) * (T(1) - s.wy) * img.at(b, c, s.y0, s.x0) +
                               s.wx * (T(1) - s.wy) * img.at(b, c, s.y0, s.x1) +
                               (T(1) - s.wx) * s.wy * img.at(b, c, s.y1, s.x0) +
                               s.wx * s.wy * img.at(b, c, s.y1, s.x1);
        }
      }

  const std::size_t ii = image.id(), ic = coords.id();
  return tape.record("bilinear_sample", std::move(out), {image, coords},
                     [=](Tape<T>& t, const Tensor<T>& g) {
                       const auto& img = t.value(ii);
                       const auto& crd = t.value(ic);
                       const bool gi = t.requires_grad(ii), gc = t.requires_grad(ic);
                       Tensor<T>* gimg = gi ? &t.grad_buffer(ii) : nullptr;
                       Tensor<T>* gcrd = gc ? &t.grad_buffer(ic) : nullptr;
                       for (std::size_t b = 0; b < B; ++b)
                         for (std::size_t y = 0; y < Ho; ++y)
                           for (std::size_t x = 0; x < Wo; ++x) {
                             const Tap s = tap(crd.at(b, 0, y, x), crd.at(b, 1, y, x));
                             T dx = T(0), dy = T(0);
                             for (std::size_t c = 0; c < C; ++c) {
                               const T go = g.at(b, c, y, x);
                               const T i00 = img.at(b, c, s.y0, s.x0), i01 = img.at(b, c, s.y0, s.x1);
                               const T i10 = img.at(b, c, s.y1, s.x0), i11 = img.at(b, c, s.y1, s.x1);
                               if (gi) {
                                 gimg->at(b, c, s.y0, s.x0) += go * (T(1) - s.wx) * (T(1) - s.wy);
                                 gimg->at(b, c, s.y0, s.x1) += go * s.wx * (T(1) - s.wy);
                                 gimg->at(b, c, s.y1, s.x0) += go * (T(1) - s.wx) * s.wy;
                                 gimg->at(b, c, s.y1, s.x1) += go * s.wx * s.wy;
                               }
                               dx += go * ((T(1) - s.wy) * (i01 - i00) + s.wy * (i11 - i10));
                               dy += go * ((T(1) - s.wx) * (i10 - i00) + s.wx * (i11 - i01));
                             }
                             if (gc) {
                               if (!s.clamp_x) gcrd->at(b, 0, y, x) += dx;
                               if (!s.clamp_y) gcrd->at(b, 1, y, x) += dy;
                             }
                           }
                     });
}

/// Absolute sampling positions (x + u, y + v) for a flow [B,2,H,W].
template <typename T>
Var<T> flow_to_coords(const Var<T>& flow) {
  detail::require_rank4(flow, "flow_to_coords");
  const auto& f = flow.value();
  if (f.dim(1) != 2) throw InvalidInput("flow_to_coords: flow must have 2 channels");
  Tensor<T> grid(f.shape());
  for (std::size_t b = 0; b < f.dim(0); ++b)
    for (std::size_t y = 0; y < f.dim(2); ++y)
      for (std::size_t x = 0; x < f.dim(3); ++x) {
        grid.at(b, 0, y, x) = T(x);
        grid.at(b, 1, y, x) = T(y);
      }
  return add(flow.tape()->constant(std::move(grid), "pixel_grid"), flow);
}

}  // namespace fusionflow
