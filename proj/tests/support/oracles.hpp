#pragma once

// Independent reference implementations used as test oracles. Everything here is
// written with plain nested loops in double precision and shares no code with the
// library kernels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <vector>

#include "fusionflow/autodiff.hpp"
#include "fusionflow/tensor.hpp"

namespace oracle {

using fusionflow::Shape;
using Tensor = fusionflow::Tensor<double>;

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = d(rng);
  return t;
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, std::size_t s, std::size_t p) {
  const std::size_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Cout = w.dim(0), k = w.dim(2);
  const std::size_t Ho = (H + 2 * p - k) / s + 1, Wo = (W + 2 * p - k) / s + 1;
  Tensor y(Shape{B, Cout, Ho, Wo});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t co = 0; co < Cout; ++co)
      for (std::size_t oy = 0; oy < Ho; ++oy)
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          double acc = bias ? (*bias)[co] : 0.0;
          for (std::size_t ci = 0; ci < Cin; ++ci)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long iy = long(oy * s + ky) - long(p), ix = long(ox * s + kx) - long(p);
                if (iy < 0 || ix < 0 || iy >= long(H) || ix >= long(W)) continue;
                acc += x.at(b, ci, iy, ix) * w.at(co, ci, ky, kx);
              }
          y.at(b, co, oy, ox) = acc;
        }
  return y;
}

/// Scatter-add: every input pixel spreads weight * value onto the output grid.
inline Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor* bias, std::size_t s, std::size_t p) {
  const std::size_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Cout = w.dim(1), k = w.dim(2);
  const std::size_t Ho = (H - 1) * s + k - 2 * p, Wo = (W - 1) * s + k - 2 * p;
  Tensor y(Shape{B, Cout, Ho, Wo});
  for (std::size_t b = 0; b < B; ++b) {
    if (bias)
      for (std::size_t co = 0; co < Cout; ++co)
        for (std::size_t i = 0; i < Ho * Wo; ++i) y[(b * Cout + co) * Ho * Wo + i] = (*bias)[co];
    for (std::size_t ci = 0; ci < Cin; ++ci)
      for (std::size_t iy = 0; iy < H; ++iy)
        for (std::size_t ix = 0; ix < W; ++ix)
          for (std::size_t co = 0; co < Cout; ++co)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long oy = long(iy * s + ky) - long(p), ox = long(ix * s + kx) - long(p);
                if (oy < 0 || ox < 0 || oy >= long(Ho) || ox >= long(Wo)) continue;
                y.at(b, co, oy, ox) += x.at(b, ci, iy, ix) * w.at(ci, co, ky, kx);
              }
  }
  return y;
}

/// Direct formula; `mean`/`var` of size C are used when given, otherwise batch statistics.
inline Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                         const Tensor* mean = nullptr, const Tensor* var = nullptr) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor y(x.shape());
  for (std::size_t c = 0; c < C; ++c) {
    double m, v;
    if (mean) {
      m = (*mean)[c];
      v = (*var)[c];
    } else {
      double s = 0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < H; ++i)
          for (std::size_t j = 0; j < W; ++j) s += x.at(b, c, i, j);
      m = s / double(B * H * W);
      double q = 0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < H; ++i)
          for (std::size_t j = 0; j < W; ++j) q += (x.at(b, c, i, j) - m) * (x.at(b, c, i, j) - m);
      v = q / double(B * H * W);
    }
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j)
          y.at(b, c, i, j) = gamma[c] * (x.at(b, c, i, j) - m) / std::sqrt(v + eps) + beta[c];
  }
  return y;
}

/// Bilinear lookup with clamped coordinates, one sample at a time.
inline double bilinear_at(const Tensor& img, std::size_t b, std::size_t c, double x, double y) {
  const double W = double(img.dim(3)), H = double(img.dim(2));
  x = std::min(std::max(x, 0.0), W - 1);
  y = std::min(std::max(y, 0.0), H - 1);
  const double fx = std::floor(x), fy = std::floor(y);
  auto px = [&](double yy, double xx) {
    const auto iy = std::size_t(std::min(yy, H - 1)), ix = std::size_t(std::min(xx, W - 1));
    return img.at(b, c, iy, ix);
  };
  const double ax = x - fx, ay = y - fy;
  return (1 - ax) * (1 - ay) * px(fy, fx) + ax * (1 - ay) * px(fy, fx + 1) + (1 - ax) * ay * px(fy + 1, fx) +
         ax * ay * px(fy + 1, fx + 1);
}

inline Tensor bilinear_sample(const Tensor& img, const Tensor& coords) {
  const std::size_t B = img.dim(0), C = img.dim(1), Ho = coords.dim(2), Wo = coords.dim(3);
  Tensor y(Shape{B, C, Ho, Wo});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j)
          y.at(b, c, i, j) = bilinear_at(img, b, c, coords.at(b, 0, i, j), coords.at(b, 1, i, j));
  return y;
}

/// Relative difference with an absolute floor so that values near zero are compared
/// on an absolute scale.
inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_rel_err(const Tensor& a, const Tensor& b, double floor = 1e-8) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, rel_err(a[i], b[i], floor));
  return m;
}

/// Scalar-valued function of a list of leaf tensors, built on a fresh tape.
using ScalarFn = std::function<fusionflow::Var<double>(fusionflow::Tape<double>&,
                                                        const std::vector<fusionflow::Var<double>>&)>;

/// Maximum relative error between tape gradients and central differences over every
/// element of every input.
inline double gradcheck(const ScalarFn& f, std::vector<Tensor> inputs, double h = 1e-6, double floor = 1e-6) {
  using namespace fusionflow;
  std::vector<Tensor> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (auto& t : inputs) vars.push_back(tape.variable(t));
    tape.backward(f(tape, vars));
    for (auto& v : vars) analytic.push_back(tape.grad(v));
  }
  auto eval = [&] {
    Tape<double> tape(false);
    std::vector<Var<double>> vars;
    for (auto& t : inputs) vars.push_back(tape.constant(t));
    return f(tape, vars).value().item();
  };
  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k)
    for (std::size_t i = 0; i < inputs[k].numel(); ++i) {
      const double x0 = inputs[k][i];
      inputs[k][i] = x0 + h;
      const double fp = eval();
      inputs[k][i] = x0 - h;
      const double fm = eval();
      inputs[k][i] = x0;
      worst = std::max(worst, rel_err(analytic[k][i], (fp - fm) / (2 * h), floor));
    }
  return worst;
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace oracle
