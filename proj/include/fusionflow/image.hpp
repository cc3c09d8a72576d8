#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "fusionflow/error.hpp"
#include "fusionflow/tensor.hpp"

namespace fusionflow {

/// Grayscale image, row-major, intensities nominally in [0, 1].
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), pixels(w * h, fill) {}

  double& operator()(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  double operator()(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Dense per-pixel displacement in pixels.
struct FlowField {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> u;
  std::vector<double> v;

  FlowField() = default;
  FlowField(std::size_t w, std::size_t h, double u0 = 0.0, double v0 = 0.0)
      : width(w), height(h), u(w * h, u0), v(w * h, v0) {}

  bool all_finite() const {
    for (std::size_t i = 0; i < u.size(); ++i)
      if (!std::isfinite(u[i]) || !std::isfinite(v[i])) return false;
    return true;
  }

  friend bool operator==(const FlowField&, const FlowField&) = default;
};

/// Copies batch item `b` of a [B,2,H,W] tensor into a FlowField.
template <typename T>
FlowField flow_from_tensor(const Tensor<T>& t, std::size_t b = 0) {
  require_rank(t, 4, "flow_from_tensor");
  if (t.dim(1) != 2) throw InvalidInput("flow tensor must have 2 channels");
  FlowField f(t.dim(3), t.dim(2));
  for (std::size_t y = 0; y < f.height; ++y)
    for (std::size_t x = 0; x < f.width; ++x) {
      f.u[y * f.width + x] = static_cast<double>(t.at(b, 0, y, x));
      f.v[y * f.width + x] = static_cast<double>(t.at(b, 1, y, x));
    }
  return f;
}

template <typename T>
Tensor<T> flow_to_tensor(const FlowField& f) {
  Tensor<T> t(Shape{1, 2, f.height, f.width});
  for (std::size_t i = 0; i < f.u.size(); ++i) {
    t[i] = static_cast<T>(f.u[i]);
    t[f.u.size() + i] = static_cast<T>(f.v[i]);
  }
  return t;
}

}  // namespace fusionflow
