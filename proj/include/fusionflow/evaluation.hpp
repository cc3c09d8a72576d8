#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "fusionflow/error.hpp"
#include "fusionflow/events.hpp"
#include "fusionflow/image.hpp"

namespace fusionflow {

/// Raised when an AEE is requested over a mask with no active pixels.
class EmptyMaskError : public InvalidInput {
public:
  EmptyMaskError() : InvalidInput("evaluation mask has no active pixels") {}
};

struct EvalMask {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> active;
  std::size_t m = 0;  // popcount(active)

  static EvalMask full(std::size_t w, std::size_t h) { return EvalMask{w, h, std::vector<std::uint8_t>(w * h, 1), w * h}; }
};

inline EvalMask event_mask(const SpikeVolume& vol) {
  EvalMask mask{vol.width, vol.height, std::vector<std::uint8_t>(vol.width * vol.height, 0), 0};
  const std::size_t plane = vol.width * vol.height;
  for (std::size_t s = 0; s < vol.steps * SpikeVolume::channels; ++s)
    for (std::size_t i = 0; i < plane; ++i) mask.active[i] |= vol.data[s * plane + i];
  mask.m = static_cast<std::size_t>(std::count(mask.active.begin(), mask.active.end(), std::uint8_t{1}));
  return mask;
}

/// Mean end-point error over the active pixels of `mask`.
inline double aee(const FlowField& estim, const FlowField& gt, const EvalMask& mask) {
  if (estim.width != gt.width || estim.height != gt.height || mask.width != gt.width || mask.height != gt.height)
    throw InvalidInput("aee: flow and mask sizes differ");
  if (!estim.all_finite() || !gt.all_finite()) throw InvalidInput("aee: non-finite flow values");
  if (mask.m == 0) throw EmptyMaskError();
  double acc = 0.0;
  for (std::size_t i = 0; i < mask.active.size(); ++i)
    if (mask.active[i]) acc += std::hypot(estim.u[i] - gt.u[i], estim.v[i] - gt.v[i]);
  return acc / double(mask.m);
}

/// AEE over the event mask, or nullopt when the window has no events.
inline std::optional<double> aee_event(const FlowField& estim, const FlowField& gt, const SpikeVolume& vol) {
  const EvalMask mask = event_mask(vol);
  if (mask.m == 0) return std::nullopt;
  return aee(estim, gt, mask);
}

struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> data;  // row-major RGB
};

/// Colour-wheel rendering: hue = direction atan2(v, u), saturation = magnitude / max_mag
/// (clamped to 1), full value. Zero flow is white. Without max_mag the field maximum is used.
inline RgbImage flow_to_color(const FlowField& f, std::optional<double> max_mag = std::nullopt) {
  double norm = 0.0;
  if (max_mag) {
    if (!(*max_mag > 0.0)) throw InvalidInput("flow_to_color: max_mag must be > 0");
    norm = *max_mag;
  } else {
    for (std::size_t i = 0; i < f.u.size(); ++i) norm = std::max(norm, std::hypot(f.u[i], f.v[i]));
  }
  RgbImage img{f.width, f.height, std::vector<std::uint8_t>(f.width * f.height * 3, 255)};
  if (norm == 0.0) return img;
  constexpr double kPi = 3.14159265358979323846;
  for (std::size_t i = 0; i < f.u.size(); ++i) {
    const double sat = std::min(1.0, std::hypot(f.u[i], f.v[i]) / norm);
    double hue = std::atan2(f.v[i], f.u[i]) / (2 * kPi);
    if (hue < 0) hue += 1.0;
    const double h6 = hue * 6.0;
    const int sector = static_cast<int>(std::floor(h6)) % 6;
    const double frac = h6 - std::floor(h6);
    const double p = 1.0 - sat, q = 1.0 - sat * frac, t = 1.0 - sat * (1.0 - frac);
    double r = 1, g = 1, b = 1;
    switch (sector) {
      case 0: r = 1; g = t; b = p; break;
      case 1: r = q; g = 1; b = p; break;
      case 2: r = p; g = 1; b = t; break;
      case 3: r = p; g = q; b = 1; break;
      case 4: r = t; g = p; b = 1; break;
      default: r = 1; g = p; b = q; break;
    }
    img.data[3 * i + 0] = static_cast<std::uint8_t>(std::lround(r * 255.0));
    img.data[3 * i + 1] = static_cast<std::uint8_t>(std::lround(g * 255.0));
    img.data[3 * i + 2] = static_cast<std::uint8_t>(std::lround(b * 255.0));
  }
  return img;
}

}  // namespace fusionflow
