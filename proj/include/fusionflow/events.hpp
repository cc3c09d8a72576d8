#pragma once

// Event streams: generation from intensity frames, discretisation into spike
// volumes, and synthetic translating-texture scenes with known flow.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "fusionflow/error.hpp"
#include "fusionflow/image.hpp"
#include "fusionflow/tensor.hpp"

namespace fusionflow {

struct Event {
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::uint64_t t = 0;  // microseconds
  std::int8_t p = 1;    // +1 ON, -1 OFF

  friend bool operator==(const Event&, const Event&) = default;
};

/// Output order of every generator: by time, then row, column, polarity.
inline bool event_order(const Event& a, const Event& b) {
  return std::tie(a.t, a.y, a.x, a.p) < std::tie(b.t, b.y, b.x, b.p);
}

struct EventStream {
  std::uint16_t width = 0;
  std::uint16_t height = 0;
  std::uint64_t t_start = 0;
  std::uint64_t t_end = 0;
  std::vector<Event> events;

  void validate() const {
    if (t_end < t_start) throw InvalidInput("event stream window ends before it starts");
    std::uint64_t last = t_start;
    for (std::size_t i = 0; i < events.size(); ++i) {
      const Event& e = events[i];
      if (e.x >= width || e.y >= height)
        throw InvalidInput("event " + std::to_string(i) + " at (" + std::to_string(e.x) + "," +
                           std::to_string(e.y) + ") outside " + std::to_string(width) + "x" +
                           std::to_string(height) + " sensor");
      if (e.p != 1 && e.p != -1) throw InvalidInput("event " + std::to_string(i) + " has polarity " + std::to_string(e.p));
      if (e.t < t_start || e.t > t_end)
        throw InvalidInput("event " + std::to_string(i) + " at t=" + std::to_string(e.t) + " outside window [" +
                           std::to_string(t_start) + ", " + std::to_string(t_end) + "]");
      if (e.t < last) throw InvalidInput("event timestamps are not non-decreasing at index " + std::to_string(i));
      last = e.t;
    }
  }

  friend bool operator==(const EventStream&, const EventStream&) = default;
};

/// Events of `stream` with t in [t0, t1], as a stream over that window.
inline EventStream slice_stream(const EventStream& stream, std::uint64_t t0, std::uint64_t t1) {
  if (t1 < t0) throw InvalidInput("slice_stream: t1 < t0");
  EventStream out{stream.width, stream.height, t0, t1, {}};
  auto lo = std::lower_bound(stream.events.begin(), stream.events.end(), t0,
                             [](const Event& e, std::uint64_t t) { return e.t < t; });
  for (auto it = lo; it != stream.events.end() && it->t <= t1; ++it) out.events.push_back(*it);
  return out;
}

/// Binary event frames [steps, 4, H, W]; channels are former-ON, former-OFF,
/// latter-ON, latter-OFF.
struct SpikeVolume {
  static constexpr std::size_t channels = 4;
  std::size_t steps = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> data;

  SpikeVolume() = default;
  SpikeVolume(std::size_t n, std::size_t h, std::size_t w) : steps(n), height(h), width(w), data(n * channels * h * w, 0) {}

  std::size_t index(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return ((n * channels + c) * height + y) * width + x;
  }
  std::uint8_t& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) { return data[index(n, c, y, x)]; }
  std::uint8_t at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const { return data[index(n, c, y, x)]; }

  std::size_t count() const { return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1})); }

  template <typename T>
  Tensor<T> to_tensor() const {
    Tensor<T> t(Shape{steps, channels, height, width});
    for (std::size_t i = 0; i < data.size(); ++i) t[i] = static_cast<T>(data[i]);
    return t;
  }

  friend bool operator==(const SpikeVolume&, const SpikeVolume&) = default;
};

struct FrameSequence {
  std::vector<Image> frames;
  std::vector<std::uint64_t> timestamps;

  void validate() const {
    if (frames.size() != timestamps.size()) throw InvalidInput("frame and timestamp counts differ");
    for (std::size_t i = 0; i < frames.size(); ++i) {
      if (frames[i].width != frames[0].width || frames[i].height != frames[0].height)
        throw InvalidInput("frame " + std::to_string(i) + " has a different size");
      if (frames[i].pixels.size() != frames[i].width * frames[i].height)
        throw InvalidInput("frame " + std::to_string(i) + " has an inconsistent pixel buffer");
      if (i && timestamps[i] <= timestamps[i - 1]) throw InvalidInput("frame timestamps must be strictly increasing");
    }
  }
};

inline constexpr double kIntensityFloor = 1e-3;
inline constexpr std::size_t kDefaultSubsteps = 16;

/// Event generation from log-intensity frames (one row-major H*W vector per frame).
///
/// Each pixel keeps a reference level initialised from the first frame. Between
/// consecutive frames the log intensity is interpolated linearly over `substeps`
/// sub-intervals; each time it sits at least `theta` above (below) the reference an
/// ON (OFF) event is emitted at that sub-step and the reference moves by +theta
/// (-theta), repeating for multiple threshold crossings.
inline EventStream generate_events_log(const std::vector<std::vector<double>>& log_frames,
                                       const std::vector<std::uint64_t>& timestamps, std::size_t width,
                                       std::size_t height, double theta, std::size_t substeps = kDefaultSubsteps) {
  if (log_frames.size() < 2) throw InvalidInput("event generation needs at least 2 frames");
  if (!(theta > 0.0)) throw InvalidInput("contrast threshold theta must be > 0");
  if (substeps == 0) throw InvalidInput("substeps must be >= 1");
  if (timestamps.size() != log_frames.size()) throw InvalidInput("frame and timestamp counts differ");
  if (width > 65535 || height > 65535) throw InvalidInput("sensor larger than 65535 pixels per side");
  for (std::size_t k = 1; k < timestamps.size(); ++k)
    if (timestamps[k] <= timestamps[k - 1]) throw InvalidInput("frame timestamps must be strictly increasing");
  const std::size_t npix = width * height;
  for (const auto& f : log_frames)
    if (f.size() != npix) throw InvalidInput("log frame size does not match sensor");

  EventStream out{static_cast<std::uint16_t>(width), static_cast<std::uint16_t>(height), timestamps.front(),
                  timestamps.back(), {}};
  for (std::size_t i = 0; i < npix; ++i) {
    const auto x = static_cast<std::uint16_t>(i % width), y = static_cast<std::uint16_t>(i / width);
    double ref = log_frames[0][i];
    for (std::size_t k = 0; k + 1 < log_frames.size(); ++k) {
      const double a = log_frames[k][i], b = log_frames[k + 1][i];
      const std::uint64_t t0 = timestamps[k], dt = timestamps[k + 1] - t0;
      for (std::size_t s = 1; s <= substeps; ++s) {
        const double level = a + (b - a) * (static_cast<double>(s) / static_cast<double>(substeps));
        const std::uint64_t t = t0 + dt * s / substeps;
        while (level - ref >= theta) {
          out.events.push_back({x, y, t, 1});
          ref += theta;
        }
        while (ref - level >= theta) {
          out.events.push_back({x, y, t, -1});
          ref -= theta;
        }
      }
    }
  }
  std::sort(out.events.begin(), out.events.end(), event_order);
  return out;
}

inline std::vector<double> log_intensity(const Image& img) {
  std::vector<double> l(img.pixels.size());
  for (std::size_t i = 0; i < l.size(); ++i) l[i] = std::log(std::max(img.pixels[i], kIntensityFloor));
  return l;
}

inline EventStream generate_events(const FrameSequence& frames, double theta, std::size_t substeps = kDefaultSubsteps) {
  if (frames.frames.size() < 2) throw InvalidInput("event generation needs at least 2 frames");
  if (!(theta > 0.0)) throw InvalidInput("contrast threshold theta must be > 0");
  frames.validate();
  std::vector<std::vector<double>> logs;
  logs.reserve(frames.frames.size());
  for (const auto& f : frames.frames) logs.push_back(log_intensity(f));
  return generate_events_log(logs, frames.timestamps, frames.frames[0].width, frames.frames[0].height, theta,
                             substeps);
}

/// (group, bin) of an event at time t in window [t0, t1] with `steps` bins per group.
/// Group 0 is [t0, tmid), group 1 is [tmid, t1]; bins are half-open except the last.
inline std::pair<std::size_t, std::size_t> event_bin(std::uint64_t t, std::uint64_t t0, std::uint64_t t1,
                                                     std::size_t steps) {
  using u128 = unsigned __int128;
  const u128 len = t1 - t0;         // window length
  const u128 off2 = u128(t - t0) * 2;  // twice the offset, so tmid is at `len`
  if (off2 < len) return {0, static_cast<std::size_t>(off2 * steps / len)};
  const auto bin = static_cast<std::size_t>((off2 - len) * steps / len);
  return {1, std::min(bin, steps - 1)};
}

inline SpikeVolume discretize(const EventStream& stream, std::size_t steps) {
  if (steps == 0) throw InvalidInput("discretize: steps per group must be >= 1");
  if (stream.t_end <= stream.t_start) throw InvalidInput("discretize: empty time window");
  SpikeVolume vol(steps, stream.height, stream.width);
  for (std::size_t i = 0; i < stream.events.size(); ++i) {
    const Event& e = stream.events[i];
    if (e.t < stream.t_start || e.t > stream.t_end)
      throw InvalidInput("discretize: event " + std::to_string(i) + " outside the window");
    if (e.x >= stream.width || e.y >= stream.height)
      throw InvalidInput("discretize: event " + std::to_string(i) + " outside the sensor");
    const auto [group, bin] = event_bin(e.t, stream.t_start, stream.t_end, steps);
    const std::size_t channel = group * 2 + (e.p > 0 ? 0 : 1);
    vol.at(bin, channel, e.y, e.x) = 1;
  }
  return vol;
}

// ------------------------------------------------------------ synthetic scenes

struct SceneSpec {
  Image texture;
  double motion_x = 0.0;  // pixels per frame
  double motion_y = 0.0;
  std::size_t num_frames = 2;
  std::uint64_t frame_interval_us = 10000;
  double theta = 0.15;
  std::size_t width = 64;  // output crop
  std::size_t height = 64;

  void validate() const {
    if (num_frames < 2) throw InvalidInput("scene needs at least 2 frames");
    if (!(theta > 0.0)) throw InvalidInput("scene theta must be > 0");
    if (frame_interval_us == 0) throw InvalidInput("frame interval must be > 0");
    if (width == 0 || height == 0) throw InvalidInput("scene output size must be positive");
    if (texture.width <= width || texture.height <= height)
      throw InvalidInput("texture must be larger than the output crop");
  }
};

struct SyntheticSequence {
  FrameSequence frames;
  std::vector<FlowField> flows;  // one per consecutive frame pair
};

inline double sample_bilinear(const Image& img, double x, double y) {
  const auto x0 = static_cast<std::size_t>(std::floor(x)), y0 = static_cast<std::size_t>(std::floor(y));
  const std::size_t x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
  const double wx = x - double(x0), wy = y - double(y0);
  return (1 - wx) * (1 - wy) * img(y0, x0) + wx * (1 - wy) * img(y0, x1) + (1 - wx) * wy * img(y1, x0) +
         wx * wy * img(y1, x1);
}

/// Frame k samples the texture at (ox + x - k*mx, oy + y - k*my), so content moves by
/// (mx, my) pixels per frame and the flow between consecutive frames is that constant.
inline SyntheticSequence synth_sequence(const SceneSpec& spec) {
  spec.validate();
  const double span = double(spec.num_frames - 1);
  const double ox = std::floor((double(spec.texture.width - spec.width) + span * spec.motion_x) / 2.0);
  const double oy = std::floor((double(spec.texture.height - spec.height) + span * spec.motion_y) / 2.0);
  const double max_x = double(spec.texture.width - spec.width), max_y = double(spec.texture.height - spec.height);
  for (double k : {0.0, span}) {
    const double sx = ox - k * spec.motion_x, sy = oy - k * spec.motion_y;
    if (sx < 0.0 || sx > max_x || sy < 0.0 || sy > max_y)
      throw InvalidInput("scene translation exceeds the texture margin");
  }

  SyntheticSequence seq;
  for (std::size_t k = 0; k < spec.num_frames; ++k) {
    Image f(spec.width, spec.height);
    const double sx = ox - double(k) * spec.motion_x, sy = oy - double(k) * spec.motion_y;
    for (std::size_t y = 0; y < spec.height; ++y)
      for (std::size_t x = 0; x < spec.width; ++x) f(y, x) = sample_bilinear(spec.texture, sx + double(x), sy + double(y));
    seq.frames.frames.push_back(std::move(f));
    seq.frames.timestamps.push_back(std::uint64_t(k) * spec.frame_interval_us);
  }
  for (std::size_t k = 0; k + 1 < spec.num_frames; ++k)
    seq.flows.emplace_back(spec.width, spec.height, spec.motion_x, spec.motion_y);
  return seq;
}

/// Smooth random texture in [0.1, 0.9]: a sum of random Gaussian blobs at several scales.
inline Image make_texture(std::size_t width, std::size_t height, std::uint64_t seed, std::size_t blobs = 0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(0.0, double(width)), uy(0.0, double(height)), amp(-1.0, 1.0);
  std::uniform_real_distribution<double> radius(1.5, std::max(2.0, double(std::min(width, height)) / 6.0));
  if (blobs == 0) blobs = std::max<std::size_t>(8, width * height / 40);
  Image img(width, height);
  for (std::size_t b = 0; b < blobs; ++b) {
    const double cx = ux(rng), cy = uy(rng), a = amp(rng), r = radius(rng);
    const double inv = 1.0 / (2.0 * r * r);
    const auto y_lo = static_cast<std::size_t>(std::max(0.0, cy - 4 * r));
    const auto y_hi = static_cast<std::size_t>(std::min(double(height), cy + 4 * r + 1));
    const auto x_lo = static_cast<std::size_t>(std::max(0.0, cx - 4 * r));
    const auto x_hi = static_cast<std::size_t>(std::min(double(width), cx + 4 * r + 1));
    for (std::size_t y = y_lo; y < y_hi; ++y)
      for (std::size_t x = x_lo; x < x_hi; ++x) {
        const double dx = double(x) - cx, dy = double(y) - cy;
        img(y, x) += a * std::exp(-(dx * dx + dy * dy) * inv);
      }
  }
  const auto [lo, hi] = std::minmax_element(img.pixels.begin(), img.pixels.end());
  const double mn = *lo, range = std::max(*hi - *lo, 1e-12);
  for (auto& p : img.pixels) p = 0.1 + 0.8 * (p - mn) / range;
  return img;
}

}  // namespace fusionflow
