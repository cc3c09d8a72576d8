#pragma once

// Assembly of training/evaluation samples from a frame sequence and its event stream.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "fusionflow/error.hpp"
#include "fusionflow/events.hpp"
#include "fusionflow/image.hpp"
#include "fusionflow/train.hpp"

namespace fusionflow {

/// Indices of `count` frames spread evenly over [a, b], always including both ends
/// (only `a` when count is 1).
inline std::vector<std::size_t> window_frame_indices(std::size_t a, std::size_t b, std::size_t count) {
  if (count == 0) throw InvalidInput("frame_channels must be >= 1");
  if (b <= a) throw InvalidInput("window end frame must follow its start frame");
  if (count == 1) return {a};
  std::vector<std::size_t> idx;
  for (std::size_t j = 0; j < count; ++j)
    idx.push_back(a + static_cast<std::size_t>(std::lround(double(j) * double(b - a) / double(count - 1))));
  return idx;
}

/// Sample for the window between frames a and b: events in [t_a, t_b] discretized into
/// n_steps per half, frame_channels analog input frames, and the summed per-interval flow.
inline Sample make_window_sample(const FrameSequence& frames, const EventStream& events, std::size_t a, std::size_t b,
                                 std::size_t n_steps, std::size_t frame_channels,
                                 const std::vector<FlowField>* interval_flows = nullptr, std::string name = {}) {
  frames.validate();
  if (b >= frames.frames.size()) throw InvalidInput("window end frame out of range");
  Sample s;
  s.name = std::move(name);
  const EventStream window = slice_stream(events, frames.timestamps[a], frames.timestamps[b]);
  s.volume = discretize(window, n_steps);
  for (std::size_t i : window_frame_indices(a, b, frame_channels)) s.frames.push_back(frames.frames[i]);
  s.first = frames.frames[a];
  s.last = frames.frames[b];
  if (interval_flows) {
    if (interval_flows->size() + 1 < frames.frames.size()) throw InvalidInput("missing per-interval flow fields");
    FlowField g((*interval_flows)[a].width, (*interval_flows)[a].height);
    for (std::size_t k = a; k < b; ++k)
      for (std::size_t i = 0; i < g.u.size(); ++i) {
        g.u[i] += (*interval_flows)[k].u[i];
        g.v[i] += (*interval_flows)[k].v[i];
      }
    s.gt = std::move(g);
  }
  return s;
}

/// Translating-texture sample spanning `dt` frame intervals (frame 0 to frame dt).
inline Sample synthetic_sample(std::size_t size, double motion_x, double motion_y, std::size_t dt, std::size_t n_steps,
                               std::uint64_t seed, double theta = 0.15, std::size_t frame_channels = 2) {
  SceneSpec spec;
  spec.width = spec.height = size;
  spec.motion_x = motion_x;
  spec.motion_y = motion_y;
  spec.num_frames = dt + 1;
  spec.theta = theta;
  const std::size_t margin = static_cast<std::size_t>(std::ceil(double(dt) * std::max(std::abs(motion_x), std::abs(motion_y)))) + 8;
  spec.texture = make_texture(size + margin, size + margin, seed);
  const SyntheticSequence seq = synth_sequence(spec);
  const EventStream ev = generate_events(seq.frames, theta);
  return make_window_sample(seq.frames, ev, 0, dt, n_steps, frame_channels, &seq.flows, "synthetic");
}

}  // namespace fusionflow
