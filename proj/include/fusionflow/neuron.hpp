#pragma once

// Activation functions: LeakyReLU for the analog path, and the signed / unsigned
// integrate-and-fire neurons for the spiking path. These are the plain-array
// versions; the tape nodes in ops.hpp call the same scalar rules.

#include <cstddef>
#include <string>

#include "fusionflow/error.hpp"
#include "fusionflow/tensor.hpp"

namespace fusionflow {

enum class NeuronModel { sif, if_ };

/// Thresholds of the signed integrate-and-fire neuron. The negative threshold is
/// stored as a positive magnitude.
struct SifConfig {
  double v_th_pos = 0.75;
  double v_th_neg_mag = 7.5;
  bool soft_reset = false;  // subtract the threshold instead of resetting to zero

  void validate() const {
    if (!(v_th_pos > 0.0)) throw InvalidInput("v_th_pos must be > 0");
    if (!(v_th_neg_mag > 0.0)) throw InvalidInput("v_th_neg_mag must be > 0");
  }
};

template <typename T>
constexpr T leaky_relu(T x, T alpha) noexcept {
  return x > T(0) ? x : alpha * x;
}

/// 1 for x > 0, alpha otherwise (alpha at exactly 0).
template <typename T>
constexpr T leaky_relu_grad(T x, T alpha) noexcept {
  return x > T(0) ? T(1) : alpha;
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T alpha) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = leaky_relu(x[i], alpha);
  return y;
}

/// Spike emitted by a SIF neuron at post-integration potential v. Strict inequalities.
template <typename T>
constexpr int sif_fire(T v, const SifConfig& cfg) noexcept {
  if (v > T(cfg.v_th_pos)) return 1;
  if (v < -T(cfg.v_th_neg_mag)) return -1;
  return 0;
}

template <typename T>
constexpr int if_fire(T v, double v_th_pos) noexcept {
  return v > T(v_th_pos) ? 1 : 0;
}

template <typename T>
constexpr T sif_surrogate(T v, const SifConfig& cfg) noexcept {
  if (v > T(cfg.v_th_pos)) return T(1) / T(cfg.v_th_pos);
  if (v < -T(cfg.v_th_neg_mag)) return T(1) / T(cfg.v_th_neg_mag);
  return T(0);
}

template <typename T>
constexpr T if_surrogate(T v, double v_th_pos) noexcept {
  return v > T(v_th_pos) ? T(1) / T(v_th_pos) : T(0);
}

/// Membrane potential after emitting `spike` from post-integration potential v.
template <typename T>
constexpr T reset_potential(T v, int spike, const SifConfig& cfg) noexcept {
  if (spike == 0) return v;
  if (!cfg.soft_reset) return T(0);
  return spike > 0 ? v - T(cfg.v_th_pos) : v + T(cfg.v_th_neg_mag);
}

template <typename T>
struct MembraneState {
  Tensor<T> v;

  MembraneState() = default;
  explicit MembraneState(Shape shape) : v(std::move(shape)) {}
  void reset() { v.fill(T(0)); }
};

namespace detail {
template <typename T>
void check_step_shapes(const MembraneState<T>& state, const Tensor<T>& input) {
  if (state.v.shape() != input.shape())
    throw InvalidInput("membrane shape " + shape_str(state.v.shape()) +
                       " does not match input shape " + shape_str(input.shape()));
}
}  // namespace detail

/// One SIF time-step: integrate, fire (+1/-1/0), reset. Returns the spikes.
template <typename T>
Tensor<T> sif_step(MembraneState<T>& state, const Tensor<T>& weighted_input, const SifConfig& cfg) {
  detail::check_step_shapes(state, weighted_input);
  Tensor<T> spikes(weighted_input.shape());
  for (std::size_t i = 0; i < spikes.numel(); ++i) {
    const T v = state.v[i] + weighted_input[i];
    const int s = sif_fire(v, cfg);
    spikes[i] = T(s);
    state.v[i] = reset_potential(v, s, cfg);
  }
  return spikes;
}

/// Surrogate gradient factor evaluated at the post-integration, pre-reset potential.
template <typename T>
Tensor<T> sif_surrogate(const Tensor<T>& v_after_integration, const SifConfig& cfg) {
  Tensor<T> g(v_after_integration.shape());
  for (std::size_t i = 0; i < g.numel(); ++i) g[i] = sif_surrogate(v_after_integration[i], cfg);
  return g;
}

/// Positive-threshold-only neuron; negative potentials are never reset.
template <typename T>
Tensor<T> if_step(MembraneState<T>& state, const Tensor<T>& weighted_input, double v_th_pos,
                  bool soft_reset = false) {
  detail::check_step_shapes(state, weighted_input);
  if (!(v_th_pos > 0.0)) throw InvalidInput("v_th_pos must be > 0");
  Tensor<T> spikes(weighted_input.shape());
  for (std::size_t i = 0; i < spikes.numel(); ++i) {
    const T v = state.v[i] + weighted_input[i];
    const int s = if_fire(v, v_th_pos);
    spikes[i] = T(s);
    state.v[i] = s ? (soft_reset ? v - T(v_th_pos) : T(0)) : v;
  }
  return spikes;
}

inline std::string to_string(NeuronModel m) { return m == NeuronModel::sif ? "sif" : "if"; }

inline NeuronModel neuron_model_from_string(const std::string& s) {
  if (s == "sif") return NeuronModel::sif;
  if (s == "if") return NeuronModel::if_;
  throw InvalidInput("unknown neuron model '" + s + "' (expected sif|if)");
}

}  // namespace fusionflow
