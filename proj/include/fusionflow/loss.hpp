#pragma once

// Unsupervised flow objective: Charbonnier photometric error between the first frame
// and the flow-warped second frame, plus an L1 neighbour smoothness penalty, summed
// over the four prediction scales.

#include <array>
#include <cstddef>

#include "fusionflow/error.hpp"
#include "fusionflow/network.hpp"
#include "fusionflow/ops.hpp"

namespace fusionflow {

struct LossConfig {
  double lambda = 0.0003;
  double r = 0.45;
  double eta = 1e-3;
  std::array<double, 4> scale_weights{1.0, 1.0, 1.0, 1.0};  // coarse to fine

  void validate() const {
    if (!(lambda >= 0.0)) throw InvalidInput("lambda must be >= 0");
    if (!(eta > 0.0)) throw InvalidInput("eta must be > 0");
    if (!(r > 0.0 && r < 1.0)) throw InvalidInput("r must be in (0, 1)");
    for (double w : scale_weights)
      if (!(w >= 0.0)) throw InvalidInput("scale weights must be >= 0");
    if (!(scale_weights[3] > 0.0)) throw InvalidInput("finest scale weight must be > 0");
  }
};

/// Sum over pixels of rho(I_t - I_{t+dt}(x + u, y + v)). Images [B,1,H,W], flow [B,2,H,W].
template <typename T>
Var<T> photometric_loss(const Var<T>& i_t, const Var<T>& i_tdt, const Var<T>& flow, T eta = T(1e-3),
                        T r = T(0.45)) {
  if (i_t.shape() != i_tdt.shape()) throw InvalidInput("photometric_loss: frame shapes differ");
  const auto& fs = flow.shape();
  if (fs.size() != 4 || fs[1] != 2 || fs[0] != i_t.dim(0) || fs[2] != i_t.dim(2) || fs[3] != i_t.dim(3))
    throw InvalidInput("photometric_loss: flow " + shape_str(fs) + " does not match frames " + shape_str(i_t.shape()));
  Var<T> warped = bilinear_sample(i_tdt, flow_to_coords(flow));
  return sum(charbonnier(sub(i_t, warped), eta, r));
}

template <typename T>
Var<T> smoothness_loss(const Var<T>& flow) {
  const auto& fs = flow.shape();
  if (fs.size() != 4 || fs[2] < 2 || fs[3] < 2) throw InvalidInput("smoothness_loss: flow must be at least 2x2");
  return smoothness_l1(flow);
}

template <typename T>
struct LossTerms {
  Var<T> total;
  double photo = 0.0;   // weighted photometric part
  double smooth = 0.0;  // weighted smoothness part, before multiplying by lambda
};

/// Per scale s: average-pool the frames to that scale, add photo + lambda * smooth,
/// weight by scale_weights[s], and sum.
template <typename T>
LossTerms<T> total_loss(const MultiScaleFlow<T>& pred, const Var<T>& i_t, const Var<T>& i_tdt, const LossConfig& cfg) {
  cfg.validate();
  if (pred.flows.size() != 4) throw InvalidInput("total_loss: expected 4 flow scales");
  LossTerms<T> out;
  Var<T> acc;
  for (std::size_t s = 0; s < 4; ++s) {
    if (cfg.scale_weights[s] == 0.0) continue;
    const Var<T>& f = pred.flows[s];
    if (i_t.dim(2) % f.dim(2) || i_t.dim(2) / f.dim(2) != i_t.dim(3) / f.dim(3))
      throw InvalidInput("total_loss: flow scale " + shape_str(f.shape()) + " incompatible with frames");
    const std::size_t factor = i_t.dim(2) / f.dim(2);
    Var<T> a = factor == 1 ? i_t : avg_pool(i_t, factor);
    Var<T> b = factor == 1 ? i_tdt : avg_pool(i_tdt, factor);
    Var<T> photo = photometric_loss(a, b, f, T(cfg.eta), T(cfg.r));
    Var<T> smooth = smoothness_loss(f);
    out.photo += cfg.scale_weights[s] * double(photo.value().item());
    out.smooth += cfg.scale_weights[s] * double(smooth.value().item());
    Var<T> term = scale(add(photo, scale(smooth, T(cfg.lambda))), T(cfg.scale_weights[s]));
    acc = acc.valid() ? add(acc, term) : term;
  }
  out.total = acc;
  return out;
}

}  // namespace fusionflow
