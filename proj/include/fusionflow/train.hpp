#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "fusionflow/error.hpp"
#include "fusionflow/evaluation.hpp"
#include "fusionflow/events.hpp"
#include "fusionflow/image.hpp"
#include "fusionflow/loss.hpp"
#include "fusionflow/network.hpp"

namespace fusionflow {

/// lr0 scaled by 0.7 at epochs 5, 10, 15, 20 and then every 10 epochs (30, 40, ...).
inline double lr_schedule(std::size_t epoch, double lr0) {
  std::size_t decays = std::min<std::size_t>(epoch / 5, 4);
  if (epoch >= 30) decays += (epoch - 20) / 10;
  return lr0 * std::pow(0.7, double(decays));
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
class Adam {
public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// One update of every parameter from its accumulated gradient.
  void step(const std::vector<Parameter<T>*>& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_)), bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (Parameter<T>* p : params) {
      auto& m = m_[p->name];
      auto& v = v_[p->name];
      if (m.numel() != p->numel()) m = Tensor<T>(p->value.shape());
      if (v.numel() != p->numel()) v = Tensor<T>(p->value.shape());
      for (std::size_t i = 0; i < p->numel(); ++i) {
        const double g = p->grad[i];
        m[i] = T(cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g);
        v[i] = T(cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g);
        const double mh = m[i] / bc1, vh = v[i] / bc2;
        p->value[i] = T(p->value[i] - lr * mh / (std::sqrt(vh) + cfg_.eps));
      }
    }
  }

  std::uint64_t steps() const { return t_; }
  void set_steps(std::uint64_t t) { t_ = t; }
  std::map<std::string, Tensor<T>>& first_moments() { return m_; }
  std::map<std::string, Tensor<T>>& second_moments() { return v_; }
  const std::map<std::string, Tensor<T>>& first_moments() const { return m_; }
  const std::map<std::string, Tensor<T>>& second_moments() const { return v_; }

private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::map<std::string, Tensor<T>> m_, v_;
};

struct TrainConfig {
  double lr0 = 5e-4;
  std::size_t epochs = 40;
  std::size_t batch_size = 8;
  std::size_t steps_per_epoch = 0;  // 0: one pass over the dataset
  std::size_t crop_size = 0;        // 0: no cropping
  double flip_prob = 0.5;
  std::uint64_t seed = 0;
  AdamConfig adam;

  void validate() const {
    if (!(lr0 >= 0.0)) throw InvalidInput("lr0 must be >= 0");
    if (batch_size == 0) throw InvalidInput("batch_size must be >= 1");
    if (crop_size % 16) throw InvalidInput("crop_size must be divisible by 16");
    if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw InvalidInput("flip_prob must be in [0, 1]");
  }
};

/// One training/evaluation example: the spike volume of a window, the frames fed to the
/// analog branch, the start/end frames of the window used by the photometric loss, and
/// optional ground truth.
struct Sample {
  std::string name;
  SpikeVolume volume;
  std::vector<Image> frames;
  Image first;
  Image last;
  std::optional<FlowField> gt;
};

namespace detail {

inline Image crop_flip(const Image& img, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h, bool fx, bool fy) {
  Image out(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      out(y, x) = img(y0 + (fy ? h - 1 - y : y), x0 + (fx ? w - 1 - x : x));
  return out;
}

}  // namespace detail

/// Crops every component of a sample to the same window and mirrors it. Horizontal
/// mirroring negates u, vertical mirroring negates v. Event polarities are unchanged.
inline Sample crop_and_flip(const Sample& s, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h, bool flip_x,
                            bool flip_y) {
  const std::size_t W = s.volume.width, H = s.volume.height;
  if (x0 + w > W || y0 + h > H) throw InvalidInput("crop window exceeds the sample");
  Sample out;
  out.name = s.name;
  out.volume = SpikeVolume(s.volume.steps, h, w);
  for (std::size_t n = 0; n < s.volume.steps; ++n)
    for (std::size_t c = 0; c < SpikeVolume::channels; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          out.volume.at(n, c, y, x) =
              s.volume.at(n, c, y0 + (flip_y ? h - 1 - y : y), x0 + (flip_x ? w - 1 - x : x));
  for (const Image& f : s.frames) out.frames.push_back(detail::crop_flip(f, x0, y0, w, h, flip_x, flip_y));
  out.first = detail::crop_flip(s.first, x0, y0, w, h, flip_x, flip_y);
  out.last = detail::crop_flip(s.last, x0, y0, w, h, flip_x, flip_y);
  if (s.gt) {
    FlowField g(w, h);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t src = (y0 + (flip_y ? h - 1 - y : y)) * W + x0 + (flip_x ? w - 1 - x : x);
        g.u[y * w + x] = flip_x ? -s.gt->u[src] : s.gt->u[src];
        g.v[y * w + x] = flip_y ? -s.gt->v[src] : s.gt->v[src];
      }
    out.gt = std::move(g);
  }
  return out;
}

/// Random crop of crop_size (the full sample when 0) and independent horizontal and
/// vertical flips, each with probability flip_prob.
inline Sample augment(const Sample& s, const TrainConfig& cfg, std::mt19937_64& rng) {
  const std::size_t W = s.volume.width, H = s.volume.height;
  const std::size_t cw = cfg.crop_size ? cfg.crop_size : W, ch = cfg.crop_size ? cfg.crop_size : H;
  if (cw > W || ch > H) throw InvalidInput("sample " + s.name + " is smaller than the crop size");
  std::uniform_int_distribution<std::size_t> dx(0, W - cw), dy(0, H - ch);
  std::bernoulli_distribution flip(cfg.flip_prob);
  const std::size_t x0 = dx(rng), y0 = dy(rng);
  const bool fx = flip(rng), fy = flip(rng);
  return crop_and_flip(s, x0, y0, cw, ch, fx, fy);
}

struct LogRow {
  std::size_t epoch = 0;
  std::size_t step = 0;  // global optimizer step, 1-based
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_photo = 0.0;
  double loss_smooth = 0.0;
  std::optional<double> aee_all;
  std::optional<double> aee_event;
};

inline void write_log_header(std::ostream& os) {
  os << "epoch,step,lr,loss_total,loss_photo,loss_smooth,aee_all,aee_event\n";
}

inline void write_log_row(std::ostream& os, const LogRow& r) {
  auto opt = [](const std::optional<double>& v) {
    if (!v) return std::string("n/a");
    char b[32];
    std::snprintf(b, sizeof b, "%.9g", *v);
    return std::string(b);
  };
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g,%.9g,%.9g,", r.epoch, r.step, r.lr, r.loss_total, r.loss_photo,
                r.loss_smooth);
  os << buf << opt(r.aee_all) << ',' << opt(r.aee_event) << '\n';
}

/// Batched model inputs for a list of samples.
template <typename T>
struct Batch {
  Tensor<T> volume;  // [N, B, 4, H, W]
  Tensor<T> frames;  // [B, frame_channels, H, W]
  Tensor<T> first;   // [B, 1, H, W]
  Tensor<T> last;    // [B, 1, H, W]
};

template <typename T>
Batch<T> make_batch(const std::vector<const Sample*>& samples) {
  std::vector<const SpikeVolume*> vols;
  std::vector<std::vector<const Image*>> frames, firsts, lasts;
  for (const Sample* s : samples) {
    vols.push_back(&s->volume);
    std::vector<const Image*> fr;
    for (const Image& f : s->frames) fr.push_back(&f);
    frames.push_back(fr);
    firsts.push_back({&s->first});
    lasts.push_back({&s->last});
  }
  return Batch<T>{stack_volumes<T>(vols), stack_frames<T>(frames), stack_frames<T>(firsts), stack_frames<T>(lasts)};
}

/// Finest-scale AEE over all pixels and over event pixels of one batch item.
template <typename T>
std::pair<double, std::optional<double>> sample_aee(const Tensor<T>& flow, std::size_t b, const Sample& s) {
  const FlowField est = flow_from_tensor(flow, b);
  const double all = aee(est, *s.gt, EvalMask::full(est.width, est.height));
  return {all, aee_event(est, *s.gt, s.volume)};
}

/// Saves / restores everything needed to continue training bit-exactly.
template <typename T>
struct TrainState {
  Adam<T> optimizer;
  std::size_t epoch = 0;  // next epoch to run
};

struct TrainCallbacks {
  std::function<void(const LogRow&)> on_step;
  std::function<void(std::size_t /*completed epochs*/)> on_epoch_end;
  std::function<bool(const LogRow&)> should_stop;
};

/// Raises a numerical error naming the first tensor on the tape that holds NaN/Inf.
template <typename T>
void check_finite(const Tape<T>& tape, Model<T>& m, double loss) {
  if (std::isfinite(loss)) {
    for (auto* p : m.parameters())
      if (!p->grad.all_finite()) throw NumericalError("non-finite gradient in parameter '" + p->name + "'");
    return;
  }
  const std::size_t bad = tape.first_non_finite();
  const std::string where = bad < tape.size() ? "'" + tape.node(bad).op + "' (node " + std::to_string(bad) + ")"
                                              : std::string("the loss reduction");
  throw NumericalError("non-finite loss; first non-finite tensor is " + where);
}

/// Minibatch training with the step schedule. Each epoch draws its shuffle and
/// augmentation from an RNG seeded by (seed, epoch), so resuming from a saved state
/// at an epoch boundary reproduces the same sequence of updates.
template <typename T>
std::vector<LogRow> train(Model<T>& model, const std::vector<Sample>& data, const TrainConfig& cfg,
                          const LossConfig& loss_cfg, TrainState<T>& state, const TrainCallbacks& cb = {}) {
  cfg.validate();
  loss_cfg.validate();
  if (data.empty()) throw InvalidInput("training set is empty");
  std::vector<LogRow> log;
  std::size_t global_step = state.optimizer.steps();
  const std::size_t batches_per_epoch =
      cfg.steps_per_epoch ? cfg.steps_per_epoch : (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  auto params = model.parameters();

  for (std::size_t epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ULL + epoch + 1);
    const double lr = lr_schedule(epoch, cfg.lr0);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();
    bool stop = false;
    for (std::size_t bi = 0; bi < batches_per_epoch && !stop; ++bi) {
      std::vector<Sample> batch;
      for (std::size_t k = 0; k < std::min(cfg.batch_size, data.size()); ++k) {
        if (cursor == order.size()) {
          std::shuffle(order.begin(), order.end(), rng);
          cursor = 0;
        }
        batch.push_back(augment(data[order[cursor++]], cfg, rng));
      }
      std::vector<const Sample*> ptrs;
      for (const auto& s : batch) ptrs.push_back(&s);
      Batch<T> in = make_batch<T>(ptrs);

      model.set_mode(Mode::train);
      model.zero_grad();
      Tape<T> tape;
      MultiScaleFlow<T> pred = forward(tape, model, in.volume, in.frames);
      LossTerms<T> loss = total_loss(pred, tape.constant(in.first), tape.constant(in.last), loss_cfg);
      const double total = double(loss.total.value().item());
      if (std::isfinite(total)) tape.backward(loss.total);
      check_finite(tape, model, total);
      state.optimizer.step(params, lr);
      ++global_step;

      LogRow row{epoch, global_step, lr, total, loss.photo, loss.smooth, std::nullopt, std::nullopt};
      if (std::all_of(batch.begin(), batch.end(), [](const Sample& s) { return s.gt.has_value(); })) {
        double sum_all = 0, sum_ev = 0;
        std::size_t n_ev = 0;
        for (std::size_t b = 0; b < batch.size(); ++b) {
          auto [a, e] = sample_aee(pred.finest().value(), b, batch[b]);
          sum_all += a;
          if (e) {
            sum_ev += *e;
            ++n_ev;
          }
        }
        row.aee_all = sum_all / double(batch.size());
        if (n_ev) row.aee_event = sum_ev / double(n_ev);
      }
      log.push_back(row);
      if (cb.on_step) cb.on_step(row);
      if (cb.should_stop && cb.should_stop(row)) stop = true;
    }
    state.epoch = epoch + 1;
    if (cb.on_epoch_end) cb.on_epoch_end(state.epoch);
    if (stop) break;
  }
  return log;
}

/// Inference in eval mode on a single sample; returns the finest flow.
template <typename T>
FlowField predict(Model<T>& model, const Sample& s) {
  model.set_mode(Mode::eval);
  Tape<T> tape(false);
  Batch<T> in = make_batch<T>({&s});
  return flow_from_tensor(forward(tape, model, in.volume, in.frames).finest().value(), 0);
}

}  // namespace fusionflow
