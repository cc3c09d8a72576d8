// Trains a small early-fusion model on one synthetic translating texture, then prints
// the error before and after, and the operation counts of the trained network.

#include <cstdio>

#include "fusionflow.hpp"

using namespace fusionflow;

int main() {
  // 32x32 texture moving 1.5 px right and 0.5 px up per frame interval; 3 spike steps per half.
  const Sample sample = synthetic_sample(32, 1.5, -0.5, 1, 3, 7);
  std::printf("events in window: %zu active pixels\n", event_mask(sample.volume).m);

  FusionConfig net;
  net.base_channels = 8;
  net.n_steps = 3;
  net.input_h = net.input_w = 32;
  Model<float> model = build<float>(net, 1);
  std::printf("parameters: %zu\n", count_params(model).total);

  auto report = [&](const char* when) {
    const FlowField f = predict(model, sample);
    std::printf("%s: AEE %.3f px\n", when, aee(f, *sample.gt, EvalMask::full(f.width, f.height)));
  };
  report("before training");

  TrainConfig cfg;
  cfg.lr0 = 2e-3;
  cfg.epochs = 1;
  cfg.batch_size = 1;
  cfg.steps_per_epoch = 150;
  cfg.flip_prob = 0;
  TrainState<float> state;
  TrainCallbacks cb;
  cb.on_step = [](const LogRow& r) {
    if (r.step % 50 == 0) std::printf("step %zu loss %.2f\n", r.step, r.loss_total);
  };
  train(model, {sample}, cfg, LossConfig{}, state, cb);
  report("after training");

  model.set_mode(Mode::eval);
  const Batch<float> in = make_batch<float>({&sample});
  const OpsReport ops = profile(model, in.volume, in.frames);
  const EnergyReport e = energy(ops);
  std::printf("AC %.4g, MAC %.4g, energy %.4g uJ\n", ops.ops_snn, ops.ops_ann, e.e_total * 1e6);
  return 0;
}
