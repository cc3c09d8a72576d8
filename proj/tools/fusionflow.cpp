// fusionflow: dataset synthesis, training, evaluation, prediction and energy profiling.
//
// Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure, 4 I/O failure.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "fusionflow/app.hpp"

namespace fs = std::filesystem;
using namespace fusionflow;

namespace {

// Flags shared by every subcommand. Unset flags leave the file/default value alone.
struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::optional<std::string> variant;
  std::optional<std::size_t> dt;
  std::optional<std::size_t> n_steps;
  std::optional<std::size_t> base_channels;
  std::optional<double> lambda;
  std::optional<double> e_mac;
  std::optional<double> e_ac;
  std::optional<std::size_t> epochs;
  bool force = false;

  void add_to(CLI::App* app) {
    app->add_option("--config", config, "key = value configuration file")->check(CLI::ExistingFile);
    app->add_option("--seed", seed, "RNG seed");
    app->add_option("--threads", threads, "worker threads (0: hardware parallelism)");
    app->add_option("--variant", variant, "early|late|ann");
    app->add_option("--dt", dt, "frame intervals per sample (1 or 4)");
    app->add_option("--n-steps", n_steps, "spike steps per half window");
    app->add_option("--base-channels", base_channels, "base channel width F");
    app->add_option("--lambda", lambda, "smoothness weight");
    app->add_option("--e-mac", e_mac, "energy per MAC in joules");
    app->add_option("--e-ac", e_ac, "energy per accumulate in joules");
    app->add_flag("--force", force, "write directly into the output directory");
  }

  void apply(RunConfig& c) const {
    if (!config.empty()) apply_file(c, config);
    if (seed) apply_setting(c, "seed", std::to_string(*seed));
    if (threads) c.threads = *threads;
    if (variant) c.net.variant = variant_from_string(*variant);
    if (dt) c.dt = *dt;
    if (n_steps) c.n_steps = *n_steps;
    if (base_channels) c.net.base_channels = *base_channels;
    if (lambda) c.loss.lambda = *lambda;
    if (e_mac) c.e_mac = *e_mac;
    if (e_ac) c.e_ac = *e_ac;
    if (epochs) c.train.epochs = *epochs;
  }
};

RunConfig fresh_config(const CommonFlags& f) {
  RunConfig c;
  f.apply(c);
  c.validate();
  return c;
}

// Checkpoint-driven commands start from the checkpoint's companion .cfg.
RunConfig checkpoint_config(const CommonFlags& f, const std::string& ckpt) {
  return app::config_for_checkpoint(ckpt, [&](RunConfig& c) { f.apply(c); });
}

fs::path run_dir(const std::string& out, bool force) {
  const fs::path dir = app::make_run_dir(out, force);
  std::cout << "output: " << dir.string() << '\n';
  return dir;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Event and frame fusion optical flow"};
  cli.require_subcommand(1);

  CommonFlags f_synth, f_train, f_eval, f_predict, f_profile;
  std::string out_dir, data_dir, checkpoint, flow_dir, resume;
  std::size_t index = 0;
  std::optional<std::size_t> profile_index;
  bool reference = false;

  auto* synth = cli.add_subcommand("synth", "write a synthetic translating-texture dataset");
  f_synth.add_to(synth);
  synth->add_option("--out", out_dir, "output directory")->required();

  auto* train = cli.add_subcommand("train", "train a model on a dataset");
  f_train.add_to(train);
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--resume", resume, "checkpoint to resume from")->check(CLI::ExistingFile);
  train->add_option("--epochs", f_train.epochs, "number of epochs");

  auto* eval = cli.add_subcommand("eval", "average end-point error over a dataset");
  f_eval.add_to(eval);
  eval->add_option("--checkpoint", checkpoint, "model checkpoint");
  eval->add_option("--flow-dir", flow_dir, "read predictions from FLO files instead of a model");
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--out", out_dir, "output directory (eval.csv)");

  auto* pred = cli.add_subcommand("predict", "predict flow for one sample and render it");
  f_predict.add_to(pred);
  pred->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  pred->add_option("--data", data_dir, "dataset directory")->required();
  pred->add_option("--index", index, "manifest line of the sample (0-based)");
  pred->add_option("--out", out_dir, "output directory")->required();

  auto* prof = cli.add_subcommand("profile", "count synaptic operations and estimate energy");
  f_profile.add_to(prof);
  prof->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  prof->add_option("--data", data_dir, "dataset directory")->required();
  prof->add_option("--index", profile_index, "profile one sample (default: average over all)");
  prof->add_option("--out", out_dir, "output directory (ops.csv)");
  prof->add_flag("--reference", reference, "also print the published-count comparison table");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = cli.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*synth) {
      const RunConfig cfg = fresh_config(f_synth);
      const fs::path dir = run_dir(out_dir, f_synth.force);
      const auto r = app::cmd_synth(cfg, dir);
      std::cout << r.samples << " samples, " << r.events << " events\n";
    } else if (*train) {
      const RunConfig cfg = fresh_config(f_train);
      const fs::path dir = run_dir(out_dir, f_train.force);
      std::optional<fs::path> from;
      if (!resume.empty()) from = resume;
      const auto r = app::cmd_train(cfg, data_dir, dir, from);
      if (!r.log.empty())
        std::cout << "final loss " << r.log.back().loss_total << " after " << r.log.back().step << " steps\n";
      std::cout << "checkpoint: " << r.final_checkpoint.string() << '\n';
    } else if (*eval) {
      if (checkpoint.empty() && flow_dir.empty()) throw InvalidInput("eval needs --checkpoint or --flow-dir");
      const RunConfig cfg = checkpoint.empty() ? fresh_config(f_eval) : checkpoint_config(f_eval, checkpoint);
      std::optional<fs::path> dir, ckpt, flows;
      if (!out_dir.empty()) dir = run_dir(out_dir, f_eval.force);
      if (!checkpoint.empty()) ckpt = checkpoint;
      if (!flow_dir.empty()) flows = flow_dir;
      app::write_eval_csv(std::cout, app::cmd_eval(cfg, ckpt, data_dir, flows, dir));
    } else if (*pred) {
      const RunConfig cfg = checkpoint_config(f_predict, checkpoint);
      const fs::path dir = run_dir(out_dir, f_predict.force);
      const auto r = app::cmd_predict(cfg, checkpoint, data_dir, index, dir);
      std::cout << "wrote " << r.flo_path.string() << " and " << r.png_path.string() << '\n';
    } else if (*prof) {
      const RunConfig cfg = checkpoint_config(f_profile, checkpoint);
      std::optional<fs::path> dir;
      if (!out_dir.empty()) dir = run_dir(out_dir, f_profile.force);
      const auto r = app::cmd_profile(cfg, checkpoint, data_dir, profile_index, dir);
      write_ops_text(std::cout, r.ops, r.energy);
      if (reference) {
        std::cout << '\n';
        write_comparison_text(std::cout, app::reference_table(cfg.e_mac, cfg.e_ac));
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
  return 0;
}
