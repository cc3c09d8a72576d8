#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fusionflow/app.hpp"

using namespace fusionflow;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ff_app_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunConfig small_config() {
  RunConfig c;
  c.scene.width = c.scene.height = 32;
  c.scene.num_frames = 4;
  c.scene.texture_margin = 16;
  c.scene.motion_x = 1.0;
  c.scene.motion_y = -0.5;
  c.net.base_channels = 4;
  c.n_steps = 2;
  c.train.batch_size = 2;
  c.train.epochs = 1;
  c.seed = c.train.seed = 5;
  return c;
}

// Zero weights make every flow head output zero.
fs::path zero_checkpoint(const RunConfig& cfg, const fs::path& dir) {
  auto m = build<float>(cfg.network(), 1);
  for (auto* p : m.parameters()) p->value.fill(0.0f);
  const fs::path p = dir / "zero.ffnw";
  app::save_with_config(p, m, cfg);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(FUSIONFLOW_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(Synth, WindowCounts) {
  RunConfig c = small_config();
  c.scene.num_frames = 10;
  EXPECT_EQ(app::cmd_synth(c, fresh_dir("synth1")).samples, 9u);
  c.dt = 4;
  const fs::path d4 = fresh_dir("synth4");
  EXPECT_EQ(app::cmd_synth(c, d4).samples, 6u);
  const auto entries = app::read_manifest(d4);
  ASSERT_EQ(entries.size(), 6u);
  EXPECT_EQ(entries[5].frame_a, "seq000/frame_0005.pgm");
  EXPECT_EQ(entries[5].frame_b, "seq000/frame_0009.pgm");
  EXPECT_EQ(entries[5].dt, 4u);
  const FlowField gt = read_flo(d4 / entries[0].flow);
  EXPECT_EQ(gt.u[0], 4.0);
  EXPECT_EQ(gt.v[0], -2.0);
}

TEST(Synth, ZeroMotionGivesZeroFlow) {
  RunConfig c = small_config();
  c.scene.motion_x = c.scene.motion_y = 0;
  c.scene.num_sequences = 2;
  const fs::path d = fresh_dir("synth0");
  EXPECT_EQ(app::cmd_synth(c, d).samples, 6u);
  for (const auto& e : app::read_manifest(d)) {
    const FlowField f = read_flo(d / e.flow);
    for (std::size_t i = 0; i < f.u.size(); ++i) {
      ASSERT_EQ(f.u[i], 0.0);
      ASSERT_EQ(f.v[i], 0.0);
    }
    EXPECT_TRUE(read_aer(d / e.aer).events.empty());
  }
}

TEST(Dataset, MissingManifestNamesPath) {
  const fs::path d = fresh_dir("empty");
  try {
    app::read_manifest(d);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find((d / "manifest.txt").string()), std::string::npos);
  }
}

TEST(Dataset, CorruptSamplesSkippedThenAbort) {
  RunConfig c = small_config();
  c.scene.num_frames = 11;  // 10 samples
  const fs::path d = fresh_dir("corrupt");
  app::cmd_synth(c, d);
  const auto entries = app::read_manifest(d);
  io::write_file(d / entries[3].aer, {1, 2, 3});
  std::ostringstream warn;
  auto loaded = app::load_dataset(d, 2, 2, warn);
  EXPECT_EQ(loaded.samples.size(), 9u);
  EXPECT_EQ(loaded.skipped, 1u);
  EXPECT_NE(warn.str().find(entries[3].flow), std::string::npos);
  io::write_file(d / entries[7].flow, {});
  EXPECT_THROW(app::load_dataset(d, 2, 2, warn), InvalidInput);
}

TEST(Train, ZeroEpochsWritesInitialCheckpointOnly) {
  RunConfig c = small_config();
  const fs::path data = fresh_dir("train0_data"), run = fresh_dir("train0_run");
  app::cmd_synth(c, data);
  c.train.epochs = 0;
  std::ostringstream out;
  const auto r = app::cmd_train(c, data, run, std::nullopt, out);
  EXPECT_TRUE(r.log.empty());
  EXPECT_TRUE(fs::exists(run / "model.ffnw"));
  EXPECT_TRUE(fs::exists(run / "model.cfg"));
  EXPECT_FALSE(fs::exists(run / "log.csv"));
  auto fresh = build<float>(c.network(), c.seed), loaded = build<float>(c.network(), 77);
  load_checkpoint(run / "model.ffnw", loaded);
  for (std::size_t i = 0; i < fresh.parameters().size(); ++i)
    EXPECT_EQ(fresh.parameters()[i]->value, loaded.parameters()[i]->value);
}

TEST(Train, PeriodicCheckpointsAndEchoReproduces) {
  RunConfig c = small_config();
  c.train.epochs = 2;
  c.checkpoint_every = 1;
  const fs::path data = fresh_dir("train_data"), run1 = fresh_dir("train_run1"), run2 = fresh_dir("train_run2");
  app::cmd_synth(c, data);
  std::ostringstream out;
  const auto r1 = app::cmd_train(c, data, run1, std::nullopt, out);
  EXPECT_EQ(r1.log.size(), 4u);  // 3 samples, batch 2, 2 epochs
  EXPECT_TRUE(fs::exists(run1 / "ckpt_epoch_0001.ffnw"));
  EXPECT_TRUE(fs::exists(run1 / "ckpt_epoch_0002.cfg"));
  EXPECT_TRUE(fs::exists(run1 / "log.csv"));

  // Re-running from the echoed configuration reproduces the weights bit-exactly.
  RunConfig echoed;
  apply_file(echoed, run1 / "config.txt");
  app::cmd_train(echoed, data, run2, std::nullopt, out);
  EXPECT_EQ(io::read_file(run1 / "model.ffnw"), io::read_file(run2 / "model.ffnw"));
  EXPECT_EQ(io::read_file(run1 / "log.csv"), io::read_file(run2 / "log.csv"));
}

TEST(Eval, GroundTruthAsPredictionIsZero) {
  RunConfig c = small_config();
  const fs::path data = fresh_dir("eval_gt");
  app::cmd_synth(c, data);
  const auto r = app::cmd_eval(c, std::nullopt, data, data, std::nullopt);
  ASSERT_EQ(r.rows.size(), 3u);
  for (const auto& row : r.rows) {
    EXPECT_EQ(row.aee_all, 0.0);
    ASSERT_TRUE(row.aee_event.has_value());
    EXPECT_EQ(*row.aee_event, 0.0);
  }
  EXPECT_EQ(r.mean_all, 0.0);
}

TEST(Eval, AggregateIsMeanOfSamples) {
  RunConfig c = small_config();
  const fs::path data = fresh_dir("eval_mean"), preds = fresh_dir("eval_mean_pred");
  app::cmd_synth(c, data);
  // Constant predictions (0,0), (1,-0.5) and (3,-0.5) against gt (1,-0.5):
  // per-sample AEE sqrt(1.25), 0 and 2.
  const auto entries = app::read_manifest(data);
  const double us[3] = {0.0, 1.0, 3.0}, vs[3] = {0.0, -0.5, -0.5};
  for (std::size_t i = 0; i < 3; ++i) {
    fs::create_directories((preds / entries[i].flow).parent_path());
    write_flo(FlowField(32, 32, us[i], vs[i]), preds / entries[i].flow);
  }
  const fs::path run = fresh_dir("eval_mean_run");
  const auto r = app::cmd_eval(c, std::nullopt, data, preds, run);
  EXPECT_NEAR(r.rows[0].aee_all, std::sqrt(1.25), 1e-12);
  EXPECT_EQ(r.rows[1].aee_all, 0.0);
  EXPECT_NEAR(r.rows[2].aee_all, 2.0, 1e-12);
  EXPECT_NEAR(r.mean_all, (std::sqrt(1.25) + 0.0 + 2.0) / 3.0, 1e-12);
  const auto csv = io::read_file(run / "eval.csv");
  const std::string text(csv.begin(), csv.end());
  EXPECT_EQ(text.rfind("sequence,dt,aee_all,aee_event,m_event\n", 0), 0u);
  EXPECT_NE(text.find("\nmean,1,"), std::string::npos);
}

TEST(Eval, EmptyEventWindowReportsNa) {
  RunConfig c = small_config();
  c.scene.motion_x = c.scene.motion_y = 0;
  const fs::path data = fresh_dir("eval_na"), dir = fresh_dir("eval_na_ck");
  app::cmd_synth(c, data);
  const auto r = app::cmd_eval(c, zero_checkpoint(c, dir), data, std::nullopt, std::nullopt);
  for (const auto& row : r.rows) {
    EXPECT_FALSE(row.aee_event.has_value());
    EXPECT_EQ(row.m_event, 0u);
    EXPECT_EQ(row.aee_all, 0.0);
  }
  EXPECT_FALSE(r.mean_event.has_value());
  std::ostringstream os;
  app::write_eval_csv(os, r);
  EXPECT_NE(os.str().find(",0,n/a,0\n"), std::string::npos) << os.str();
}

TEST(Predict, ZeroCheckpointRendersWhite) {
  RunConfig c = small_config();
  const fs::path data = fresh_dir("pred_data"), run = fresh_dir("pred_run");
  app::cmd_synth(c, data);
  const auto r = app::cmd_predict(c, zero_checkpoint(c, run), data, 1, run);
  for (std::size_t i = 0; i < r.flow.u.size(); ++i) {
    ASSERT_EQ(r.flow.u[i], 0.0);
    ASSERT_EQ(r.flow.v[i], 0.0);
  }
  PngInfo info;
  const auto rgb = read_png_rgb(r.png_path, &info);
  EXPECT_EQ(info.width, 32u);
  EXPECT_EQ(info.height, 32u);
  for (auto b : rgb) ASSERT_EQ(b, 255);
  EXPECT_THROW(app::cmd_predict(c, run / "zero.ffnw", data, 3, run), InvalidInput);
}

TEST(Predict, FloRereadIsBitExact) {
  RunConfig c = small_config();
  c.scene.width = 48;
  c.scene.height = 32;
  const fs::path data = fresh_dir("pred2_data"), run = fresh_dir("pred2_run");
  app::cmd_synth(c, data);
  auto m = build<float>(c.network(), 3);
  app::save_with_config(run / "m.ffnw", m, c);
  const auto r = app::cmd_predict(c, run / "m.ffnw", data, 0, run);
  EXPECT_EQ(read_flo(r.flo_path), r.flow);
  EXPECT_EQ(read_png_info(r.png_path).width, 48u);
  EXPECT_EQ(read_png_info(r.png_path).height, 32u);
}

TEST(Profile, DeterministicAndLinearInEnergyCosts) {
  RunConfig c = small_config();
  const fs::path data = fresh_dir("prof_data"), run = fresh_dir("prof_run");
  app::cmd_synth(c, data);
  auto m = build<float>(c.network(), 3);
  app::save_with_config(run / "m.ffnw", m, c);
  const auto a = app::cmd_profile(c, run / "m.ffnw", data, 0, std::nullopt);
  const auto b = app::cmd_profile(c, run / "m.ffnw", data, 0, run);
  EXPECT_EQ(a.energy.e_total, b.energy.e_total);
  ASSERT_EQ(a.ops.layers.size(), b.ops.layers.size());
  for (std::size_t i = 0; i < a.ops.layers.size(); ++i) EXPECT_EQ(a.ops.layers[i].ops, b.ops.layers[i].ops);
  EXPECT_TRUE(fs::exists(run / "ops.csv"));

  RunConfig scaled = c;
  scaled.e_mac *= 3;
  scaled.e_ac *= 3;
  EXPECT_NEAR(app::cmd_profile(scaled, run / "m.ffnw", data, 0, std::nullopt).energy.e_total, 3 * a.energy.e_total,
              1e-12 * a.energy.e_total);
  RunConfig mac_only = c;
  mac_only.e_ac = 0;
  EXPECT_NEAR(app::cmd_profile(mac_only, run / "m.ffnw", data, 0, std::nullopt).energy.e_total,
              a.ops.ops_ann * c.e_mac, 1e-12 * a.energy.e_total);
}

TEST(Profile, DatasetAveragesPerSampleActivity) {
  RunConfig c = small_config();
  const fs::path data = fresh_dir("prof_avg"), run = fresh_dir("prof_avg_run");
  app::cmd_synth(c, data);
  auto m = build<float>(c.network(), 3);
  app::save_with_config(run / "m.ffnw", m, c);
  std::vector<OpsReport> each;
  for (std::size_t i = 0; i < 3; ++i) each.push_back(app::cmd_profile(c, run / "m.ffnw", data, i, std::nullopt).ops);
  const auto all = app::cmd_profile(c, run / "m.ffnw", data, std::nullopt, std::nullopt).ops;
  for (std::size_t l = 0; l < all.layers.size(); ++l) {
    if (!all.layers[l].snn) continue;
    const double mean_f = (each[0].layers[l].F + each[1].layers[l].F + each[2].layers[l].F) / 3.0;
    EXPECT_NEAR(all.layers[l].F, mean_f, 1e-15);
    EXPECT_NEAR(all.layers[l].ops, all.layers[l].N * all.layers[l].M * all.layers[l].C * mean_f,
                1e-9 * std::max(1.0, all.layers[l].ops));
  }
}

TEST(ReferenceTable, PublishedCountsThroughEnergyModel) {
  const auto rows = app::reference_table(kDefaultEMac, kDefaultEAc);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_NEAR(rows[1].e_total * 1e3, 20.296, 1e-3);
  EXPECT_NEAR(rows[3].improvement, 1.87, 0.01);
}

TEST(Cli, ExitCodesAndRunDirectories) {
  const fs::path base = fresh_dir("cli");
  const std::string b = base.string();
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("synth --out " + b + "/d --bogus"), 2);
  EXPECT_EQ(run_cli("synth --out " + b + "/d --dt 3"), 2);
  EXPECT_EQ(run_cli("synth --out " + b + "/d --variant mid"), 2);
  EXPECT_EQ(run_cli("eval --checkpoint x --data " + b + "/nowhere"), 4);

  {
    std::ofstream cfg(base / "bad.cfg");
    cfg << "epochs = many\n";
  }
  EXPECT_EQ(run_cli("synth --out " + b + "/d --config " + b + "/bad.cfg"), 2);
  {
    std::ofstream cfg(base / "small.cfg");
    cfg << "scene_width = 32\nscene_height = 32\nnum_frames = 3\ntexture_margin = 16\n";
  }
  // Without --force every invocation gets its own run directory.
  EXPECT_EQ(run_cli("synth --out " + b + "/runs --config " + b + "/small.cfg"), 0);
  EXPECT_EQ(run_cli("synth --out " + b + "/runs --config " + b + "/small.cfg"), 0);
  std::size_t dirs = 0;
  for (const auto& e : fs::directory_iterator(base / "runs")) {
    EXPECT_EQ(e.path().filename().string().rfind("run-", 0), 0u);
    EXPECT_TRUE(fs::exists(e.path() / "config.txt"));
    ++dirs;
  }
  EXPECT_EQ(dirs, 2u);
}
