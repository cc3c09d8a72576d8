#pragma once

// Command implementations behind the fusionflow executable. Each command takes a
// resolved RunConfig and explicit paths so it can be driven from tests as well as
// from the argument parser.
//
// Dataset layout written by `synth` and read by the other commands:
//   <dir>/manifest.txt   one sample per line: frame_a frame_b aer flow dt (paths relative to <dir>)
//   <dir>/seqNNN/frame_KKKK.pgm, events_AAAA_BBBB.aer, flow_AAAA_BBBB.flo

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fusionflow/checkpoint.hpp"
#include "fusionflow/config.hpp"
#include "fusionflow/dataset.hpp"
#include "fusionflow/energy.hpp"
#include "fusionflow/evaluation.hpp"
#include "fusionflow/events.hpp"
#include "fusionflow/io.hpp"
#include "fusionflow/kernels.hpp"
#include "fusionflow/network.hpp"
#include "fusionflow/train.hpp"

namespace fusionflow::app {

namespace fs = std::filesystem;

// ------------------------------------------------------------------ run dirs

/// With force, `out` itself (created if needed). Otherwise a new subdirectory
/// run-YYYYmmdd-HHMMSS[-k] of `out` that did not exist before.
inline fs::path make_run_dir(const fs::path& out, bool force) {
  std::error_code ec;
  if (force) {
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create directory '" + out.string() + "': " + ec.message());
    return out;
  }
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "run-%Y%m%d-%H%M%S", &tm);
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create directory '" + out.string() + "': " + ec.message());
  for (int k = 0;; ++k) {
    fs::path p = out / (k ? std::string(stamp) + "-" + std::to_string(k) : std::string(stamp));
    if (fs::create_directory(p, ec)) return p;
    if (ec) throw IoError("cannot create directory '" + p.string() + "': " + ec.message());
  }
}

inline void write_text(const fs::path& p, const std::string& text) {
  io::write_file(p, std::vector<std::uint8_t>(text.begin(), text.end()));
}

// ------------------------------------------------------------------ manifest

struct ManifestEntry {
  std::string frame_a, frame_b, aer, flow;
  std::size_t dt = 1;
};

inline std::vector<ManifestEntry> read_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.txt";
  if (!fs::exists(path)) throw IoError("manifest not found: '" + path.string() + "'");
  const auto bytes = io::read_file(path);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    ManifestEntry e;
    if (!(ls >> e.frame_a)) continue;
    std::string extra;
    if (!(ls >> e.frame_b >> e.aer >> e.flow >> e.dt) || (ls >> extra))
      throw InvalidInput(path.string() + ":" + std::to_string(lineno) + ": expected 'frame_a frame_b aer flow dt'");
    out.push_back(e);
  }
  if (out.empty()) throw InvalidInput("manifest '" + path.string() + "' lists no samples");
  return out;
}

/// Loads one manifest sample. The event window is the AER header's [t_start, t_end].
inline Sample load_sample(const fs::path& dir, const ManifestEntry& e, std::size_t n_steps, std::size_t frame_channels) {
  if (frame_channels != 1 && frame_channels != 2)
    throw InvalidInput("datasets provide two frames per sample; frame_channels must be 1 or 2");
  Sample s;
  s.name = e.flow;
  s.first = read_pgm(dir / e.frame_a);
  s.last = read_pgm(dir / e.frame_b);
  const EventStream ev = read_aer(dir / e.aer);
  if (s.first.width != s.last.width || s.first.height != s.last.height || ev.width != s.first.width ||
      ev.height != s.first.height)
    throw InvalidInput("sample " + e.flow + ": frame and event sizes differ");
  s.volume = discretize(ev, n_steps);
  s.frames = {s.first};
  if (frame_channels == 2) s.frames.push_back(s.last);
  FlowField gt = read_flo(dir / e.flow);
  if (gt.width != s.first.width || gt.height != s.first.height)
    throw InvalidInput("sample " + e.flow + ": flow size differs from the frames");
  s.gt = std::move(gt);
  return s;
}

struct LoadedDataset {
  std::vector<Sample> samples;
  std::vector<ManifestEntry> entries;  // parallel to samples
  std::size_t skipped = 0;
};

/// Corrupt samples are skipped with a warning; more than 10% corrupt aborts.
inline LoadedDataset load_dataset(const fs::path& dir, std::size_t n_steps, std::size_t frame_channels,
                                  std::ostream& warn = std::cerr) {
  LoadedDataset d;
  const auto entries = read_manifest(dir);
  for (const auto& e : entries) {
    try {
      d.samples.push_back(load_sample(dir, e, n_steps, frame_channels));
      d.entries.push_back(e);
    } catch (const ParseError& err) {
      warn << "warning: skipping corrupt sample " << e.flow << ": " << err.what() << '\n';
      ++d.skipped;
    } catch (const IoError& err) {
      warn << "warning: skipping unreadable sample " << e.flow << ": " << err.what() << '\n';
      ++d.skipped;
    }
  }
  if (d.skipped * 10 > entries.size())
    throw InvalidInput(std::to_string(d.skipped) + " of " + std::to_string(entries.size()) +
                       " samples are corrupt (more than 10%)");
  if (d.skipped) warn << "warning: " << d.skipped << " corrupt sample(s) skipped\n";
  return d;
}

// ------------------------------------------------------------------ synth

struct SynthResult {
  std::size_t samples = 0;
  std::size_t events = 0;
};

inline SynthResult cmd_synth(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  const SceneConfig& sc = cfg.scene;
  if (cfg.dt >= sc.num_frames) throw InvalidInput("dt must be smaller than num_frames");
  write_text(out / "config.txt", to_text(cfg));
  std::ostringstream manifest;
  manifest << "# frame_a frame_b aer flow dt\n";
  SynthResult res;
  std::mt19937_64 rng(cfg.seed);
  for (std::size_t q = 0; q < sc.num_sequences; ++q) {
    char seq_name[16];
    std::snprintf(seq_name, sizeof seq_name, "seq%03zu", q);
    fs::create_directories(out / seq_name);
    SceneSpec spec;
    spec.width = sc.width;
    spec.height = sc.height;
    spec.num_frames = sc.num_frames;
    spec.motion_x = sc.motion_x;
    spec.motion_y = sc.motion_y;
    spec.theta = sc.theta;
    spec.frame_interval_us = sc.frame_interval_us;
    spec.texture = make_texture(sc.width + sc.texture_margin, sc.height + sc.texture_margin, rng());
    const SyntheticSequence seq = synth_sequence(spec);
    const EventStream events = generate_events(seq.frames, sc.theta);
    res.events += events.events.size();
    for (std::size_t k = 0; k < sc.num_frames; ++k) {
      char name[32];
      std::snprintf(name, sizeof name, "frame_%04zu.pgm", k);
      write_pgm(seq.frames.frames[k], out / seq_name / name);
    }
    for (std::size_t a = 0; a + cfg.dt < sc.num_frames; ++a) {
      const std::size_t b = a + cfg.dt;
      char fa[32], fb[32], aer[48], flo[48];
      std::snprintf(fa, sizeof fa, "frame_%04zu.pgm", a);
      std::snprintf(fb, sizeof fb, "frame_%04zu.pgm", b);
      std::snprintf(aer, sizeof aer, "events_%04zu_%04zu.aer", a, b);
      std::snprintf(flo, sizeof flo, "flow_%04zu_%04zu.flo", a, b);
      write_aer(slice_stream(events, seq.frames.timestamps[a], seq.frames.timestamps[b]), out / seq_name / aer);
      FlowField gt(sc.width, sc.height);
      for (std::size_t k = a; k < b; ++k)
        for (std::size_t i = 0; i < gt.u.size(); ++i) {
          gt.u[i] += seq.flows[k].u[i];
          gt.v[i] += seq.flows[k].v[i];
        }
      write_flo(gt, out / seq_name / flo);
      const std::string sn(seq_name);
      manifest << sn << '/' << fa << ' ' << sn << '/' << fb << ' ' << sn << '/' << aer << ' ' << sn << '/' << flo << ' '
               << cfg.dt << '\n';
      ++res.samples;
    }
  }
  write_text(out / "manifest.txt", manifest.str());
  return res;
}

// ------------------------------------------------------------------ model I/O

/// Builds the model described by `cfg` and loads weights from `ckpt`.
inline Model<float> load_model(const RunConfig& cfg, const fs::path& ckpt, TrainState<float>* st = nullptr) {
  Model<float> m = build<float>(cfg.network(), cfg.seed);
  load_checkpoint(ckpt, m, st);
  return m;
}

/// Layers configuration sources: defaults, the checkpoint's .cfg companion (when
/// present), then the given overrides.
inline RunConfig config_for_checkpoint(const fs::path& ckpt, const std::function<void(RunConfig&)>& overrides) {
  RunConfig cfg;
  const fs::path companion = companion_config_path(ckpt);
  if (fs::exists(companion)) apply_file(cfg, companion);
  if (overrides) overrides(cfg);
  cfg.validate();
  return cfg;
}

inline void save_with_config(const fs::path& path, Model<float>& m, const RunConfig& cfg,
                             const TrainState<float>* st = nullptr) {
  save_checkpoint(path, m, st);
  write_text(companion_config_path(path), to_text(cfg));
}

// ------------------------------------------------------------------ train

struct TrainResult {
  std::vector<LogRow> log;
  fs::path final_checkpoint;
  std::size_t skipped = 0;
};

inline TrainResult cmd_train(const RunConfig& cfg, const fs::path& data_dir, const fs::path& run_dir,
                             const std::optional<fs::path>& resume = std::nullopt, std::ostream& out = std::cout) {
  cfg.validate();
  write_text(run_dir / "config.txt", to_text(cfg));
  kernels::set_num_threads(cfg.threads);
  const LoadedDataset data = load_dataset(data_dir, cfg.effective_n_steps(), cfg.net.frame_channels);
  TrainResult res;
  res.skipped = data.skipped;

  Model<float> model = build<float>(cfg.network(), cfg.seed);
  TrainState<float> state{Adam<float>(cfg.train.adam), 0};
  if (resume) load_checkpoint(*resume, model, &state);

  res.final_checkpoint = run_dir / "model.ffnw";
  if (cfg.train.epochs == 0) {
    save_with_config(res.final_checkpoint, model, cfg, &state);
    return res;
  }

  std::ofstream log(run_dir / "log.csv");
  if (!log) throw IoError("cannot write '" + (run_dir / "log.csv").string() + "'");
  write_log_header(log);
  TrainCallbacks cb;
  cb.on_step = [&](const LogRow& r) {
    write_log_row(log, r);
    log.flush();
  };
  cb.on_epoch_end = [&](std::size_t done) {
    if (cfg.checkpoint_every && done % cfg.checkpoint_every == 0) {
      char name[40];
      std::snprintf(name, sizeof name, "ckpt_epoch_%04zu.ffnw", done);
      save_with_config(run_dir / name, model, cfg, &state);
    }
    out << "epoch " << done << "/" << cfg.train.epochs << " done\n";
  };
  res.log = train(model, data.samples, cfg.train, cfg.loss, state, cb);
  save_with_config(res.final_checkpoint, model, cfg, &state);
  return res;
}

// ------------------------------------------------------------------ eval

struct EvalRow {
  std::string sequence;
  std::size_t dt = 1;
  double aee_all = 0.0;
  std::optional<double> aee_event;
  std::size_t m_event = 0;
};

struct EvalResult {
  std::vector<EvalRow> rows;
  double mean_all = 0.0;
  std::optional<double> mean_event;  // over samples whose event mask is non-empty
};

inline void write_eval_csv(std::ostream& os, const EvalResult& r) {
  auto num = [](double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.9g", v);
    return std::string(b);
  };
  os << "sequence,dt,aee_all,aee_event,m_event\n";
  std::size_t m_total = 0;
  for (const auto& row : r.rows) {
    os << row.sequence << ',' << row.dt << ',' << num(row.aee_all) << ','
       << (row.aee_event ? num(*row.aee_event) : "n/a") << ',' << row.m_event << '\n';
    m_total += row.m_event;
  }
  os << "mean," << (r.rows.empty() ? 0 : r.rows.front().dt) << ',' << num(r.mean_all) << ','
     << (r.mean_event ? num(*r.mean_event) : "n/a") << ',' << m_total << '\n';
}

/// Predictions come from the model, or from FLO files named like the manifest's flow
/// entries under `flow_dir` when that is given.
inline EvalResult evaluate(const LoadedDataset& data, Model<float>* model, const std::optional<fs::path>& flow_dir) {
  EvalResult res;
  std::size_t n_event = 0;
  double sum_event = 0.0;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const Sample& s = data.samples[i];
    const FlowField pred = flow_dir ? read_flo(*flow_dir / data.entries[i].flow) : predict(*model, s);
    EvalRow row;
    row.sequence = data.entries[i].flow;
    row.dt = data.entries[i].dt;
    row.aee_all = aee(pred, *s.gt, EvalMask::full(pred.width, pred.height));
    const EvalMask mask = event_mask(s.volume);
    row.m_event = mask.m;
    if (mask.m) {
      row.aee_event = aee(pred, *s.gt, mask);
      sum_event += *row.aee_event;
      ++n_event;
    }
    res.mean_all += row.aee_all;
    res.rows.push_back(row);
  }
  res.mean_all /= double(res.rows.size());
  if (n_event) res.mean_event = sum_event / double(n_event);
  return res;
}

inline EvalResult cmd_eval(const RunConfig& cfg, const std::optional<fs::path>& ckpt, const fs::path& data_dir,
                           const std::optional<fs::path>& flow_dir, const std::optional<fs::path>& run_dir) {
  cfg.validate();
  if (!ckpt && !flow_dir) throw InvalidInput("eval needs --checkpoint or --flow-dir");
  kernels::set_num_threads(cfg.threads);
  if (run_dir) write_text(*run_dir / "config.txt", to_text(cfg));
  const LoadedDataset data = load_dataset(data_dir, cfg.effective_n_steps(), cfg.net.frame_channels);
  std::optional<Model<float>> model;
  if (!flow_dir) model.emplace(load_model(cfg, *ckpt));
  EvalResult r = evaluate(data, model ? &*model : nullptr, flow_dir);
  if (run_dir) {
    std::ostringstream os;
    write_eval_csv(os, r);
    write_text(*run_dir / "eval.csv", os.str());
  }
  return r;
}

// ------------------------------------------------------------------ predict

struct PredictResult {
  FlowField flow;
  fs::path flo_path, png_path;
};

inline PredictResult cmd_predict(const RunConfig& cfg, const fs::path& ckpt, const fs::path& data_dir,
                                 std::size_t index, const fs::path& run_dir) {
  cfg.validate();
  kernels::set_num_threads(cfg.threads);
  write_text(run_dir / "config.txt", to_text(cfg));
  const auto entries = read_manifest(data_dir);
  if (index >= entries.size())
    throw InvalidInput("sample index " + std::to_string(index) + " out of range (" + std::to_string(entries.size()) +
                       " samples)");
  const Sample s = load_sample(data_dir, entries[index], cfg.effective_n_steps(), cfg.net.frame_channels);
  Model<float> model = load_model(cfg, ckpt);
  PredictResult r{predict(model, s), run_dir / "flow.flo", run_dir / "flow.png"};
  write_flo(r.flow, r.flo_path);
  const RgbImage img = flow_to_color(r.flow);
  write_png_rgb(r.png_path, img.width, img.height, img.data);
  return r;
}

// ------------------------------------------------------------------ profile

struct ProfileResult {
  OpsReport ops;
  EnergyReport energy;
};

/// Profiles one sample, or every sample (per-layer activity averaged) when index is empty.
inline ProfileResult cmd_profile(const RunConfig& cfg, const fs::path& ckpt, const fs::path& data_dir,
                                 std::optional<std::size_t> index, const std::optional<fs::path>& run_dir) {
  cfg.validate();
  kernels::set_num_threads(cfg.threads);
  if (run_dir) write_text(*run_dir / "config.txt", to_text(cfg));
  const LoadedDataset data = load_dataset(data_dir, cfg.effective_n_steps(), cfg.net.frame_channels);
  if (index && *index >= data.samples.size()) throw InvalidInput("sample index out of range");
  Model<float> model = load_model(cfg, ckpt);
  model.set_mode(Mode::eval);
  std::vector<OpsReport> reports;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    if (index && i != *index) continue;
    const Batch<float> in = make_batch<float>({&data.samples[i]});
    reports.push_back(profile(model, in.volume, in.frames));
  }
  ProfileResult r;
  r.ops = reports.size() == 1 ? reports.front() : average_reports(reports);
  r.energy = energy(r.ops, cfg.e_mac, cfg.e_ac, to_string(cfg.net.variant));
  if (run_dir) {
    std::ostringstream os;
    write_ops_csv(os, r.ops, r.energy);
    write_text(*run_dir / "ops.csv", os.str());
  }
  return r;
}

/// Operation counts published for the dt=1 comparison, run through the energy model.
inline std::vector<EnergyReport> reference_table(double e_mac, double e_ac) {
  return compare({energy(0, 5.339e9, e_mac, e_ac, "ANN baseline"), energy(15.81e6, 4.409e9, e_mac, e_ac, "Spike-FlowNet"),
                  energy(1.03e6, 4.648e9, e_mac, e_ac, "Fusion early"), energy(5.24e6, 2.849e9, e_mac, e_ac, "Fusion late")},
                 0);
}

}  // namespace fusionflow::app
