#pragma once

// Run configuration: every tunable of the network, loss, optimizer, synthetic scenes
// and energy model, read from "key = value" text. Later sources override earlier ones
// (defaults, then files, then command-line flags). `to_text` echoes the effective
// configuration in a form `apply_text` reads back to the same values.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fusionflow/energy.hpp"
#include "fusionflow/error.hpp"
#include "fusionflow/io.hpp"
#include "fusionflow/loss.hpp"
#include "fusionflow/network.hpp"
#include "fusionflow/train.hpp"

namespace fusionflow {

struct SceneConfig {
  std::size_t width = 64;
  std::size_t height = 64;
  std::size_t num_frames = 10;
  std::size_t num_sequences = 1;
  double motion_x = 2.0;  // pixels per frame interval
  double motion_y = 0.0;
  double theta = 0.15;
  std::uint64_t frame_interval_us = 10000;
  std::size_t texture_margin = 48;  // extra texture pixels around the crop
};

struct RunConfig {
  FusionConfig net;
  TrainConfig train;
  LossConfig loss;
  SceneConfig scene;
  std::size_t dt = 1;
  std::size_t n_steps = 0;  // 0: 5 for dt=1, 20 for dt=4
  std::uint64_t seed = 0;
  unsigned threads = 0;     // 0: hardware concurrency
  std::size_t checkpoint_every = 5;
  double e_mac = kDefaultEMac;
  double e_ac = kDefaultEAc;

  /// Steps per half-window actually used.
  std::size_t effective_n_steps() const {
    if (n_steps) return n_steps;
    return dt == 4 ? 20 : 5;
  }

  /// Network config with derived fields filled in.
  FusionConfig network() const {
    FusionConfig c = net;
    c.n_steps = effective_n_steps();
    return c;
  }

  void validate() const {
    if (dt != 1 && dt != 4) throw InvalidInput("dt must be 1 or 4");
    network().validate();
    train.validate();
    loss.validate();
    if (!(e_mac >= 0.0) || !(e_ac >= 0.0)) throw InvalidInput("e_mac and e_ac must be >= 0");
    if (scene.num_frames < 2) throw InvalidInput("num_frames must be >= 2");
    if (scene.num_sequences == 0) throw InvalidInput("num_sequences must be >= 1");
    if (!(scene.theta > 0.0)) throw InvalidInput("theta must be > 0");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename U>
U parse_number(const std::string& key, const std::string& v) {
  U out{};
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw InvalidInput("config key '" + key + "': cannot parse '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw InvalidInput("config key '" + key + "': expected true/false, got '" + v + "'");
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

/// Splits "key = value" lines. '#' starts a comment; blank lines are ignored.
inline std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text,
                                                                          const std::string& source = "config") {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InvalidInput(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw InvalidInput(source + ":" + std::to_string(lineno) + ": empty key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

/// Applies one setting. Unknown keys are an error so that typos do not go unnoticed.
inline void apply_setting(RunConfig& c, const std::string& key, const std::string& v) {
  using detail::parse_number;
  auto sz = [&] { return parse_number<std::size_t>(key, v); };
  auto dbl = [&] { return parse_number<double>(key, v); };

  if (key == "variant") c.net.variant = variant_from_string(v);
  else if (key == "base_channels") c.net.base_channels = sz();
  else if (key == "n_steps") c.n_steps = sz();
  else if (key == "v_th_pos") c.net.sif.v_th_pos = dbl();
  else if (key == "v_th_neg") c.net.sif.v_th_neg_mag = std::abs(dbl());
  else if (key == "soft_reset") c.net.sif.soft_reset = detail::parse_bool(key, v);
  else if (key == "neuron") {
    if (v == "sif") c.net.neuron = NeuronModel::sif;
    else if (v == "if") c.net.neuron = NeuronModel::if_;
    else throw InvalidInput("config key 'neuron': expected sif|if, got '" + v + "'");
  }
  else if (key == "alpha") c.net.alpha = dbl();
  else if (key == "input_h") c.net.input_h = sz();
  else if (key == "input_w") c.net.input_w = sz();
  else if (key == "frame_channels") c.net.frame_channels = sz();
  else if (key == "lr0") c.train.lr0 = dbl();
  else if (key == "epochs") c.train.epochs = sz();
  else if (key == "batch_size") c.train.batch_size = sz();
  else if (key == "steps_per_epoch") c.train.steps_per_epoch = sz();
  else if (key == "crop_size") c.train.crop_size = sz();
  else if (key == "flip_prob") c.train.flip_prob = dbl();
  else if (key == "adam_beta1") c.train.adam.beta1 = dbl();
  else if (key == "adam_beta2") c.train.adam.beta2 = dbl();
  else if (key == "adam_eps") c.train.adam.eps = dbl();
  else if (key == "lambda") c.loss.lambda = dbl();
  else if (key == "charbonnier_r") c.loss.r = dbl();
  else if (key == "charbonnier_eta") c.loss.eta = dbl();
  else if (key == "scale_weights") {
    std::istringstream in(v);
    std::string part;
    std::size_t i = 0;
    while (std::getline(in, part, ',')) {
      if (i >= 4) throw InvalidInput("config key 'scale_weights': expected 4 comma-separated values");
      c.loss.scale_weights[i++] = parse_number<double>(key, detail::trim(part));
    }
    if (i != 4) throw InvalidInput("config key 'scale_weights': expected 4 comma-separated values");
  }
  else if (key == "scene_width") c.scene.width = sz();
  else if (key == "scene_height") c.scene.height = sz();
  else if (key == "num_frames") c.scene.num_frames = sz();
  else if (key == "num_sequences") c.scene.num_sequences = sz();
  else if (key == "motion_x") c.scene.motion_x = dbl();
  else if (key == "motion_y") c.scene.motion_y = dbl();
  else if (key == "theta") c.scene.theta = dbl();
  else if (key == "frame_interval_us") c.scene.frame_interval_us = parse_number<std::uint64_t>(key, v);
  else if (key == "texture_margin") c.scene.texture_margin = sz();
  else if (key == "dt") c.dt = sz();
  else if (key == "seed") c.seed = c.train.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "threads") c.threads = parse_number<unsigned>(key, v);
  else if (key == "checkpoint_every") c.checkpoint_every = sz();
  else if (key == "e_mac") c.e_mac = dbl();
  else if (key == "e_ac") c.e_ac = dbl();
  else throw InvalidInput("unknown config key '" + key + "'");
}

inline void apply_text(RunConfig& c, const std::string& text, const std::string& source = "config") {
  for (const auto& [k, v] : parse_key_values(text, source)) apply_setting(c, k, v);
}

inline void apply_file(RunConfig& c, const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  apply_text(c, std::string(bytes.begin(), bytes.end()), path.string());
}

inline std::string to_text(const RunConfig& c) {
  using detail::fmt;
  std::ostringstream os;
  os << "# network\n"
     << "variant = " << to_string(c.net.variant) << '\n'
     << "base_channels = " << c.net.base_channels << '\n'
     << "n_steps = " << c.effective_n_steps() << '\n'
     << "v_th_pos = " << fmt(c.net.sif.v_th_pos) << '\n'
     << "v_th_neg = " << fmt(c.net.sif.v_th_neg_mag) << '\n'
     << "soft_reset = " << (c.net.sif.soft_reset ? "true" : "false") << '\n'
     << "neuron = " << (c.net.neuron == NeuronModel::sif ? "sif" : "if") << '\n'
     << "alpha = " << fmt(c.net.alpha) << '\n'
     << "input_h = " << c.net.input_h << '\n'
     << "input_w = " << c.net.input_w << '\n'
     << "frame_channels = " << c.net.frame_channels << '\n'
     << "# training\n"
     << "lr0 = " << fmt(c.train.lr0) << '\n'
     << "epochs = " << c.train.epochs << '\n'
     << "batch_size = " << c.train.batch_size << '\n'
     << "steps_per_epoch = " << c.train.steps_per_epoch << '\n'
     << "crop_size = " << c.train.crop_size << '\n'
     << "flip_prob = " << fmt(c.train.flip_prob) << '\n'
     << "adam_beta1 = " << fmt(c.train.adam.beta1) << '\n'
     << "adam_beta2 = " << fmt(c.train.adam.beta2) << '\n'
     << "adam_eps = " << fmt(c.train.adam.eps) << '\n'
     << "checkpoint_every = " << c.checkpoint_every << '\n'
     << "# loss\n"
     << "lambda = " << fmt(c.loss.lambda) << '\n'
     << "charbonnier_r = " << fmt(c.loss.r) << '\n'
     << "charbonnier_eta = " << fmt(c.loss.eta) << '\n'
     << "scale_weights = " << fmt(c.loss.scale_weights[0]) << ", " << fmt(c.loss.scale_weights[1]) << ", "
     << fmt(c.loss.scale_weights[2]) << ", " << fmt(c.loss.scale_weights[3]) << '\n'
     << "# synthetic scenes\n"
     << "scene_width = " << c.scene.width << '\n'
     << "scene_height = " << c.scene.height << '\n'
     << "num_frames = " << c.scene.num_frames << '\n'
     << "num_sequences = " << c.scene.num_sequences << '\n'
     << "motion_x = " << fmt(c.scene.motion_x) << '\n'
     << "motion_y = " << fmt(c.scene.motion_y) << '\n'
     << "theta = " << fmt(c.scene.theta) << '\n'
     << "frame_interval_us = " << c.scene.frame_interval_us << '\n'
     << "texture_margin = " << c.scene.texture_margin << '\n'
     << "# run\n"
     << "dt = " << c.dt << '\n'
     << "seed = " << c.seed << '\n'
     << "threads = " << c.threads << '\n'
     << "e_mac = " << fmt(c.e_mac) << '\n'
     << "e_ac = " << fmt(c.e_ac) << '\n';
  return os.str();
}

}  // namespace fusionflow
