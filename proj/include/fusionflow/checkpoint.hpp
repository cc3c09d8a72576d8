#pragma once

// Named-tensor checkpoint ("FFNW"): u32 count, then per tensor u16 name length, UTF-8
// name, u8 rank, u32 dims, f32 row-major data. All integers little-endian.
//
// A model checkpoint holds every parameter and the batch-norm running statistics.
// Training checkpoints add the optimizer moments ("adam.m.<param>", "adam.v.<param>")
// and the counters "train.adam_step" and "train.epoch", so a run can be resumed.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fusionflow/error.hpp"
#include "fusionflow/io.hpp"
#include "fusionflow/network.hpp"
#include "fusionflow/tensor.hpp"
#include "fusionflow/train.hpp"

namespace fusionflow {

using NamedTensors = std::vector<std::pair<std::string, Tensor<float>>>;

inline std::vector<std::uint8_t> encode_checkpoint(const NamedTensors& tensors) {
  io::ByteWriter w;
  w.put_bytes("FFNW", 4);
  if (tensors.size() > 0xFFFFFFFFu) throw InvalidInput("checkpoint: too many tensors");
  w.put(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.empty() || name.size() > 0xFFFF) throw InvalidInput("checkpoint: tensor name length out of range");
    if (t.rank() > 255) throw InvalidInput("checkpoint: rank out of range");
    w.put(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name.data(), name.size());
    w.put(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) {
      if (d > 0xFFFFFFFFu) throw InvalidInput("checkpoint: dimension out of range");
      w.put(static_cast<std::uint32_t>(d));
    }
    for (float v : t.values()) w.put_f32(v);
  }
  return std::move(w.bytes());
}

inline NamedTensors decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes);
  if (r.get_string(4, "magic") != "FFNW") throw ParseError("not an FFNW checkpoint (bad magic)", 0);
  const auto count = r.get<std::uint32_t>("tensor count");
  NamedTensors out;
  std::map<std::string, bool> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.pos();
    const auto len = r.get<std::uint16_t>("name length");
    if (len == 0) throw ParseError("empty tensor name", at);
    std::string name = r.get_string(len, "tensor name");
    if (seen.count(name)) throw ParseError("duplicate tensor '" + name + "'", at);
    seen[name] = true;
    const auto rank = r.get<std::uint8_t>("rank");
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      shape.push_back(r.get<std::uint32_t>("dimension"));
      numel *= shape.back();
    }
    if (numel > r.remaining() / 4) throw ParseError("tensor '" + name + "' extends past the end of the file", r.pos());
    Tensor<float> t(shape);
    for (auto& v : t.storage()) v = r.get_f32("tensor data");
    out.emplace_back(std::move(name), std::move(t));
  }
  if (r.remaining()) throw ParseError("trailing bytes after the last tensor", r.pos());
  return out;
}

/// The .cfg companion of a checkpoint: same path with the extension replaced.
inline std::filesystem::path companion_config_path(const std::filesystem::path& ckpt) {
  auto p = ckpt;
  return p.replace_extension(".cfg");
}

template <typename T>
NamedTensors model_tensors(Model<T>& m, const TrainState<T>* st = nullptr) {
  NamedTensors out;
  for (auto& [name, t] : m.state_tensors()) out.emplace_back(name, t->template cast<float>());
  if (st) {
    const auto& opt = st->optimizer;
    for (auto& [name, t] : opt.first_moments()) out.emplace_back("adam.m." + name, t.template cast<float>());
    for (auto& [name, t] : opt.second_moments()) out.emplace_back("adam.v." + name, t.template cast<float>());
    // Counters are stored as two 24-bit halves so they stay exact in f32.
    auto counter = [](std::uint64_t v) {
      if (v >= (std::uint64_t(1) << 48)) throw InvalidInput("checkpoint: counter too large");
      Tensor<float> t(Shape{2});
      t[0] = float(v & 0xFFFFFF);
      t[1] = float(v >> 24);
      return t;
    };
    out.emplace_back("train.adam_step", counter(opt.steps()));
    out.emplace_back("train.epoch", counter(st->epoch));
  }
  return out;
}

/// Copies tensors into the model (and optimizer state when `st` is given). Every model
/// tensor must be present with its exact shape; names the model does not know are
/// rejected unless they are training state.
template <typename T>
void load_model_tensors(Model<T>& m, const NamedTensors& tensors, TrainState<T>* st = nullptr) {
  std::map<std::string, const Tensor<float>*> by_name;
  for (const auto& [name, t] : tensors) by_name[name] = &t;
  auto counter = [](const Tensor<float>& t) {
    if (t.numel() != 2) throw InvalidInput("checkpoint: malformed counter");
    return std::uint64_t(t[0]) + (std::uint64_t(t[1]) << 24);
  };
  std::map<std::string, bool> used;
  for (auto& [name, dst] : m.state_tensors()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw InvalidInput("checkpoint is missing tensor '" + name + "'");
    if (it->second->shape() != dst->shape())
      throw InvalidInput("checkpoint tensor '" + name + "' has shape " + shape_str(it->second->shape()) +
                         ", model expects " + shape_str(dst->shape()));
    *dst = it->second->template cast<T>();
    used[name] = true;
  }
  for (const auto& [name, t] : tensors) {
    if (used.count(name)) continue;
    const bool training = name.rfind("adam.", 0) == 0 || name.rfind("train.", 0) == 0;
    if (!training) throw InvalidInput("checkpoint tensor '" + name + "' does not belong to this model");
    if (!st) continue;
    if (name.rfind("adam.m.", 0) == 0)
      st->optimizer.first_moments()[name.substr(7)] = t.template cast<T>();
    else if (name.rfind("adam.v.", 0) == 0)
      st->optimizer.second_moments()[name.substr(7)] = t.template cast<T>();
    else if (name == "train.adam_step")
      st->optimizer.set_steps(counter(t));
    else if (name == "train.epoch")
      st->epoch = counter(t);
  }
  for (auto& p : m.parameters()) p->zero_grad();
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, Model<T>& m, const TrainState<T>* st = nullptr) {
  io::write_file(path, encode_checkpoint(model_tensors(m, st)));
}

template <typename T>
void load_checkpoint(const std::filesystem::path& path, Model<T>& m, TrainState<T>* st = nullptr) {
  load_model_tensors(m, decode_checkpoint(io::read_file(path)), st);
}

}  // namespace fusionflow
