#pragma once

// File formats:
//   AER  "AER1" u16 width, u16 height, u64 t_start, u64 t_end, u64 count,
//        then count * (u16 x, u16 y, u64 t, i8 p). Little-endian.
//   FLO1 "FLO1" u32 width, u32 height, then row-major f32 (u, v) pairs.
//   PGM  binary P5, 8-bit; intensity i maps to i/255.
//   PNG  8-bit RGB, through libpng's simplified API.

#include <png.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fusionflow/error.hpp"
#include "fusionflow/events.hpp"
#include "fusionflow/image.hpp"

namespace fusionflow {

namespace io {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

/// Little-endian encoder.
class ByteWriter {
public:
  template <typename U>
  void put(U value) {
    static_assert(std::is_integral_v<U>);
    using UU = std::make_unsigned_t<U>;
    auto v = static_cast<UU>(value);
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
  }
  void put_f32(float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    put(u);
  }
  void put_bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

private:
  std::vector<std::uint8_t> bytes_;
};

/// Little-endian decoder that reports the byte offset of any truncation.
class ByteReader {
public:
  explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <typename U>
  U get(const char* what) {
    static_assert(std::is_integral_v<U>);
    need(sizeof(U), what);
    std::make_unsigned_t<U> v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<std::make_unsigned_t<U>>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }
  float get_f32(const char* what) {
    const auto u = get<std::uint32_t>(what);
    float f;
    std::memcpy(&f, &u, 4);
    return f;
  }
  std::string get_string(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw ParseError(std::string("truncated file while reading ") + what, pos_);
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace io

// ------------------------------------------------------------------------ AER

inline constexpr std::size_t kAerHeaderBytes = 4 + 2 + 2 + 8 + 8 + 8;
inline constexpr std::size_t kAerRecordBytes = 2 + 2 + 8 + 1;

inline std::vector<std::uint8_t> encode_aer(const EventStream& s) {
  io::ByteWriter w;
  w.put_bytes("AER1", 4);
  w.put(s.width);
  w.put(s.height);
  w.put(s.t_start);
  w.put(s.t_end);
  w.put(static_cast<std::uint64_t>(s.events.size()));
  for (const Event& e : s.events) {
    w.put(e.x);
    w.put(e.y);
    w.put(e.t);
    w.put(e.p);
  }
  return std::move(w.bytes());
}

inline EventStream decode_aer(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes);
  if (r.get_string(4, "magic") != "AER1") throw ParseError("bad AER magic", 0);
  EventStream s;
  s.width = r.get<std::uint16_t>("width");
  s.height = r.get<std::uint16_t>("height");
  s.t_start = r.get<std::uint64_t>("t_start");
  s.t_end = r.get<std::uint64_t>("t_end");
  const std::size_t count_at = r.pos();
  const auto count = r.get<std::uint64_t>("count");
  if (count > r.remaining() / kAerRecordBytes || r.remaining() != count * kAerRecordBytes) {
    if (count > r.remaining() / kAerRecordBytes)
      throw ParseError("AER header declares " + std::to_string(count) + " records but only " +
                           std::to_string(r.remaining() / kAerRecordBytes) + " are present",
                       count_at);
    throw ParseError("AER file has trailing bytes after " + std::to_string(count) + " records",
                     kAerHeaderBytes + count * kAerRecordBytes);
  }
  s.events.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::size_t at = r.pos();
    Event e;
    e.x = r.get<std::uint16_t>("event x");
    e.y = r.get<std::uint16_t>("event y");
    e.t = r.get<std::uint64_t>("event t");
    e.p = r.get<std::int8_t>("event p");
    if (e.x >= s.width || e.y >= s.height) throw ParseError("event coordinates outside the sensor", at);
    if (e.p != 1 && e.p != -1) throw ParseError("event polarity must be +1 or -1", at + 12);
    if (e.t < s.t_start || e.t > s.t_end) throw ParseError("event timestamp outside the window", at + 4);
    if (!s.events.empty() && e.t < s.events.back().t) throw ParseError("event timestamps decrease", at + 4);
    s.events.push_back(e);
  }
  return s;
}

inline void write_aer(const EventStream& s, const std::filesystem::path& path) {
  io::write_file(path, encode_aer(s));
}
inline EventStream read_aer(const std::filesystem::path& path) { return decode_aer(io::read_file(path)); }

// ----------------------------------------------------------------------- FLO1

inline std::vector<std::uint8_t> encode_flo(const FlowField& f) {
  io::ByteWriter w;
  w.put_bytes("FLO1", 4);
  w.put(static_cast<std::uint32_t>(f.width));
  w.put(static_cast<std::uint32_t>(f.height));
  for (std::size_t i = 0; i < f.u.size(); ++i) {
    w.put_f32(static_cast<float>(f.u[i]));
    w.put_f32(static_cast<float>(f.v[i]));
  }
  return std::move(w.bytes());
}

inline FlowField decode_flo(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes);
  if (r.get_string(4, "magic") != "FLO1") throw ParseError("bad FLO1 magic", 0);
  const auto w = r.get<std::uint32_t>("width");
  const auto h = r.get<std::uint32_t>("height");
  if (std::uint64_t(w) * h * 8 != r.remaining())
    throw ParseError("FLO1 payload size does not match " + std::to_string(w) + "x" + std::to_string(h), r.pos());
  FlowField f(w, h);
  for (std::size_t i = 0; i < f.u.size(); ++i) {
    f.u[i] = r.get_f32("u");
    f.v[i] = r.get_f32("v");
  }
  return f;
}

inline void write_flo(const FlowField& f, const std::filesystem::path& path) { io::write_file(path, encode_flo(f)); }
inline FlowField read_flo(const std::filesystem::path& path) { return decode_flo(io::read_file(path)); }

// ------------------------------------------------------------------------ PGM

inline void write_pgm(const Image& img, const std::filesystem::path& path) {
  std::ostringstream header;
  header << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  io::ByteWriter w;
  const std::string h = header.str();
  w.put_bytes(h.data(), h.size());
  for (double p : img.pixels)
    w.put(static_cast<std::uint8_t>(std::lround(std::clamp(p, 0.0, 1.0) * 255.0)));
  io::write_file(path, w.bytes());
}

inline Image decode_pgm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&](const char* what) {
    skip_space();
    const std::size_t start = pos;
    std::uint64_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) v = v * 10 + (bytes[pos++] - '0');
    if (pos == start) throw ParseError(std::string("expected integer for PGM ") + what, start);
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw ParseError("not a binary PGM (P5)", 0);
  pos = 2;
  const auto w = read_int("width"), h = read_int("height"), maxval = read_int("maxval");
  if (maxval != 255) throw ParseError("only 8-bit PGM (maxval 255) is supported", pos);
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw ParseError("missing whitespace after PGM header", pos);
  ++pos;
  if (bytes.size() - pos != w * h) throw ParseError("PGM pixel data size mismatch", pos);
  Image img(w, h);
  for (std::size_t i = 0; i < w * h; ++i) img.pixels[i] = bytes[pos + i] / 255.0;
  return img;
}

inline Image read_pgm(const std::filesystem::path& path) { return decode_pgm(io::read_file(path)); }

// ------------------------------------------------------------------------ PNG

inline void write_png_rgb(const std::filesystem::path& path, std::size_t width, std::size_t height,
                          const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != width * height * 3) throw InvalidInput("PNG buffer size mismatch");
  if (width == 0 || height == 0 || width > 0x7FFFFFFF || height > 0x7FFFFFFF)
    throw InvalidInput("PNG dimensions out of range");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, rgb.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot write PNG '" + path.string() + "': " + msg);
  }
}

struct PngInfo {
  std::size_t width = 0, height = 0;
};

/// Decodes any PNG to 8-bit RGB.
inline std::vector<std::uint8_t> read_png_rgb(const std::filesystem::path& path, PngInfo* info = nullptr) {
  if (!std::filesystem::exists(path)) throw IoError("cannot open '" + path.string() + "'");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw ParseError("not a readable PNG '" + path.string() + "': " + msg, 0);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> rgb(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, rgb.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw ParseError("corrupt PNG '" + path.string() + "': " + msg, 0);
  }
  if (info) *info = {img.width, img.height};
  return rgb;
}

inline PngInfo read_png_info(const std::filesystem::path& path) {
  PngInfo pi;
  read_png_rgb(path, &pi);
  return pi;
}

}  // namespace fusionflow
