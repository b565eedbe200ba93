#pragma once

// FMAP float-map container.
//
//   offset  size  field
//   0       4     magic "FMAP"
//   4       1     version (1)
//   5       1     channels
//   6       4     width, u32 little-endian
//   10      4     height, u32 little-endian
//   14      4*C*W*H  float32 little-endian payload, channel-major then row-major

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>
#include <string>
#include <vector>

#include "convmcd/error.hpp"
#include "convmcd/raster.hpp"

namespace convmcd {

struct FloatMap {
  std::uint8_t channels = 1;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<float> data;  // channels * height * width

  std::size_t plane_size() const noexcept { return static_cast<std::size_t>(width) * height; }

  ImageGrid<double> channel(int c) const {
    if (c < 0 || c >= channels) throw InvalidArgument("fmap channel " + std::to_string(c) + " out of range");
    std::vector<double> out(plane_size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = data[static_cast<std::size_t>(c) * plane_size() + i];
    return ImageGrid<double>(static_cast<int>(width), static_cast<int>(height), std::move(out));
  }

  static FloatMap from_grid(const ImageGrid<double>& g) {
    FloatMap m;
    m.channels = 1;
    m.width = static_cast<std::uint32_t>(g.width());
    m.height = static_cast<std::uint32_t>(g.height());
    m.data.reserve(g.size());
    for (double v : g.values()) m.data.push_back(static_cast<float>(v));
    return m;
  }

  friend bool operator==(const FloatMap&, const FloatMap&) = default;
};

inline constexpr std::array<char, 4> kFmapMagic = {'F', 'M', 'A', 'P'};
inline constexpr std::uint8_t kFmapVersion = 1;
inline constexpr std::size_t kFmapHeaderSize = 14;

namespace detail {
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}
inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}
}  // namespace detail

inline std::string encode_fmap(const FloatMap& m) {
  if (m.channels == 0 || m.width == 0 || m.height == 0) throw InvalidArgument("fmap dimensions must be nonzero");
  if (m.data.size() != m.channels * m.plane_size()) throw ShapeMismatch("fmap payload does not match its header");
  std::string out(kFmapMagic.begin(), kFmapMagic.end());
  out.push_back(static_cast<char>(kFmapVersion));
  out.push_back(static_cast<char>(m.channels));
  detail::put_u32(out, m.width);
  detail::put_u32(out, m.height);
  out.reserve(kFmapHeaderSize + 4 * m.data.size());
  for (float f : m.data) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

inline FloatMap decode_fmap(const std::string& bytes) {
  if (bytes.size() < kFmapHeaderSize) throw FormatError("fmap: truncated header");
  if (!std::equal(kFmapMagic.begin(), kFmapMagic.end(), bytes.begin())) throw FormatError("fmap: bad magic");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (p[4] != kFmapVersion) throw FormatError("fmap: unsupported version " + std::to_string(p[4]));
  FloatMap m;
  m.channels = p[5];
  m.width = detail::get_u32(p + 6);
  m.height = detail::get_u32(p + 10);
  if (m.channels == 0 || m.width == 0 || m.height == 0) throw FormatError("fmap: zero dimension");
  const std::size_t count = m.channels * m.plane_size();
  if (bytes.size() != kFmapHeaderSize + 4 * count) {
    throw FormatError("fmap: payload is " + std::to_string(bytes.size() - kFmapHeaderSize) + " bytes, expected " +
                      std::to_string(4 * count));
  }
  m.data.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    m.data[i] = std::bit_cast<float>(detail::get_u32(p + kFmapHeaderSize + 4 * i));
  }
  return m;
}

inline void write_fmap(const std::string& path, const FloatMap& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  const auto bytes = encode_fmap(m);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path);
}

inline FloatMap read_fmap(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_fmap(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

}  // namespace convmcd
