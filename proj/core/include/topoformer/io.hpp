#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

namespace topo {

/// CRC-32 (IEEE 802.3 polynomial, reflected) over a byte range.
std::uint32_t crc32(const void* data, std::size_t n, std::uint32_t seed = 0);

/// Writes an 8-bit P5 PGM image. `pixels` are row-major values in [0, 1];
/// row 0 is rendered at the top.
void write_pgm(const std::string& path, const std::vector<double>& pixels,
               int width, int height);

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f32(std::vector<std::uint8_t>& buf, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(buf, bits);
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

inline float get_f32(const std::uint8_t* p) {
  std::uint32_t bits = get_u32(p);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace detail

}  // namespace topo
