#include "topoformer/io.hpp"

#include <array>
#include <cstdio>
#include <stdexcept>

namespace topo {

namespace {

std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> table{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int k = 0; k < 8; ++k)
      c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
    table[i] = c;
  }
  return table;
}

}  // namespace

std::uint32_t crc32(const void* data, std::size_t n, std::uint32_t seed) {
  static const auto table = make_crc_table();
  const auto* p = static_cast<const std::uint8_t*>(data);
  std::uint32_t c = seed ^ 0xFFFFFFFFu;
  for (std::size_t i = 0; i < n; ++i) c = table[(c ^ p[i]) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

void write_pgm(const std::string& path, const std::vector<double>& pixels,
               int width, int height) {
  if (pixels.size() != static_cast<std::size_t>(width) * height)
    throw std::invalid_argument("write_pgm: pixel count does not match dimensions");
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("write_pgm: cannot open " + path);
  std::fprintf(f, "P5\n%d %d\n255\n", width, height);
  std::vector<std::uint8_t> row(width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double v = pixels[static_cast<std::size_t>(y) * width + x];
      v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
      row[x] = static_cast<std::uint8_t>(v * 255.0 + 0.5);
    }
    std::fwrite(row.data(), 1, row.size(), f);
  }
  std::fclose(f);
}

}  // namespace topo
