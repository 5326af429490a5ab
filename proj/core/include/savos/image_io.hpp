#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "savos/grid.hpp"

namespace savos {

/// Interleaved 8-bit RGB image.
struct ImageRGB {
  int h = 0, w = 0;
  std::vector<std::uint8_t> rgb;  // 3 * h * w

  ImageRGB() = default;
  ImageRGB(int h_, int w_) : h(h_), w(w_), rgb(static_cast<std::size_t>(3) * h_ * w_, 0) {}

  std::uint8_t* px(int y, int x) { return &rgb[3 * (static_cast<std::size_t>(y) * w + x)]; }
  const std::uint8_t* px(int y, int x) const {
    return &rgb[3 * (static_cast<std::size_t>(y) * w + x)];
  }
  bool operator==(const ImageRGB& o) const { return h == o.h && w == o.w && rgb == o.rgb; }
};

// Binary PGM (P5) / PPM (P6). Masks are written with foreground = 255.
void write_pgm(const std::filesystem::path& file, const MaskU8& mask);
MaskU8 read_pgm(const std::filesystem::path& file);
void write_ppm(const std::filesystem::path& file, const ImageRGB& img);
ImageRGB read_ppm(const std::filesystem::path& file);

}  // namespace savos
