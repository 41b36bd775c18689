#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "nobias/tensor.hpp"

namespace nobias {

// 8-bit raster, row-major, channels interleaved (1 = grey, 3 = RGB).
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;

  bool operator==(const Image&) const = default;
};

// Binary PGM (P5) for 1 channel, PPM (P6) for 3.
void write_pnm(std::ostream& os, const Image& image);
void save_pnm(const Image& image, const std::filesystem::path& path);
// Accepts P5/P6 with maxval 255 and header comments; throws FormatError.
Image read_pnm(std::istream& is);
Image load_pnm(const std::filesystem::path& path);

// C x H x W tensor with values byte / 255.
Tensor image_to_tensor(const Image& image);

// Absolute-value percentile (0-100) used as the colour scale.
double abs_percentile(const Tensor& scores, double percentile);

// Symmetric diverging map: -scale blue, 0 white, +scale red. Values beyond
// the scale saturate; a zero scale renders the whole map white.
Image render_heatmap(const Tensor& scores2d, double percentile = 99.0);

}  // namespace nobias
