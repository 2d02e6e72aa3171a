#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace cds {

// 8-bit interleaved RGB raster.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  std::uint8_t& at(int x, int y, int c) {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
};

// Reads 8/16-bit gray, gray-alpha, RGB or RGBA PNG files into RGB8; alpha is dropped.
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

// Side-by-side composition with a `gap`-pixel white separator; shorter panels
// are top-aligned on a white background.
Image hconcat(const std::vector<Image>& panels, int gap = 2);

}  // namespace cds
