#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dpnet {

// 8-bit raster, row-major, interleaved channels (1 = gray, 3 = RGB).
struct Image8 {
  int w = 0, h = 0, channels = 1;
  std::vector<std::uint8_t> px;

  std::uint8_t& at(int y, int x, int c = 0) {
    return px[static_cast<std::size_t>((y * w + x) * channels + c)];
  }
  std::uint8_t at(int y, int x, int c = 0) const {
    return px[static_cast<std::size_t>((y * w + x) * channels + c)];
  }
};

Image8 make_image(int w, int h, int channels, std::uint8_t fill = 0);

// Dispatches on extension: .png (when built with libpng), .pgm (gray only),
// .ppm (RGB only). Throws std::runtime_error on IO failure or an unsupported
// extension/channel combination.
void write_image(const std::string& path, const Image8& img);

// True when .png output is compiled in.
bool png_supported();

}  // namespace dpnet
