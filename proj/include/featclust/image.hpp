#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace featclust {

using Rgb = std::array<std::uint8_t, 3>;
using Rgba = std::array<std::uint8_t, 4>;

/// Interleaved 8-bit image with N channels per pixel.
template <int N>
struct Image {
  static constexpr int kChannels = N;
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * N, 0) {}

  std::uint8_t* at(int x, int y) {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * N;
  }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * N;
  }
  bool empty() const { return width == 0 || height == 0; }
  bool operator==(const Image&) const = default;
};

using RgbImage = Image<3>;
using RgbaImage = Image<4>;

// PNG output uses fixed encoder settings (8-bit, no interlacing, no
// timestamps) so identical images produce identical files.
void write_png(const RgbImage& image, const std::filesystem::path& path);
void write_png(const RgbaImage& image, const std::filesystem::path& path);

/// Reads any 8-bit PNG and converts it to RGB (alpha is dropped).
RgbImage read_png_rgb(const std::filesystem::path& path);

}  // namespace featclust
