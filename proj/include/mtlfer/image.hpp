#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace mtlfer {

/// CHW float image with entries in [0, 1].
struct Image {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
      : channels(c), height(h), width(w), pixels(c * h * w, fill) {}

  float& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }
  std::size_t size() const { return pixels.size(); }

  bool operator==(const Image&) const = default;
};

/// Binary PPM (P6, maxval 255). Values are rounded to 8 bits on write.
void write_ppm(const std::filesystem::path& path, const Image& img);
/// Throws LoadError naming the file on malformed input.
Image read_ppm(const std::filesystem::path& path);

}  // namespace mtlfer
