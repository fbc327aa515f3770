#pragma once

#include "meshsplat/geometry.hpp"

#include <filesystem>
#include <vector>

namespace meshsplat {

/// Row-major RGB image with interleaved double channels.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, const Vec3& fill = Vec3::Zero());

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  std::size_t index(int x, int y) const {
    return 3 * (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x));
  }
  double& at(int x, int y, int c) { return data[index(x, y) + static_cast<std::size_t>(c)]; }
  double at(int x, int y, int c) const { return data[index(x, y) + static_cast<std::size_t>(c)]; }
  Vec3 pixel(int x, int y) const {
    const std::size_t i = index(x, y);
    return {data[i], data[i + 1], data[i + 2]};
  }
  void set_pixel(int x, int y, const Vec3& v) {
    const std::size_t i = index(x, y);
    data[i] = v.x();
    data[i + 1] = v.y();
    data[i + 2] = v.z();
  }
  bool same_shape(const Image& other) const { return width == other.width && height == other.height; }
};

/// Throws Error(ShapeMismatch) unless both images share dimensions.
void require_same_shape(const Image& a, const Image& b);

/// Horizontal mirror.
Image flip_horizontal(const Image& img);

/// 8-bit RGB PNG; values are clamped to [0, 1] and rounded.
void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

/// Raw float32 little-endian, row-major, RGB interleaved, no header.
void write_raw_f32(const std::filesystem::path& path, const Image& img);
Image read_raw_f32(const std::filesystem::path& path, int width, int height);

/// Dispatches on extension: .png or .f32/.raw (raw needs width/height).
Image read_image(const std::filesystem::path& path, int width = 0, int height = 0);
void write_image(const std::filesystem::path& path, const Image& img);

}  // namespace meshsplat
