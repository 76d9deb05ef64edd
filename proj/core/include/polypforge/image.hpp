#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "polypforge/nn/tensor.hpp"

namespace polypforge {

/// Interleaved 8-bit RGB raster, row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // width * height * 3

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::uint8_t* at(int x, int y) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

Image read_png(const std::filesystem::path& path);
void write_png(const Image& image, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const Image& image);

Image crop(const Image& image, int x, int y, int width, int height);
Image resize_bilinear(const Image& image, int width, int height);
Image flip_horizontal(const Image& image);
Image flip_vertical(const Image& image);
/// Quarter-turn rotation, `turns` counter-clockwise.
Image rotate90(const Image& image, int turns);

/// Maps 8-bit channels to [-1, 1]: v / 127.5 - 1.
void image_to_chw(const Image& image, std::span<double> out);
/// Stacks images of identical size into [N, 3, H, W] in [-1, 1].
nn::Tensor images_to_tensor(std::span<const Image> images);
/// Inverse of the normalization with clamping and round-to-nearest.
Image tensor_to_image(const nn::Tensor& batch, std::int64_t index);

}  // namespace polypforge
