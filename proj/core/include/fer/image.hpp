#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fer/tensor.hpp"

namespace fer {

/// 8-bit interleaved pixel buffer, row-major, channels fastest.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int h, int w, int c, std::uint8_t fill = 0);

  std::uint8_t& at(int r, int c, int ch) { return pixels[(static_cast<std::size_t>(r) * width + c) * channels + ch]; }
  std::uint8_t at(int r, int c, int ch) const {
    return pixels[(static_cast<std::size_t>(r) * width + c) * channels + ch];
  }
  bool operator==(const Image&) const = default;
};

/// Replicates a single channel to three; three-channel images pass through.
Image to_rgb(const Image& image);

/// Bilinear resample with pixel centres at (i + 0.5) / N, edges clamped.
Image resize_bilinear(const Image& image, int height, int width);

/// Rotation by angle_deg (counter-clockwise as displayed) about the image
/// centre, bilinear, borders filled by edge replication.
Image rotate(const Image& image, double angle_deg);

/// Per channel, maps [min, max] linearly onto [0, 255]. Constant channels
/// are left unchanged.
Image autocontrast(const Image& image);

/// (p / 255 - 0.5) / 0.5, giving [H, W, C] values in [-1, 1].
Tensor normalize(const Image& image);

/// Decodes PNG, JPEG or uncompressed BMP by signature. Throws InputError.
Image decode_image(std::span<const std::uint8_t> bytes);
Image read_image(const std::filesystem::path& path);

/// 8-bit PNG, gray or RGB.
void write_png(const std::filesystem::path& path, const Image& image);

}  // namespace fer
