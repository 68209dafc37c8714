#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace latent_atlas {

/// Row-major RGBA, 8 bits per channel.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 4, 0) {}

  std::size_t offset(int x, int y) const {
    return (static_cast<std::size_t>(y) * width + x) * 4;
  }
  std::uint8_t* at(int x, int y) { return pixels.data() + offset(x, y); }
  const std::uint8_t* at(int x, int y) const { return pixels.data() + offset(x, y); }
  bool valid() const {
    return width >= 0 && height >= 0 &&
           pixels.size() == static_cast<std::size_t>(width) * height * 4;
  }
  bool operator==(const Image&) const = default;
};

/// Row-major booleans stored as bytes; nonzero = generate, zero = preserve.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(int w, int h, bool value = false)
      : width(w), height(h), bits(static_cast<std::size_t>(w) * h, value ? 1 : 0) {}

  bool get(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool v) { bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
  std::size_t count() const;
  bool operator==(const Mask&) const = default;
};

Image crop(const Image& src, int x0, int y0, int w, int h);

std::vector<std::uint8_t> encode_png(const Image& image);
Image decode_png(std::span<const std::uint8_t> bytes);
/// Grayscale PNG with 255 where the mask is set and 0 elsewhere.
std::vector<std::uint8_t> encode_mask_png(const Mask& mask);
/// Pixels >= 128 read as set.
Mask decode_mask_png(std::span<const std::uint8_t> bytes);

void write_png(const Image& image, const std::filesystem::path& path);
Image read_png(const std::filesystem::path& path);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace latent_atlas
