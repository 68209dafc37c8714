#include "latent_atlas/image.hpp"

#include <algorithm>
#include <cstring>

#include <png.h>

#include "latent_atlas/binary_io.hpp"
#include "latent_atlas/error.hpp"

namespace latent_atlas {

namespace {

std::vector<std::uint8_t> write_memory(png_image& img, const void* buffer) {
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, buffer, 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw Error(ErrorCode::internal, "PNG encode failed: " + msg);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, buffer, 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw Error(ErrorCode::internal, "PNG encode failed: " + msg);
  }
  out.resize(size);
  return out;
}

std::vector<std::uint8_t> read_memory(std::span<const std::uint8_t> bytes, png_uint_32 format,
                                      int& width, int& height) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw Error(ErrorCode::corrupt_file, std::string("PNG decode failed: ") + img.message);
  }
  img.format = format;
  std::vector<std::uint8_t> out(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw Error(ErrorCode::corrupt_file, "PNG decode failed: " + msg);
  }
  width = static_cast<int>(img.width);
  height = static_cast<int>(img.height);
  return out;
}

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

}  // namespace

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](auto b) { return b != 0; }));
}

Image crop(const Image& src, int x0, int y0, int w, int h) {
  if (x0 < 0 || y0 < 0 || w < 0 || h < 0 || x0 + w > src.width || y0 + h > src.height) {
    throw Error(ErrorCode::out_of_range, "crop rectangle outside image");
  }
  Image out(w, h);
  for (int y = 0; y < h; ++y) {
    std::memcpy(out.at(0, y), src.at(x0, y0 + y), static_cast<std::size_t>(w) * 4);
  }
  return out;
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  if (!image.valid() || image.width == 0 || image.height == 0) {
    throw Error(ErrorCode::invalid_argument, "cannot encode an empty or malformed image");
  }
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGBA;
  return write_memory(img, image.pixels.data());
}

Image decode_png(std::span<const std::uint8_t> bytes) {
  Image out;
  out.pixels = read_memory(bytes, PNG_FORMAT_RGBA, out.width, out.height);
  return out;
}

std::vector<std::uint8_t> encode_mask_png(const Mask& mask) {
  if (mask.width <= 0 || mask.height <= 0) {
    throw Error(ErrorCode::invalid_argument, "cannot encode an empty mask");
  }
  std::vector<std::uint8_t> gray(mask.bits.size());
  std::transform(mask.bits.begin(), mask.bits.end(), gray.begin(),
                 [](auto b) { return static_cast<std::uint8_t>(b ? 255 : 0); });
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(mask.width);
  img.height = static_cast<png_uint_32>(mask.height);
  img.format = PNG_FORMAT_GRAY;
  return write_memory(img, gray.data());
}

Mask decode_mask_png(std::span<const std::uint8_t> bytes) {
  Mask out;
  const auto gray = read_memory(bytes, PNG_FORMAT_GRAY, out.width, out.height);
  out.bits.resize(gray.size());
  std::transform(gray.begin(), gray.end(), out.bits.begin(),
                 [](auto g) { return static_cast<std::uint8_t>(g >= 128 ? 1 : 0); });
  return out;
}

void write_png(const Image& image, const std::filesystem::path& path) {
  write_file_atomic(path, encode_png(image));
}

Image read_png(const std::filesystem::path& path) { return decode_png(read_file_bytes(path)); }

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (const auto rest = bytes.size() - i; rest > 0) {
    std::uint32_t v = bytes[i] << 16;
    if (rest == 2) v |= bytes[i + 1] << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += rest == 2 ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  // Tolerate a data-URL prefix.
  if (const auto comma = text.find("base64,"); comma != std::string_view::npos) {
    text.remove_prefix(comma + 7);
  }
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  std::uint32_t acc = 0;
  int bits = 0;
  std::size_t padding = 0;
  for (char c : text) {
    if (c == '\n' || c == '\r' || c == ' ') continue;
    if (c == '=') {
      ++padding;
      continue;
    }
    const int v = value(c);
    if (v < 0 || padding > 0) throw Error(ErrorCode::parse, "invalid base64 input");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xff));
    }
  }
  if (padding > 2 || bits >= 6) throw Error(ErrorCode::parse, "invalid base64 length");
  return out;
}

}  // namespace latent_atlas
