#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace latent_atlas {

// Native container layout (little-endian):
//   "LATATLAS" | u32 version | u32 kind | u64 payload size | payload | u64 fnv1a(payload)
enum class ContainerKind : std::uint32_t { dataset = 1, matrix = 2, run_state = 3 };

inline constexpr std::uint32_t kContainerVersion = 1;

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes,
                      std::uint64_t hash = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view bytes);

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v);
  void str(std::string_view s);
  void bytes(std::span<const std::uint8_t> b);

  const std::vector<std::uint8_t>& buffer() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

// Every read is bounds-checked; underflow throws ErrorCode::corrupt_file.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64();
  std::string str();
  std::span<const std::uint8_t> bytes(std::size_t n);

  bool at_end() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const;

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> wrap_container(ContainerKind kind,
                                         std::span<const std::uint8_t> payload);
// Validates magic, version, kind, length and checksum; returns the payload.
std::vector<std::uint8_t> unwrap_container(ContainerKind kind,
                                           std::span<const std::uint8_t> file);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
// Writes to a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path,
                       std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

}  // namespace latent_atlas
