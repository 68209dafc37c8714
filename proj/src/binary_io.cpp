#include "latent_atlas/binary_io.hpp"

#include <atomic>
#include <bit>
#include <cstring>
#include <fstream>

#include "latent_atlas/error.hpp"

namespace latent_atlas {

namespace {

constexpr char kMagic[8] = {'L', 'A', 'T', 'A', 'T', 'L', 'A', 'S'};

}  // namespace

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t hash) {
  for (std::uint8_t b : bytes) {
    hash ^= b;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  return fnv1a64({reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()});
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  buf_.insert(buf_.end(), s.begin(), s.end());
}

void ByteWriter::bytes(std::span<const std::uint8_t> b) {
  buf_.insert(buf_.end(), b.begin(), b.end());
}

void ByteReader::need(std::size_t n) const {
  if (data_.size() - pos_ < n) {
    throw Error(ErrorCode::corrupt_file, "unexpected end of data");
  }
}

std::uint8_t ByteReader::u8() {
  need(1);
  return data_[pos_++];
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_++]) << (8 * i);
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_++]) << (8 * i);
  return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::str() {
  const std::uint32_t n = u32();
  need(n);
  std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
  pos_ += n;
  return s;
}

std::span<const std::uint8_t> ByteReader::bytes(std::size_t n) {
  need(n);
  auto out = data_.subspan(pos_, n);
  pos_ += n;
  return out;
}

std::vector<std::uint8_t> wrap_container(ContainerKind kind,
                                         std::span<const std::uint8_t> payload) {
  ByteWriter w;
  w.bytes({reinterpret_cast<const std::uint8_t*>(kMagic), sizeof(kMagic)});
  w.u32(kContainerVersion);
  w.u32(static_cast<std::uint32_t>(kind));
  w.u64(payload.size());
  w.bytes(payload);
  w.u64(fnv1a64(payload));
  return w.take();
}

std::vector<std::uint8_t> unwrap_container(ContainerKind kind,
                                           std::span<const std::uint8_t> file) {
  ByteReader r(file);
  auto magic = r.bytes(sizeof(kMagic));
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorCode::corrupt_file, "bad file signature");
  }
  const auto version = r.u32();
  if (version != kContainerVersion) {
    throw Error(ErrorCode::corrupt_file,
                "unsupported container version " + std::to_string(version));
  }
  const auto got_kind = r.u32();
  if (got_kind != static_cast<std::uint32_t>(kind)) {
    throw Error(ErrorCode::corrupt_file, "container holds kind " +
                                             std::to_string(got_kind) + ", expected " +
                                             std::to_string(static_cast<std::uint32_t>(kind)));
  }
  const auto size = r.u64();
  if (size > r.remaining()) {
    throw Error(ErrorCode::corrupt_file, "truncated container payload");
  }
  auto payload = r.bytes(static_cast<std::size_t>(size));
  const auto checksum = r.u64();
  if (!r.at_end()) throw Error(ErrorCode::corrupt_file, "trailing bytes after container");
  if (checksum != fnv1a64(payload)) {
    throw Error(ErrorCode::corrupt_file, "container checksum mismatch");
  }
  return {payload.begin(), payload.end()};
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  std::vector<std::uint8_t> out((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::io, "read failed: " + path.string());
  return out;
}

void write_file_atomic(const std::filesystem::path& path,
                       std::span<const std::uint8_t> bytes) {
  static std::atomic<unsigned> counter{0};
  auto tmp = path;
  tmp += ".tmp" + std::to_string(counter.fetch_add(1));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::io, "write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorCode::io, "cannot rename into " + path.string());
  }
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

}  // namespace latent_atlas
