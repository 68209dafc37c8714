#include "latent_atlas/dataset.hpp"

#include <charconv>
#include <cmath>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "latent_atlas/binary_io.hpp"
#include "latent_atlas/error.hpp"
#include "latent_atlas/random.hpp"

namespace latent_atlas {

namespace {

void write_dataset_payload(ByteWriter& w, const std::string& name, std::size_t dimension,
                           const std::vector<EmbeddingRecord>& records) {
  w.str(name);
  w.u64(dimension);
  w.u64(records.size());
  for (const auto& r : records) {
    w.str(r.id);
    w.str(r.family);
    w.u8(r.pitch ? 1 : 0);
    w.i64(r.pitch.value_or(0));
    w.u8(r.audio_path ? 1 : 0);
    w.str(r.audio_path.value_or(""));
    for (double v : r.vector) w.f64(v);
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

// Splits one CSV line; supports double-quoted fields with "" escapes.
std::vector<std::string> split_csv_line(std::string_view line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (quoted) {
    throw Error(ErrorCode::parse, "line " + std::to_string(line_no) + ": unterminated quote");
  }
  fields.push_back(std::move(cur));
  return fields;
}

double parse_number(std::string_view text, std::size_t line_no) {
  text = trim(text);
  double v = 0.0;
  const char* first = text.data();
  if (!text.empty() && text.front() == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    if (ec == std::errc::result_out_of_range) {
      throw Error(ErrorCode::non_finite, "line " + std::to_string(line_no) +
                                             ": component out of double range");
    }
    throw Error(ErrorCode::parse,
                "line " + std::to_string(line_no) + ": bad number '" + std::string(text) + "'");
  }
  return v;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

}  // namespace

Dataset::Dataset(std::string name, std::vector<EmbeddingRecord> records)
    : name_(std::move(name)), records_(std::move(records)) {
  if (records_.empty()) throw Error(ErrorCode::empty_input, "dataset has no records");
  dimension_ = records_.front().vector.size();
  if (dimension_ < 2) {
    throw Error(ErrorCode::dimension_mismatch,
                "embedding dimension must be at least 2, got " + std::to_string(dimension_));
  }
  std::unordered_set<std::string> ids;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    if (r.vector.size() != dimension_) {
      throw Error(ErrorCode::dimension_mismatch,
                  "record " + std::to_string(i) + " ('" + r.id + "') has dimension " +
                      std::to_string(r.vector.size()) + ", expected " +
                      std::to_string(dimension_));
    }
    for (std::size_t d = 0; d < dimension_; ++d) {
      if (!std::isfinite(r.vector[d])) {
        throw Error(ErrorCode::non_finite, "record " + std::to_string(i) + " ('" + r.id +
                                               "') component " + std::to_string(d) +
                                               " is not finite");
      }
    }
    if (!ids.insert(r.id).second) {
      throw Error(ErrorCode::duplicate_id, "duplicate id '" + r.id + "'");
    }
  }
  ByteWriter w;
  write_dataset_payload(w, name_, dimension_, records_);
  checksum_ = fnv1a64(w.buffer());
}

Dataset ingest_jsonl(std::string_view text, std::string name) {
  std::vector<EmbeddingRecord> records;
  std::size_t line_no = 0;
  for (auto line : split_lines(text)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::parse, "line " + std::to_string(line_no) + ": " + e.what());
    }
    auto where = [&](const std::string& what) {
      return "line " + std::to_string(line_no) + ": " + what;
    };
    if (!obj.is_object()) throw Error(ErrorCode::parse, where("expected a JSON object"));
    if (!obj.contains("id") || !obj["id"].is_string()) {
      throw Error(ErrorCode::parse, where("missing string field 'id'"));
    }
    if (!obj.contains("family") || !obj["family"].is_string()) {
      throw Error(ErrorCode::parse, where("missing string field 'family'"));
    }
    if (!obj.contains("vector") || !obj["vector"].is_array()) {
      throw Error(ErrorCode::parse, where("missing array field 'vector'"));
    }
    EmbeddingRecord rec;
    rec.id = obj["id"].get<std::string>();
    rec.family = obj["family"].get<std::string>();
    for (const auto& v : obj["vector"]) {
      if (!v.is_number()) throw Error(ErrorCode::parse, where("non-numeric vector component"));
      rec.vector.push_back(v.get<double>());
    }
    if (auto it = obj.find("pitch"); it != obj.end() && !it->is_null()) {
      if (!it->is_number_integer()) throw Error(ErrorCode::parse, where("'pitch' must be an integer"));
      rec.pitch = it->get<int>();
    }
    if (auto it = obj.find("audio_path"); it != obj.end() && !it->is_null()) {
      if (!it->is_string()) throw Error(ErrorCode::parse, where("'audio_path' must be a string"));
      rec.audio_path = it->get<std::string>();
    }
    records.push_back(std::move(rec));
  }
  return Dataset(std::move(name), std::move(records));
}

Dataset ingest_csv(std::string_view text, std::string name) {
  auto lines = split_lines(text);
  std::size_t idx = 0;
  while (idx < lines.size() && trim(lines[idx]).empty()) ++idx;
  if (idx == lines.size()) throw Error(ErrorCode::empty_input, "CSV file is empty");

  const auto header = split_csv_line(trim(lines[idx]), idx + 1);
  static const char* kFixed[] = {"id", "family", "pitch", "audio_path"};
  if (header.size() < 4) throw Error(ErrorCode::parse, "CSV header too short");
  for (std::size_t i = 0; i < 4; ++i) {
    if (trim(header[i]) != kFixed[i]) {
      throw Error(ErrorCode::parse, std::string("CSV header column ") + std::to_string(i) +
                                        " must be '" + kFixed[i] + "'");
    }
  }
  for (std::size_t i = 4; i < header.size(); ++i) {
    if (trim(header[i]) != "v" + std::to_string(i - 4)) {
      throw Error(ErrorCode::parse, "CSV header column " + std::to_string(i) + " must be 'v" +
                                        std::to_string(i - 4) + "'");
    }
  }

  std::vector<EmbeddingRecord> records;
  for (++idx; idx < lines.size(); ++idx) {
    const auto line = trim(lines[idx]);
    if (line.empty()) continue;
    const std::size_t line_no = idx + 1;
    auto fields = split_csv_line(line, line_no);
    if (fields.size() < 4) throw Error(ErrorCode::parse, "line " + std::to_string(line_no) + ": too few fields");
    EmbeddingRecord rec;
    rec.id = std::string(trim(fields[0]));
    rec.family = std::string(trim(fields[1]));
    if (auto p = trim(fields[2]); !p.empty()) {
      int pitch = 0;
      auto [ptr, ec] = std::from_chars(p.data(), p.data() + p.size(), pitch);
      if (ec != std::errc() || ptr != p.data() + p.size()) {
        throw Error(ErrorCode::parse, "line " + std::to_string(line_no) + ": bad pitch");
      }
      rec.pitch = pitch;
    }
    if (auto a = trim(fields[3]); !a.empty()) rec.audio_path = std::string(a);
    for (std::size_t i = 4; i < fields.size(); ++i) {
      rec.vector.push_back(parse_number(fields[i], line_no));
    }
    records.push_back(std::move(rec));
  }
  return Dataset(std::move(name), std::move(records));
}

Dataset ingest(const std::filesystem::path& path, IngestFormat format) {
  const auto bytes = read_file_bytes(path);
  const std::string_view text(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  auto name = path.stem().string();
  return format == IngestFormat::jsonl ? ingest_jsonl(text, std::move(name))
                                       : ingest_csv(text, std::move(name));
}

std::vector<std::vector<double>> fixture_centers(int n_clusters, int dimension,
                                                 std::uint64_t seed) {
  if (n_clusters <= 0 || dimension <= 0) {
    throw Error(ErrorCode::invalid_argument, "fixture arguments must be positive");
  }
  Rng rng(seed);
  const auto dim = static_cast<std::size_t>(dimension);

  // Orthonormal basis of a random plane (Gram-Schmidt on Gaussian draws).
  std::vector<std::vector<double>> basis;
  for (int axis = 0; axis < std::min(2, dimension); ++axis) {
    std::vector<double> v(dim);
    for (auto& x : v) x = rng.normal();
    for (const auto& u : basis) {
      double dot = 0.0;
      for (std::size_t d = 0; d < dim; ++d) dot += v[d] * u[d];
      for (std::size_t d = 0; d < dim; ++d) v[d] -= dot * u[d];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    basis.push_back(std::move(v));
  }

  const double min_gap = 10.0 * kFixtureSigma;
  // Half-width of the square the plane coordinates are drawn from; grown if
  // rejection keeps failing.
  double half = min_gap * std::max(1.0, std::sqrt(static_cast<double>(n_clusters)));
  std::vector<std::vector<double>> planar;
  while (static_cast<int>(planar.size()) < n_clusters) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      std::vector<double> c(basis.size());
      for (auto& v : c) v = rng.uniform(-half, half);
      bool ok = true;
      for (const auto& other : planar) {
        double d2 = 0.0;
        for (std::size_t i = 0; i < c.size(); ++i) d2 += (c[i] - other[i]) * (c[i] - other[i]);
        if (d2 < min_gap * min_gap) {
          ok = false;
          break;
        }
      }
      if (ok) {
        planar.push_back(std::move(c));
        placed = true;
      }
    }
    if (!placed) half *= 1.5;
  }

  // The basis is orthonormal, so distances in the plane carry over to R^D.
  std::vector<std::vector<double>> centers;
  for (const auto& c : planar) {
    std::vector<double> x(dim, 0.0);
    for (std::size_t axis = 0; axis < basis.size(); ++axis) {
      for (std::size_t d = 0; d < dim; ++d) x[d] += c[axis] * basis[axis][d];
    }
    centers.push_back(std::move(x));
  }
  return centers;
}

Dataset synth_fixture(int n_clusters, int points_per_cluster, int dimension,
                      std::uint64_t seed) {
  if (n_clusters <= 0 || points_per_cluster <= 0 || dimension <= 0) {
    throw Error(ErrorCode::invalid_argument, "fixture arguments must be positive");
  }
  const auto centers = fixture_centers(n_clusters, dimension, seed);
  Rng rng(mix64(seed ^ 0x5eedf17eULL));
  std::vector<EmbeddingRecord> records;
  records.reserve(static_cast<std::size_t>(n_clusters) * points_per_cluster);
  for (int c = 0; c < n_clusters; ++c) {
    for (int p = 0; p < points_per_cluster; ++p) {
      EmbeddingRecord rec;
      rec.id = "c" + std::to_string(c) + "_p" + std::to_string(p);
      rec.family = std::to_string(c);
      rec.pitch = 60;
      rec.vector = centers[static_cast<std::size_t>(c)];
      if (points_per_cluster > 1) {
        for (auto& v : rec.vector) v += kFixtureSigma * rng.normal();
      }
      records.push_back(std::move(rec));
    }
  }
  return Dataset("fixture-" + std::to_string(n_clusters) + "x" +
                     std::to_string(points_per_cluster) + "-d" + std::to_string(dimension) +
                     "-s" + std::to_string(seed),
                 std::move(records));
}

std::vector<std::uint8_t> serialize(const Dataset& dataset) {
  ByteWriter w;
  write_dataset_payload(w, dataset.name(), dataset.dimension(), dataset.records());
  return wrap_container(ContainerKind::dataset, w.buffer());
}

Dataset deserialize_dataset(std::span<const std::uint8_t> file) {
  const auto payload = unwrap_container(ContainerKind::dataset, file);
  ByteReader r(payload);
  auto name = r.str();
  const auto dimension = r.u64();
  const auto count = r.u64();
  // Each record needs at least dimension * 8 bytes; reject absurd counts early.
  if (dimension == 0 || count > r.remaining() / (dimension * 8)) {
    throw Error(ErrorCode::corrupt_file, "dataset header inconsistent with payload size");
  }
  std::vector<EmbeddingRecord> records;
  records.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    EmbeddingRecord rec;
    rec.id = r.str();
    rec.family = r.str();
    const bool has_pitch = r.u8() != 0;
    const auto pitch = r.i64();
    if (has_pitch) rec.pitch = static_cast<int>(pitch);
    const bool has_audio = r.u8() != 0;
    auto audio = r.str();
    if (has_audio) rec.audio_path = std::move(audio);
    rec.vector.resize(static_cast<std::size_t>(dimension));
    for (auto& v : rec.vector) v = r.f64();
    records.push_back(std::move(rec));
  }
  if (!r.at_end()) throw Error(ErrorCode::corrupt_file, "trailing bytes in dataset payload");
  return Dataset(std::move(name), std::move(records));
}

void save(const Dataset& dataset, const std::filesystem::path& path) {
  write_file_atomic(path, serialize(dataset));
}

Dataset load_dataset(const std::filesystem::path& path) {
  return deserialize_dataset(read_file_bytes(path));
}

std::vector<std::uint8_t> serialize(const Matrix& matrix) {
  if (matrix.data.size() != matrix.rows * matrix.cols) {
    throw Error(ErrorCode::invalid_argument, "matrix data size does not match its shape");
  }
  ByteWriter w;
  w.u64(matrix.rows);
  w.u64(matrix.cols);
  for (double v : matrix.data) w.f64(v);
  return wrap_container(ContainerKind::matrix, w.buffer());
}

Matrix deserialize_matrix(std::span<const std::uint8_t> file) {
  const auto payload = unwrap_container(ContainerKind::matrix, file);
  ByteReader r(payload);
  Matrix m;
  m.rows = static_cast<std::size_t>(r.u64());
  m.cols = static_cast<std::size_t>(r.u64());
  if (m.cols != 0 && m.rows > r.remaining() / 8 / m.cols) {
    throw Error(ErrorCode::corrupt_file, "matrix shape inconsistent with payload size");
  }
  m.data.resize(m.rows * m.cols);
  for (auto& v : m.data) v = r.f64();
  if (!r.at_end()) throw Error(ErrorCode::corrupt_file, "trailing bytes in matrix payload");
  return m;
}

void save(const Matrix& matrix, const std::filesystem::path& path) {
  write_file_atomic(path, serialize(matrix));
}

Matrix load_matrix(const std::filesystem::path& path) {
  return deserialize_matrix(read_file_bytes(path));
}

}  // namespace latent_atlas
