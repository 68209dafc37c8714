#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace latent_atlas {

struct EmbeddingRecord {
  std::string id;
  std::vector<double> vector;
  std::string family;
  std::optional<int> pitch;
  std::optional<std::string> audio_path;

  bool operator==(const EmbeddingRecord&) const = default;
};

/// An immutable, validated set of equal-dimension embeddings.
///
/// Construction enforces: at least one record, dimension >= 2, every vector of
/// that dimension with finite components, unique ids. Record order is kept.
class Dataset {
 public:
  Dataset(std::string name, std::vector<EmbeddingRecord> records);

  const std::string& name() const { return name_; }
  std::size_t dimension() const { return dimension_; }
  std::size_t size() const { return records_.size(); }
  const std::vector<EmbeddingRecord>& records() const { return records_; }
  const EmbeddingRecord& operator[](std::size_t i) const { return records_[i]; }
  std::span<const double> vector(std::size_t i) const { return records_[i].vector; }

  // FNV-1a over the native serialization; identifies the dataset for model pairing.
  std::uint64_t checksum() const { return checksum_; }

  bool operator==(const Dataset& other) const {
    return name_ == other.name_ && dimension_ == other.dimension_ &&
           records_ == other.records_;
  }

 private:
  std::string name_;
  std::size_t dimension_ = 0;
  std::vector<EmbeddingRecord> records_;
  std::uint64_t checksum_ = 0;
};

enum class IngestFormat { jsonl, csv };

Dataset ingest(const std::filesystem::path& path, IngestFormat format);
Dataset ingest_jsonl(std::string_view text, std::string name);
Dataset ingest_csv(std::string_view text, std::string name);

/// Deterministic clustered fixture. Cluster centers lie on a random plane
/// through the origin of R^D, drawn uniformly in a square of that plane and
/// rejected until every pair is at least 10 standard deviations apart; points
/// are center + isotropic N(0, 1) noise in all D dimensions. Single-point
/// clusters sit exactly on their center. Family label is the cluster index, pitch is 60 (C4).
Dataset synth_fixture(int n_clusters, int points_per_cluster, int dimension,
                      std::uint64_t seed);
std::vector<std::vector<double>> fixture_centers(int n_clusters, int dimension,
                                                 std::uint64_t seed);
inline constexpr double kFixtureSigma = 1.0;

std::vector<std::uint8_t> serialize(const Dataset& dataset);
Dataset deserialize_dataset(std::span<const std::uint8_t> file);
void save(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

/// Dense row-major matrix stored in the same container format as datasets.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  bool operator==(const Matrix&) const = default;
};

std::vector<std::uint8_t> serialize(const Matrix& matrix);
Matrix deserialize_matrix(std::span<const std::uint8_t> file);
void save(const Matrix& matrix, const std::filesystem::path& path);
Matrix load_matrix(const std::filesystem::path& path);

}  // namespace latent_atlas
