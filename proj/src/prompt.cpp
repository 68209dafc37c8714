#include "latent_atlas/prompt.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <json.hpp>

#include "latent_atlas/binary_io.hpp"
#include "latent_atlas/error.hpp"
#include "latent_atlas/random.hpp"

namespace latent_atlas {

namespace {

std::size_t count_slots(std::string_view text) {
  std::size_t count = 0;
  for (auto pos = text.find(kKeywordSlot); pos != std::string_view::npos;
       pos = text.find(kKeywordSlot, pos + kKeywordSlot.size())) {
    ++count;
  }
  return count;
}

double norm(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

}  // namespace

void validate(const PromptSpec& spec) {
  if (count_slots(spec.prompt_template) != 1) {
    throw Error(ErrorCode::invalid_argument,
                "style template must contain exactly one " + std::string(kKeywordSlot) + " slot");
  }
  if (spec.keywords.empty()) throw Error(ErrorCode::invalid_argument, "style has no keywords");
  if (!(spec.temperature > 0.0) || !std::isfinite(spec.temperature)) {
    throw Error(ErrorCode::invalid_argument, "temperature must be a positive finite number");
  }
  if (spec.keyword_embeddings) {
    const auto& m = *spec.keyword_embeddings;
    if (m.rows != spec.keywords.size()) {
      throw Error(ErrorCode::dimension_mismatch,
                  "keyword embedding rows (" + std::to_string(m.rows) +
                      ") do not match keyword count (" + std::to_string(spec.keywords.size()) + ")");
    }
    if (m.cols == 0) throw Error(ErrorCode::dimension_mismatch, "keyword embeddings have no columns");
    for (std::size_t r = 0; r < m.rows; ++r) {
      if (std::abs(norm(m.row(r)) - 1.0) > 1e-6) {
        throw Error(ErrorCode::invalid_argument,
                    "keyword embedding " + std::to_string(r) + " is not unit norm");
      }
    }
  }
}

std::vector<std::string> lint(const PromptSpec& spec) {
  std::vector<std::string> warnings;
  std::map<std::string, int> seen;
  for (const auto& k : spec.keywords) ++seen[k];
  for (const auto& [k, n] : seen) {
    if (n > 1) {
      warnings.push_back("keyword \"" + k + "\" appears " + std::to_string(n) +
                         " times and carries that much extra weight");
    }
  }
  return warnings;
}

std::string expand_template(const PromptSpec& spec, std::size_t index) {
  if (index >= spec.keywords.size()) {
    throw Error(ErrorCode::out_of_range, "keyword index " + std::to_string(index) +
                                             " out of range (K=" +
                                             std::to_string(spec.keywords.size()) + ")");
  }
  const auto pos = spec.prompt_template.find(kKeywordSlot);
  if (pos == std::string::npos) {
    throw Error(ErrorCode::invalid_argument, "style template has no keyword slot");
  }
  std::string out = spec.prompt_template;
  out.replace(pos, kKeywordSlot.size(), spec.keywords[index]);
  return out;
}

std::vector<std::string> expand_all(const PromptSpec& spec) {
  std::vector<std::string> out;
  out.reserve(spec.keywords.size());
  for (std::size_t k = 0; k < spec.keywords.size(); ++k) out.push_back(expand_template(spec, k));
  return out;
}

KeywordWeights keyword_weights(const PromptSpec& spec, std::span<const double> embedding) {
  if (!spec.keyword_embeddings) {
    throw Error(ErrorCode::invalid_argument, "style '" + spec.name + "' has no keyword embeddings");
  }
  const auto& m = *spec.keyword_embeddings;
  if (m.cols != embedding.size()) {
    throw Error(ErrorCode::dimension_mismatch,
                "embedding dimension " + std::to_string(embedding.size()) +
                    " does not match keyword embeddings (" + std::to_string(m.cols) + ")");
  }
  const double en = norm(embedding);
  if (!(en > 0.0)) throw Error(ErrorCode::invalid_argument, "zero-norm embedding");

  std::vector<double> logits(m.rows);
  for (std::size_t k = 0; k < m.rows; ++k) {
    const auto row = m.row(k);
    double dot = 0.0;
    for (std::size_t d = 0; d < row.size(); ++d) dot += embedding[d] * row[d];
    // Rows are unit norm by invariant; normalize anyway so cosine is exact.
    logits[k] = dot / (en * norm(row)) / spec.temperature;
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  KeywordWeights out;
  out.weights.resize(m.rows);
  double total = 0.0;
  for (std::size_t k = 0; k < m.rows; ++k) {
    out.weights[k] = std::exp(logits[k] - top);
    total += out.weights[k];
  }
  for (auto& w : out.weights) w /= total;
  return out;
}

std::vector<double> interpolate_prompt_embedding(const KeywordWeights& weights,
                                                 const Matrix& prompt_embeddings) {
  if (prompt_embeddings.rows != weights.weights.size()) {
    throw Error(ErrorCode::dimension_mismatch,
                "prompt embedding rows (" + std::to_string(prompt_embeddings.rows) +
                    ") do not match weight count (" + std::to_string(weights.weights.size()) + ")");
  }
  std::vector<double> out(prompt_embeddings.cols, 0.0);
  for (std::size_t k = 0; k < prompt_embeddings.rows; ++k) {
    const auto row = prompt_embeddings.row(k);
    for (std::size_t d = 0; d < out.size(); ++d) out[d] += weights.weights[k] * row[d];
  }
  return out;
}

PromptSpec parse_style(std::string_view text, std::string name,
                       const std::filesystem::path& base_dir,
                       const std::optional<std::filesystem::path>& embeddings_override) {
  PromptSpec spec;
  std::optional<std::filesystem::path> embeddings_path = embeddings_override;
  try {
    const auto j = nlohmann::json::parse(text);
    spec.name = j.value("name", name);
    spec.prompt_template = j.at("template").get<std::string>();
    spec.keywords = j.at("keywords").get<std::vector<std::string>>();
    spec.temperature = j.value("temperature", kDefaultTemperature);
    if (!embeddings_path && j.contains("keyword_embeddings_path") &&
        !j["keyword_embeddings_path"].is_null()) {
      std::filesystem::path p = j["keyword_embeddings_path"].get<std::string>();
      embeddings_path = p.is_absolute() ? p : base_dir / p;
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, "malformed style file: " + std::string(e.what()));
  }
  if (embeddings_path) spec.keyword_embeddings = load_matrix(*embeddings_path);
  validate(spec);
  return spec;
}

PromptSpec load_style(const std::filesystem::path& path,
                      const std::optional<std::filesystem::path>& embeddings_override) {
  const auto bytes = read_file_bytes(path);
  return parse_style({reinterpret_cast<const char*>(bytes.data()), bytes.size()},
                     path.stem().string(), path.parent_path(), embeddings_override);
}

Matrix random_keyword_embeddings(std::size_t keywords, std::size_t dimension,
                                 std::uint64_t seed) {
  if (keywords == 0 || dimension == 0) {
    throw Error(ErrorCode::invalid_argument, "keyword embedding shape must be positive");
  }
  Rng rng(seed);
  Matrix m{keywords, dimension, std::vector<double>(keywords * dimension)};
  for (std::size_t r = 0; r < keywords; ++r) {
    auto row = m.row(r);
    for (auto& v : row) v = rng.normal();
    const double n = norm(row);
    for (auto& v : row) v /= n;
  }
  return m;
}

}  // namespace latent_atlas
