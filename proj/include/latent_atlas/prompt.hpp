#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "latent_atlas/dataset.hpp"

namespace latent_atlas {

inline constexpr std::string_view kKeywordSlot = "<KEYWORD>";
inline constexpr double kDefaultTemperature = 0.07;

/// A map style: a prompt template with one keyword slot, the keywords, and
/// optionally one unit-norm text embedding per keyword.
struct PromptSpec {
  std::string name;
  std::string prompt_template;
  std::vector<std::string> keywords;
  std::optional<Matrix> keyword_embeddings;
  double temperature = kDefaultTemperature;

  bool operator==(const PromptSpec&) const = default;
};

/// Throws ErrorCode::invalid_argument when a PromptSpec invariant is broken.
void validate(const PromptSpec& spec);

/// Non-fatal findings, e.g. duplicate keywords.
std::vector<std::string> lint(const PromptSpec& spec);

std::string expand_template(const PromptSpec& spec, std::size_t index);
std::vector<std::string> expand_all(const PromptSpec& spec);

/// Softmax-normalized weights; each is >= 0 and they sum to 1.
struct KeywordWeights {
  std::vector<double> weights;
};

/// softmax(cosine(embedding, keyword_k) / temperature), max-shifted.
KeywordWeights keyword_weights(const PromptSpec& spec, std::span<const double> embedding);

/// Sum over k of weights_k * row k.
std::vector<double> interpolate_prompt_embedding(const KeywordWeights& weights,
                                                 const Matrix& prompt_embeddings);

/// Reads a style file (JSON: template, keywords, temperature, optional
/// keyword_embeddings_path relative to the style file). An explicit
/// `embeddings_override` replaces the path named in the file.
PromptSpec load_style(const std::filesystem::path& path,
                      const std::optional<std::filesystem::path>& embeddings_override = std::nullopt);
PromptSpec parse_style(std::string_view text, std::string name,
                       const std::filesystem::path& base_dir,
                       const std::optional<std::filesystem::path>& embeddings_override = std::nullopt);

/// Seeded Gaussian rows normalized to unit length; a stand-in for text-encoder
/// output when exercising the pipeline without a model.
Matrix random_keyword_embeddings(std::size_t keywords, std::size_t dimension,
                                 std::uint64_t seed);

}  // namespace latent_atlas
