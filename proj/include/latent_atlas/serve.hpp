#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "latent_atlas/atlas.hpp"
#include "latent_atlas/dataset.hpp"
#include "latent_atlas/projection.hpp"
#include "latent_atlas/prompt.hpp"
#include "latent_atlas/renderer.hpp"

namespace latent_atlas {

/// File names inside an atlas directory, shared by the CLI and the server.
struct AtlasLayout {
  std::filesystem::path dir;

  std::filesystem::path dataset() const { return dir / "dataset.bin"; }
  std::filesystem::path model() const { return dir / "model.json"; }
  std::filesystem::path run_state() const { return dir / "run.state"; }
  std::filesystem::path map_png() const { return dir / "map.png"; }
  std::filesystem::path overlay_png() const { return dir / "overlay.png"; }
  std::filesystem::path tiles() const { return dir / "tiles"; }
  std::filesystem::path manifest() const { return tiles() / "manifest.json"; }
};

struct NearestSample {
  std::size_t index = 0;
  std::string id;
  std::string family;
  double distance = 0.0;
};

struct ProbeResult {
  Point2 world{};
  std::vector<NearestSample> nearest;
  std::vector<std::pair<std::string, double>> keyword_weights;
};

inline constexpr std::size_t kProbeNeighbors = 5;

/// Nearest projected samples (ascending, ties by index) and keyword weights
/// sorted descending.
ProbeResult probe(const ProjectionModel& model, const Dataset& dataset, const PromptSpec& style,
                  const Point2& world, std::size_t neighbors = kProbeNeighbors);

std::string to_json(const ProbeResult& result);

enum class JobState { queued, running, done, failed };
std::string to_string(JobState state);

using RendererFactory = std::function<std::unique_ptr<Renderer>(const AtlasRun&)>;

struct ServeOptions {
  std::filesystem::path atlas_dir;
  std::filesystem::path styles_dir;
  std::string host = "127.0.0.1";
  int port = 0;  // 0 picks a free port
  std::string cors_origin = "*";
  /// Used for styles whose file names no keyword embeddings.
  std::optional<std::filesystem::path> keyword_embeddings;
  /// Backend for restyle jobs; defaults to procedural seeded with the run seed.
  RendererFactory renderer;
  /// Base for relative audio paths; defaults to the atlas directory.
  std::optional<std::filesystem::path> audio_root;
};

/// Serves a finished atlas directory over HTTP.
class AtlasServer {
 public:
  explicit AtlasServer(ServeOptions options);
  ~AtlasServer();
  AtlasServer(const AtlasServer&) = delete;
  AtlasServer& operator=(const AtlasServer&) = delete;

  /// Binds and serves on a background thread; returns the bound port.
  int start();
  /// Serves on the calling thread until stop().
  void run();
  void stop();
  int port() const;

  /// Blocks until the current restyle job (if any) finishes.
  void wait_idle();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace latent_atlas
