#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "latent_atlas/image.hpp"
#include "latent_atlas/projection.hpp"
#include "latent_atlas/prompt.hpp"
#include "latent_atlas/renderer.hpp"

namespace latent_atlas {

inline constexpr int kDefaultCanvasSize = 1024;
inline constexpr int kDefaultPatchSize = 256;
inline constexpr int kDefaultOverlap = 64;
inline constexpr double kDefaultMargin = 0.05;

struct WorldBounds {
  double min_x = 0, min_y = 0, max_x = 0, max_y = 0;
  bool operator==(const WorldBounds&) const = default;
};

/// pixel = (world - origin) * scale. The y scale is negative so that larger
/// latent y is drawn higher up. Pixel (i, j) covers [i, i+1) x [j, j+1).
struct WorldMapping {
  double origin_x = 0, origin_y = 0;
  double scale_x = 1, scale_y = -1;

  Point2 world_to_pixel(const Point2& w) const {
    return {(w[0] - origin_x) * scale_x, (w[1] - origin_y) * scale_y};
  }
  Point2 pixel_to_world(const Point2& p) const {
    return {origin_x + p[0] / scale_x, origin_y + p[1] / scale_y};
  }
  bool operator==(const WorldMapping&) const = default;
};

struct Canvas {
  Image image;
  Mask covered;
  WorldMapping world;

  int width() const { return image.width; }
  int height() const { return image.height; }
  /// World box spanned by the full pixel area.
  WorldBounds bounds() const;
  bool operator==(const Canvas&) const = default;
};

struct Rect {
  int x = 0, y = 0, w = 0, h = 0;
  bool empty() const { return w <= 0 || h <= 0; }
  bool contains(int px, int py) const { return px >= x && px < x + w && py >= y && py < y + h; }
  bool operator==(const Rect&) const = default;
};

struct PatchJob {
  Rect rect;
  Point2 center_world{};
  bool operator==(const PatchJob&) const = default;
};

struct PatchPlan {
  int patch_size = 0;
  int overlap = 0;
  std::vector<PatchJob> jobs;
  bool operator==(const PatchPlan&) const = default;
};

struct AtlasRun {
  Canvas canvas;
  PatchPlan plan;
  PromptSpec style;
  std::string style_path;
  std::string backend;
  std::uint64_t seed = 0;
  std::size_t completed = 0;
  // Checksum of the dataset the projection was fitted on.
  std::uint64_t source_checksum = 0;
  bool operator==(const AtlasRun&) const = default;
};

/// Bounding box of the projected points, grown by margin_fraction of its span
/// on each side and letterboxed into a size x size canvas.
Canvas make_canvas(const ProjectionModel& model, int size, double margin_fraction = kDefaultMargin);

/// Start offsets of a raster axis covering [lo, hi) inside [0, extent).
std::vector<int> axis_starts(int lo, int hi, int extent, int patch_size, int overlap);

PatchPlan plan_patches(const Canvas& canvas, int patch_size = kDefaultPatchSize,
                       int overlap = kDefaultOverlap);
/// Plan whose patches cover `region`, each kept inside the canvas.
PatchPlan plan_region(const Canvas& canvas, const Rect& region, int patch_size, int overlap);

KeywordWeights derive_weights(const ProjectionModel& model, const Dataset& dataset,
                              const PromptSpec& style, const Point2& center_world);

AtlasRun make_run(Canvas canvas, PatchPlan plan, PromptSpec style, std::string backend,
                  std::uint64_t seed, std::uint64_t source_checksum);

struct RunOptions {
  /// After every finished job, and once more when a backend failure aborts the run.
  std::function<void(const AtlasRun&)> checkpoint;
  /// Called after compositing a job with the mask that was written.
  std::function<void(std::size_t job, const Rect&, const Mask&)> on_composite;
  /// Called before each job starts; for progress reporting.
  std::function<void(std::size_t job, std::size_t total)> on_job;
};

/// Executes jobs [run.completed, jobs) in order. Backend errors leave
/// run.completed at the failing job and are rethrown after the checkpoint.
const Canvas& run(AtlasRun& atlas, const ProjectionModel& model, const Dataset& dataset,
                  Renderer& backend, const RunOptions& options = {});

/// Pixels whose area meets the world rectangle, clipped to the canvas.
Rect world_rect_to_pixels(const Canvas& canvas, const WorldBounds& rect_world);

/// Regenerates the pixels inside rect_world with style2, using the rest of the
/// map as context.
const Canvas& restyle_region(AtlasRun& atlas, const ProjectionModel& model, const Dataset& dataset,
                             const WorldBounds& rect_world, PromptSpec style2, Renderer& backend,
                             const RunOptions& options = {});

std::vector<std::uint8_t> serialize(const AtlasRun& atlas);
AtlasRun deserialize_run(std::span<const std::uint8_t> file);
void save(const AtlasRun& atlas, const std::filesystem::path& path);
AtlasRun load_run(const std::filesystem::path& path);

}  // namespace latent_atlas
