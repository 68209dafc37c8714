#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "latent_atlas/atlas.hpp"
#include "latent_atlas/dataset.hpp"
#include "latent_atlas/image.hpp"
#include "latent_atlas/projection.hpp"

namespace latent_atlas {

using Color = std::array<std::uint8_t, 4>;

/// Ten categorical colors.
const std::vector<Color>& default_palette();

struct OverlaySpec {
  int marker_radius = 6;
  std::vector<Color> palette = default_palette();
  bool show_labels = false;
  bool legend = true;
};

struct Overlay {
  Image image;
  /// Marker centers in canvas pixel coordinates, one per record.
  std::vector<Point2> centers;
  /// Families in first-appearance order; index = palette slot.
  std::vector<std::string> families;
};

/// Families in order of first appearance in the dataset.
std::vector<std::string> family_order(const Dataset& dataset);

/// Copies the canvas and draws sample markers, optional id labels and an
/// optional legend strip below the map.
Overlay render_overlay(const Canvas& canvas, const ProjectionModel& model, const Dataset& dataset,
                       const OverlaySpec& spec = {});

// ---- bitmap text -------------------------------------------------------------

inline constexpr int kGlyphWidth = 3;
inline constexpr int kGlyphHeight = 5;

/// Rows of a 3x5 glyph, bit 2 = leftmost column. Letters are case-folded;
/// characters without a glyph draw as a solid block.
std::array<std::uint8_t, kGlyphHeight> glyph(char c);
int text_width(std::string_view text, int scale);
void draw_text(Image& image, int x, int y, std::string_view text, const Color& color, int scale);
void fill_rect(Image& image, int x, int y, int w, int h, const Color& color);
void fill_disc(Image& image, const Point2& center, double radius, const Color& color);

// ---- export ------------------------------------------------------------------

void export_png(const Canvas& canvas, const std::filesystem::path& path);

inline constexpr int kTileSize = 256;

struct ManifestSample {
  std::string id;
  std::string family;
  double x = 0, y = 0;
  std::optional<std::string> audio_path;
  bool operator==(const ManifestSample&) const = default;
};

struct TileManifest {
  int tile_size = kTileSize;
  int max_zoom = 0;
  WorldBounds world_bounds;
  int canvas_size = 0;
  std::string style;
  std::vector<ManifestSample> samples;
  // Bumped whenever tiles are rewritten.
  std::uint64_t version = 1;
  bool operator==(const TileManifest&) const = default;
};

/// Smallest z with tile_size * 2^z >= size.
int max_zoom_for(int size, int tile_size = kTileSize);

/// 2x2 box filter; odd edges average the pixels that exist. Integer means
/// round half to even.
Image downsample(const Image& image);

/// levels[z] for z in [0, max_zoom]; levels[max_zoom] is the canvas itself.
std::vector<Image> pyramid(const Image& image, int max_zoom);

/// Tile (tx, ty) of a level image, padded with transparent pixels.
Image cut_tile(const Image& level, int tx, int ty, int tile_size = kTileSize);

int tiles_across(int level_size, int tile_size = kTileSize);

struct TileId {
  int z = 0, x = 0, y = 0;
  bool operator==(const TileId&) const = default;
  auto operator<=>(const TileId&) const = default;
};

/// Tiles at every zoom whose footprint meets the canvas pixel rectangle.
std::vector<TileId> tiles_touching(const Rect& canvas_rect, int canvas_size, int max_zoom,
                                   int tile_size = kTileSize);

std::filesystem::path tile_path(const std::filesystem::path& out_dir, const TileId& id);

TileManifest make_manifest(const Canvas& canvas, const ProjectionModel& model,
                           const Dataset& dataset, const std::string& style);

std::string to_json(const TileManifest& manifest);
TileManifest parse_manifest(std::string_view text);

/// Writes every tile and manifest.json. Requires a fully covered canvas.
TileManifest export_tiles(const Canvas& canvas, const std::filesystem::path& out_dir,
                          const ProjectionModel& model, const Dataset& dataset,
                          const std::string& style);

/// Rewrites only the listed tiles from the current canvas.
void write_tiles(const Canvas& canvas, const std::filesystem::path& out_dir, int max_zoom,
                 const std::vector<TileId>& tiles);

}  // namespace latent_atlas
