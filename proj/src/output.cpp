#include "latent_atlas/output.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

#include <json.hpp>

#include "latent_atlas/binary_io.hpp"
#include "latent_atlas/error.hpp"

namespace latent_atlas {

namespace {

constexpr Color kWhite{255, 255, 255, 255};
constexpr Color kBlack{0, 0, 0, 255};

constexpr int kTextScale = 2;
constexpr int kLegendPad = 8;
constexpr int kLegendRow = 16;
constexpr int kSwatch = 10;

std::uint8_t mean_half_even(unsigned sum, unsigned count) {
  unsigned q = sum / count;
  const unsigned r2 = 2 * (sum % count);
  if (r2 > count || (r2 == count && (q & 1u))) ++q;
  return static_cast<std::uint8_t>(q);
}

}  // namespace

const std::vector<Color>& default_palette() {
  static const std::vector<Color> palette = {
      {31, 119, 180, 255}, {255, 127, 14, 255}, {44, 160, 44, 255},  {214, 39, 40, 255},
      {148, 103, 189, 255}, {140, 86, 75, 255}, {227, 119, 194, 255}, {127, 127, 127, 255},
      {188, 189, 34, 255}, {23, 190, 207, 255},
  };
  return palette;
}

std::vector<std::string> family_order(const Dataset& dataset) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& r : dataset.records()) {
    if (seen.insert(r.family).second) out.push_back(r.family);
  }
  return out;
}

std::array<std::uint8_t, kGlyphHeight> glyph(char c) {
  if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
  switch (c) {
    case 'A': return {2, 5, 7, 5, 5};
    case 'B': return {6, 5, 6, 5, 6};
    case 'C': return {3, 4, 4, 4, 3};
    case 'D': return {6, 5, 5, 5, 6};
    case 'E': return {7, 4, 6, 4, 7};
    case 'F': return {7, 4, 6, 4, 4};
    case 'G': return {3, 4, 5, 5, 3};
    case 'H': return {5, 5, 7, 5, 5};
    case 'I': return {7, 2, 2, 2, 7};
    case 'J': return {1, 1, 1, 5, 2};
    case 'K': return {5, 5, 6, 5, 5};
    case 'L': return {4, 4, 4, 4, 7};
    case 'M': return {5, 7, 7, 5, 5};
    case 'N': return {6, 5, 5, 5, 5};
    case 'O': return {2, 5, 5, 5, 2};
    case 'P': return {6, 5, 6, 4, 4};
    case 'Q': return {2, 5, 5, 6, 3};
    case 'R': return {6, 5, 6, 5, 5};
    case 'S': return {3, 4, 2, 1, 6};
    case 'T': return {7, 2, 2, 2, 2};
    case 'U': return {5, 5, 5, 5, 7};
    case 'V': return {5, 5, 5, 5, 2};
    case 'W': return {5, 5, 7, 7, 5};
    case 'X': return {5, 5, 2, 5, 5};
    case 'Y': return {5, 5, 2, 2, 2};
    case 'Z': return {7, 1, 2, 4, 7};
    case '0': return {7, 5, 5, 5, 7};
    case '1': return {2, 6, 2, 2, 7};
    case '2': return {6, 1, 2, 4, 7};
    case '3': return {6, 1, 2, 1, 6};
    case '4': return {5, 5, 7, 1, 1};
    case '5': return {7, 4, 6, 1, 6};
    case '6': return {3, 4, 7, 5, 7};
    case '7': return {7, 1, 2, 2, 2};
    case '8': return {7, 5, 7, 5, 7};
    case '9': return {7, 5, 7, 1, 6};
    case '-': return {0, 0, 7, 0, 0};
    case '_': return {0, 0, 0, 0, 7};
    case '.': return {0, 0, 0, 0, 2};
    case ',': return {0, 0, 0, 2, 4};
    case ':': return {0, 2, 0, 2, 0};
    case '/': return {1, 1, 2, 4, 4};
    case '(': return {2, 4, 4, 4, 2};
    case ')': return {2, 1, 1, 1, 2};
    case '\'': return {2, 2, 0, 0, 0};
    case ' ': return {0, 0, 0, 0, 0};
    default: return {7, 7, 7, 7, 7};
  }
}

int text_width(std::string_view text, int scale) {
  if (text.empty()) return 0;
  return static_cast<int>(text.size()) * (kGlyphWidth + 1) * scale - scale;
}

void fill_rect(Image& image, int x, int y, int w, int h, const Color& color) {
  const int x0 = std::max(0, x), y0 = std::max(0, y);
  const int x1 = std::min(image.width, x + w), y1 = std::min(image.height, y + h);
  for (int py = y0; py < y1; ++py) {
    for (int px = x0; px < x1; ++px) std::memcpy(image.at(px, py), color.data(), 4);
  }
}

void draw_text(Image& image, int x, int y, std::string_view text, const Color& color, int scale) {
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto g = glyph(text[i]);
    const int gx = x + static_cast<int>(i) * (kGlyphWidth + 1) * scale;
    for (int row = 0; row < kGlyphHeight; ++row) {
      for (int col = 0; col < kGlyphWidth; ++col) {
        if (g[static_cast<std::size_t>(row)] & (4 >> col)) {
          fill_rect(image, gx + col * scale, y + row * scale, scale, scale, color);
        }
      }
    }
  }
}

void fill_disc(Image& image, const Point2& center, double radius, const Color& color) {
  const int x0 = std::max(0, static_cast<int>(std::floor(center[0] - radius)));
  const int x1 = std::min(image.width - 1, static_cast<int>(std::ceil(center[0] + radius)));
  const int y0 = std::max(0, static_cast<int>(std::floor(center[1] - radius)));
  const int y1 = std::min(image.height - 1, static_cast<int>(std::ceil(center[1] + radius)));
  // Pixel (x, y) is filled when its center lies inside the disc.
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = x + 0.5 - center[0];
      const double dy = y + 0.5 - center[1];
      if (dx * dx + dy * dy <= radius * radius) std::memcpy(image.at(x, y), color.data(), 4);
    }
  }
}

Overlay render_overlay(const Canvas& canvas, const ProjectionModel& model, const Dataset& dataset,
                       const OverlaySpec& spec) {
  if (spec.marker_radius < 1) throw Error(ErrorCode::invalid_argument, "marker radius must be >= 1");
  if (spec.palette.empty()) throw Error(ErrorCode::invalid_argument, "palette is empty");
  check_pairing(model, dataset);
  Overlay out;
  out.families = family_order(dataset);
  if (out.families.size() > spec.palette.size()) {
    throw Error(ErrorCode::invalid_argument,
                std::to_string(out.families.size()) + " families but only " +
                    std::to_string(spec.palette.size()) + " palette colors");
  }
  auto slot = [&](const std::string& family) {
    return static_cast<std::size_t>(std::find(out.families.begin(), out.families.end(), family) -
                                     out.families.begin());
  };

  const int legend_h =
      spec.legend ? 2 * kLegendPad + static_cast<int>(out.families.size()) * kLegendRow : 0;
  out.image = Image(canvas.width(), canvas.height() + legend_h);
  std::copy(canvas.image.pixels.begin(), canvas.image.pixels.end(), out.image.pixels.begin());

  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto c = canvas.world.world_to_pixel(model.coords[i]);
    out.centers.push_back(c);
    fill_disc(out.image, c, spec.marker_radius, spec.palette[slot(dataset[i].family)]);
  }
  if (spec.show_labels) {
    // Labels go on after all markers so none is hidden by a later disc.
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      const auto& id = dataset[i].id;
      const int x = static_cast<int>(std::lround(out.centers[i][0])) + spec.marker_radius + 2;
      const int y = static_cast<int>(std::lround(out.centers[i][1])) - kGlyphHeight;
      fill_rect(out.image, x - 1, y - 1, text_width(id, kTextScale) + 2, kGlyphHeight * kTextScale + 2,
                kWhite);
      draw_text(out.image, x, y, id, kBlack, kTextScale);
    }
  }
  if (spec.legend) {
    fill_rect(out.image, 0, canvas.height(), out.image.width, legend_h, kWhite);
    for (std::size_t f = 0; f < out.families.size(); ++f) {
      const int top = canvas.height() + kLegendPad + static_cast<int>(f) * kLegendRow;
      fill_rect(out.image, kLegendPad, top, kSwatch, kSwatch, spec.palette[f]);
      draw_text(out.image, kLegendPad + kSwatch + 6, top, out.families[f], kBlack, kTextScale);
    }
  }
  return out;
}

void export_png(const Canvas& canvas, const std::filesystem::path& path) {
  write_png(canvas.image, path);
}

int max_zoom_for(int size, int tile_size) {
  if (size <= 0 || tile_size <= 0) throw Error(ErrorCode::invalid_argument, "sizes must be positive");
  int z = 0;
  while (static_cast<long long>(tile_size) << z < size) ++z;
  return z;
}

Image downsample(const Image& image) {
  Image out((image.width + 1) / 2, (image.height + 1) / 2);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      unsigned sum[4] = {0, 0, 0, 0};
      unsigned count = 0;
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          const int sx = 2 * x + dx, sy = 2 * y + dy;
          if (sx >= image.width || sy >= image.height) continue;
          const auto* p = image.at(sx, sy);
          for (int c = 0; c < 4; ++c) sum[c] += p[c];
          ++count;
        }
      }
      auto* d = out.at(x, y);
      for (int c = 0; c < 4; ++c) d[c] = mean_half_even(sum[c], count);
    }
  }
  return out;
}

std::vector<Image> pyramid(const Image& image, int max_zoom) {
  std::vector<Image> levels(static_cast<std::size_t>(max_zoom) + 1);
  levels.back() = image;
  for (int z = max_zoom; z > 0; --z) {
    levels[static_cast<std::size_t>(z - 1)] = downsample(levels[static_cast<std::size_t>(z)]);
  }
  return levels;
}

int tiles_across(int level_size, int tile_size) { return (level_size + tile_size - 1) / tile_size; }

Image cut_tile(const Image& level, int tx, int ty, int tile_size) {
  Image tile(tile_size, tile_size);
  const int x0 = tx * tile_size, y0 = ty * tile_size;
  const int w = std::min(tile_size, level.width - x0);
  const int h = std::min(tile_size, level.height - y0);
  if (w <= 0 || h <= 0) throw Error(ErrorCode::out_of_range, "tile lies outside the level");
  for (int y = 0; y < h; ++y) std::memcpy(tile.at(0, y), level.at(x0, y0 + y), static_cast<std::size_t>(w) * 4);
  return tile;
}

std::vector<TileId> tiles_touching(const Rect& r, int canvas_size, int max_zoom, int tile_size) {
  std::vector<TileId> out;
  if (r.empty()) return out;
  for (int z = max_zoom; z >= 0; --z) {
    const int shift = max_zoom - z;
    // Level z pixel p covers canvas pixels [p << shift, (p + 1) << shift).
    const int level_size = [&] {
      int s = canvas_size;
      for (int i = 0; i < shift; ++i) s = (s + 1) / 2;
      return s;
    }();
    const int n = tiles_across(level_size, tile_size);
    const int px0 = r.x >> shift, py0 = r.y >> shift;
    const int px1 = (r.x + r.w - 1) >> shift, py1 = (r.y + r.h - 1) >> shift;
    for (int ty = py0 / tile_size; ty <= std::min(n - 1, py1 / tile_size); ++ty) {
      for (int tx = px0 / tile_size; tx <= std::min(n - 1, px1 / tile_size); ++tx) out.push_back({z, tx, ty});
    }
  }
  return out;
}

std::filesystem::path tile_path(const std::filesystem::path& out_dir, const TileId& id) {
  return out_dir / std::to_string(id.z) / std::to_string(id.x) / (std::to_string(id.y) + ".png");
}

TileManifest make_manifest(const Canvas& canvas, const ProjectionModel& model,
                           const Dataset& dataset, const std::string& style) {
  check_pairing(model, dataset);
  if (canvas.width() != canvas.height()) {
    throw Error(ErrorCode::invalid_argument, "tiles require a square canvas");
  }
  TileManifest m;
  m.max_zoom = max_zoom_for(canvas.width());
  m.world_bounds = canvas.bounds();
  m.canvas_size = canvas.width();
  m.style = style;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& r = dataset[i];
    m.samples.push_back({r.id, r.family, model.coords[i][0], model.coords[i][1], r.audio_path});
  }
  return m;
}

std::string to_json(const TileManifest& m) {
  nlohmann::ordered_json samples = nlohmann::ordered_json::array();
  for (const auto& s : m.samples) {
    nlohmann::ordered_json j = {{"id", s.id}, {"family", s.family}, {"x", s.x}, {"y", s.y}};
    if (s.audio_path) j["audio_path"] = *s.audio_path;
    samples.push_back(std::move(j));
  }
  const nlohmann::ordered_json j = {
      {"version", m.version},
      {"tile_size", m.tile_size},
      {"max_zoom", m.max_zoom},
      {"world_bounds",
       {{"min_x", m.world_bounds.min_x},
        {"min_y", m.world_bounds.min_y},
        {"max_x", m.world_bounds.max_x},
        {"max_y", m.world_bounds.max_y}}},
      {"canvas_size", m.canvas_size},
      {"style", m.style},
      {"samples", std::move(samples)},
  };
  return j.dump(2) + "\n";
}

TileManifest parse_manifest(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    TileManifest m;
    m.version = j.value("version", std::uint64_t{1});
    m.tile_size = j.at("tile_size").get<int>();
    m.max_zoom = j.at("max_zoom").get<int>();
    const auto& b = j.at("world_bounds");
    m.world_bounds = {b.at("min_x").get<double>(), b.at("min_y").get<double>(),
                      b.at("max_x").get<double>(), b.at("max_y").get<double>()};
    m.canvas_size = j.at("canvas_size").get<int>();
    m.style = j.at("style").get<std::string>();
    for (const auto& s : j.at("samples")) {
      ManifestSample ms{s.at("id").get<std::string>(), s.at("family").get<std::string>(),
                        s.at("x").get<double>(), s.at("y").get<double>(), std::nullopt};
      if (s.contains("audio_path")) ms.audio_path = s["audio_path"].get<std::string>();
      m.samples.push_back(std::move(ms));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, std::string("malformed manifest: ") + e.what());
  }
}

void write_tiles(const Canvas& canvas, const std::filesystem::path& out_dir, int max_zoom,
                 const std::vector<TileId>& tiles) {
  const auto levels = pyramid(canvas.image, max_zoom);
  for (const auto& t : tiles) {
    const auto path = tile_path(out_dir, t);
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw Error(ErrorCode::io, "cannot create " + path.parent_path().string() + ": " + ec.message());
    write_png(cut_tile(levels[static_cast<std::size_t>(t.z)], t.x, t.y), path);
  }
}

TileManifest export_tiles(const Canvas& canvas, const std::filesystem::path& out_dir,
                          const ProjectionModel& model, const Dataset& dataset,
                          const std::string& style) {
  if (canvas.covered.count() != canvas.covered.bits.size()) {
    throw Error(ErrorCode::invalid_argument, "canvas is not fully covered; finish the map run first");
  }
  auto manifest = make_manifest(canvas, model, dataset, style);
  std::vector<TileId> all;
  for (int z = 0; z <= manifest.max_zoom; ++z) {
    int level = canvas.width();
    for (int i = 0; i < manifest.max_zoom - z; ++i) level = (level + 1) / 2;
    const int n = tiles_across(level);
    for (int x = 0; x < n; ++x) {
      for (int y = 0; y < n; ++y) all.push_back({z, x, y});
    }
  }
  write_tiles(canvas, out_dir, manifest.max_zoom, all);
  write_file_atomic(out_dir / "manifest.json", to_json(manifest));
  return manifest;
}

}  // namespace latent_atlas
