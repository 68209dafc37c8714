#include "latent_atlas/atlas.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "latent_atlas/binary_io.hpp"
#include "latent_atlas/error.hpp"

namespace latent_atlas {

WorldBounds Canvas::bounds() const {
  const auto a = world.pixel_to_world({0.0, 0.0});
  const auto b = world.pixel_to_world({static_cast<double>(width()), static_cast<double>(height())});
  return {std::min(a[0], b[0]), std::min(a[1], b[1]), std::max(a[0], b[0]), std::max(a[1], b[1])};
}

Canvas make_canvas(const ProjectionModel& model, int size, double margin_fraction) {
  if (size <= 0) throw Error(ErrorCode::invalid_argument, "canvas size must be positive");
  if (!(margin_fraction >= 0.0) || !std::isfinite(margin_fraction)) {
    throw Error(ErrorCode::invalid_argument, "margin fraction must be >= 0");
  }
  if (model.coords.empty()) throw Error(ErrorCode::empty_input, "projection has no points");
  double min_x = model.coords[0][0], max_x = min_x;
  double min_y = model.coords[0][1], max_y = min_y;
  for (const auto& p : model.coords) {
    min_x = std::min(min_x, p[0]);
    max_x = std::max(max_x, p[0]);
    min_y = std::min(min_y, p[1]);
    max_y = std::max(max_y, p[1]);
  }
  const double span_x = max_x - min_x;
  const double span_y = max_y - min_y;
  if (!(span_x > 0.0) || !(span_y > 0.0)) {
    throw Error(ErrorCode::degenerate, "projection bounding box has zero area");
  }
  min_x -= margin_fraction * span_x;
  max_x += margin_fraction * span_x;
  min_y -= margin_fraction * span_y;
  max_y += margin_fraction * span_y;

  // Letterbox: the shorter axis is centered inside the longer one.
  const double side = std::max(max_x - min_x, max_y - min_y);
  const double cx = 0.5 * (min_x + max_x);
  const double cy = 0.5 * (min_y + max_y);
  if (max_x - min_x < side) min_x = cx - 0.5 * side;
  if (max_y - min_y < side) max_y = cy + 0.5 * side;

  Canvas canvas;
  canvas.image = Image(size, size);
  canvas.covered = Mask(size, size, false);
  const double scale = size / side;
  canvas.world = {min_x, max_y, scale, -scale};
  return canvas;
}

std::vector<int> axis_starts(int lo, int hi, int extent, int patch_size, int overlap) {
  if (!(0 < overlap && overlap < patch_size)) {
    throw Error(ErrorCode::invalid_argument, "overlap must satisfy 0 < overlap < patch size (got overlap " +
                                                 std::to_string(overlap) + ", patch " +
                                                 std::to_string(patch_size) + ")");
  }
  if (patch_size > extent) {
    throw Error(ErrorCode::invalid_argument, "patch size " + std::to_string(patch_size) +
                                                 " exceeds canvas size " + std::to_string(extent));
  }
  if (lo < 0 || hi > extent || lo >= hi) throw Error(ErrorCode::out_of_range, "empty plan region");
  const int stride = patch_size - overlap;
  std::vector<int> starts;
  for (int s = lo;; s += stride) {
    const int clamped = std::min(s, extent - patch_size);
    if (starts.empty() || starts.back() != clamped) starts.push_back(clamped);
    if (clamped + patch_size >= hi) break;
  }
  return starts;
}

PatchPlan plan_region(const Canvas& canvas, const Rect& region, int patch_size, int overlap) {
  const auto xs = axis_starts(region.x, region.x + region.w, canvas.width(), patch_size, overlap);
  const auto ys = axis_starts(region.y, region.y + region.h, canvas.height(), patch_size, overlap);
  PatchPlan plan{patch_size, overlap, {}};
  for (int y : ys) {
    for (int x : xs) {
      PatchJob job;
      job.rect = {x, y, patch_size, patch_size};
      job.center_world = canvas.world.pixel_to_world({x + 0.5 * patch_size, y + 0.5 * patch_size});
      plan.jobs.push_back(job);
    }
  }
  return plan;
}

PatchPlan plan_patches(const Canvas& canvas, int patch_size, int overlap) {
  return plan_region(canvas, {0, 0, canvas.width(), canvas.height()}, patch_size, overlap);
}

KeywordWeights derive_weights(const ProjectionModel& model, const Dataset& dataset,
                              const PromptSpec& style, const Point2& center_world) {
  return keyword_weights(style, inverse_transform(model, dataset, center_world));
}

AtlasRun make_run(Canvas canvas, PatchPlan plan, PromptSpec style, std::string backend,
                  std::uint64_t seed, std::uint64_t source_checksum) {
  validate(style);
  AtlasRun run;
  run.canvas = std::move(canvas);
  run.plan = std::move(plan);
  run.style = std::move(style);
  run.backend = std::move(backend);
  run.seed = seed;
  run.source_checksum = source_checksum;
  return run;
}

const Canvas& run(AtlasRun& atlas, const ProjectionModel& model, const Dataset& dataset,
                  Renderer& backend, const RunOptions& options) {
  check_pairing(model, dataset);
  if (atlas.source_checksum != model.source_checksum) {
    throw Error(ErrorCode::checksum_mismatch, "run state belongs to a different dataset");
  }
  if (atlas.completed > atlas.plan.jobs.size()) {
    throw Error(ErrorCode::corrupt_file, "run state has more completed jobs than the plan");
  }
  auto& canvas = atlas.canvas;
  const auto prompts = expand_all(atlas.style);
  const auto total = atlas.plan.jobs.size();

  while (atlas.completed < total) {
    const std::size_t index = atlas.completed;
    const auto& job = atlas.plan.jobs[index];
    if (options.on_job) options.on_job(index, total);
    const Rect& r = job.rect;

    Mask mask(r.w, r.h);
    for (int y = 0; y < r.h; ++y) {
      for (int x = 0; x < r.w; ++x) mask.set(x, y, !canvas.covered.get(r.x + x, r.y + y));
    }
    if (mask.count() > 0) {
      RenderRequest request;
      request.patch = crop(canvas.image, r.x, r.y, r.w, r.h);
      request.mask = mask;
      request.weights = derive_weights(model, dataset, atlas.style, job.center_world);
      request.prompts = prompts;
      request.seed = atlas.seed ^ static_cast<std::uint64_t>(index);
      request.origin_x = r.x;
      request.origin_y = r.y;
      request.id = "job " + std::to_string(index);
      Image out;
      try {
        out = render(backend, request);
      } catch (const Error&) {
        if (options.checkpoint) options.checkpoint(atlas);
        throw;
      }
      for (int y = 0; y < r.h; ++y) {
        for (int x = 0; x < r.w; ++x) {
          if (mask.get(x, y)) std::memcpy(canvas.image.at(r.x + x, r.y + y), out.at(x, y), 4);
        }
      }
      if (options.on_composite) options.on_composite(index, r, mask);
    }
    for (int y = 0; y < r.h; ++y) {
      std::fill_n(canvas.covered.bits.begin() + static_cast<std::ptrdiff_t>(r.y + y) * canvas.width() + r.x,
                  r.w, std::uint8_t{1});
    }
    ++atlas.completed;
    if (options.checkpoint) options.checkpoint(atlas);
  }
  return canvas;
}

Rect world_rect_to_pixels(const Canvas& canvas, const WorldBounds& rect_world) {
  const auto a = canvas.world.world_to_pixel({rect_world.min_x, rect_world.min_y});
  const auto b = canvas.world.world_to_pixel({rect_world.max_x, rect_world.max_y});
  // A tolerance keeps rectangles that land on pixel edges from picking up a sliver.
  constexpr double kSnap = 1e-9;
  const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a[0], b[0]) + kSnap)));
  const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a[1], b[1]) + kSnap)));
  const int x1 = std::min(canvas.width(), static_cast<int>(std::ceil(std::max(a[0], b[0]) - kSnap)));
  const int y1 = std::min(canvas.height(), static_cast<int>(std::ceil(std::max(a[1], b[1]) - kSnap)));
  return {x0, y0, std::max(0, x1 - x0), std::max(0, y1 - y0)};
}

const Canvas& restyle_region(AtlasRun& atlas, const ProjectionModel& model, const Dataset& dataset,
                             const WorldBounds& rect_world, PromptSpec style2, Renderer& backend,
                             const RunOptions& options) {
  if (!(rect_world.min_x <= rect_world.max_x) || !(rect_world.min_y <= rect_world.max_y)) {
    throw Error(ErrorCode::invalid_argument, "restyle rectangle has min greater than max");
  }
  validate(style2);
  const Rect r = world_rect_to_pixels(atlas.canvas, rect_world);
  if (r.empty()) {
    throw Error(ErrorCode::out_of_range, "restyle rectangle does not intersect the canvas");
  }
  const int patch = atlas.plan.patch_size > 0 ? atlas.plan.patch_size : kDefaultPatchSize;
  const int overlap = atlas.plan.overlap > 0 ? atlas.plan.overlap : kDefaultOverlap;
  auto plan = plan_region(atlas.canvas, r, patch, overlap);
  for (int y = r.y; y < r.y + r.h; ++y) {
    for (int x = r.x; x < r.x + r.w; ++x) atlas.canvas.covered.set(x, y, false);
  }
  atlas.plan = std::move(plan);
  atlas.style = std::move(style2);
  atlas.completed = 0;
  return run(atlas, model, dataset, backend, options);
}

namespace {

void write_style(ByteWriter& w, const PromptSpec& s) {
  w.str(s.name);
  w.str(s.prompt_template);
  w.u64(s.keywords.size());
  for (const auto& k : s.keywords) w.str(k);
  w.f64(s.temperature);
  w.u8(s.keyword_embeddings ? 1 : 0);
  if (s.keyword_embeddings) {
    const auto& m = *s.keyword_embeddings;
    w.u64(m.rows);
    w.u64(m.cols);
    for (double v : m.data) w.f64(v);
  }
}

PromptSpec read_style(ByteReader& r) {
  PromptSpec s;
  s.name = r.str();
  s.prompt_template = r.str();
  const auto k = r.u64();
  if (k > r.remaining()) throw Error(ErrorCode::corrupt_file, "run state keyword count is implausible");
  for (std::uint64_t i = 0; i < k; ++i) s.keywords.push_back(r.str());
  s.temperature = r.f64();
  if (r.u8()) {
    Matrix m;
    m.rows = r.u64();
    m.cols = r.u64();
    if (m.rows == 0 || m.cols == 0 || m.rows > r.remaining() / 8 / m.cols) {
      throw Error(ErrorCode::corrupt_file, "run state embedding shape is implausible");
    }
    m.data.resize(m.rows * m.cols);
    for (auto& v : m.data) v = r.f64();
    s.keyword_embeddings = std::move(m);
  }
  return s;
}

}  // namespace

std::vector<std::uint8_t> serialize(const AtlasRun& a) {
  ByteWriter w;
  const auto& c = a.canvas;
  w.u32(static_cast<std::uint32_t>(c.width()));
  w.u32(static_cast<std::uint32_t>(c.height()));
  w.f64(c.world.origin_x);
  w.f64(c.world.origin_y);
  w.f64(c.world.scale_x);
  w.f64(c.world.scale_y);
  w.u32(static_cast<std::uint32_t>(a.plan.patch_size));
  w.u32(static_cast<std::uint32_t>(a.plan.overlap));
  w.u64(a.plan.jobs.size());
  for (const auto& j : a.plan.jobs) {
    w.i64(j.rect.x);
    w.i64(j.rect.y);
    w.i64(j.rect.w);
    w.i64(j.rect.h);
    w.f64(j.center_world[0]);
    w.f64(j.center_world[1]);
  }
  write_style(w, a.style);
  w.str(a.style_path);
  w.str(a.backend);
  w.u64(a.seed);
  w.u64(a.completed);
  w.u64(a.source_checksum);
  w.bytes(c.image.pixels);
  w.bytes(c.covered.bits);
  return wrap_container(ContainerKind::run_state, w.buffer());
}

AtlasRun deserialize_run(std::span<const std::uint8_t> file) {
  const auto payload = unwrap_container(ContainerKind::run_state, file);
  ByteReader r(payload);
  AtlasRun a;
  const auto width = static_cast<int>(r.u32());
  const auto height = static_cast<int>(r.u32());
  if (width <= 0 || height <= 0 || static_cast<std::size_t>(width) * height > payload.size()) {
    throw Error(ErrorCode::corrupt_file, "run state canvas size is implausible");
  }
  a.canvas.world.origin_x = r.f64();
  a.canvas.world.origin_y = r.f64();
  a.canvas.world.scale_x = r.f64();
  a.canvas.world.scale_y = r.f64();
  if (!(a.canvas.world.scale_x != 0.0) || !(a.canvas.world.scale_y != 0.0)) {
    throw Error(ErrorCode::corrupt_file, "run state world mapping is not invertible");
  }
  a.plan.patch_size = static_cast<int>(r.u32());
  a.plan.overlap = static_cast<int>(r.u32());
  const auto jobs = r.u64();
  if (jobs > r.remaining() / 48) throw Error(ErrorCode::corrupt_file, "run state job count is implausible");
  for (std::uint64_t i = 0; i < jobs; ++i) {
    PatchJob j;
    j.rect.x = static_cast<int>(r.i64());
    j.rect.y = static_cast<int>(r.i64());
    j.rect.w = static_cast<int>(r.i64());
    j.rect.h = static_cast<int>(r.i64());
    j.center_world = {r.f64(), r.f64()};
    if (j.rect.empty() || j.rect.x < 0 || j.rect.y < 0 || j.rect.x + j.rect.w > width ||
        j.rect.y + j.rect.h > height) {
      throw Error(ErrorCode::corrupt_file, "run state job rectangle lies outside the canvas");
    }
    a.plan.jobs.push_back(j);
  }
  a.style = read_style(r);
  a.style_path = r.str();
  a.backend = r.str();
  a.seed = r.u64();
  a.completed = r.u64();
  a.source_checksum = r.u64();
  if (a.completed > a.plan.jobs.size()) {
    throw Error(ErrorCode::corrupt_file, "run state has more completed jobs than the plan");
  }
  const auto n = static_cast<std::size_t>(width) * height;
  const auto pixels = r.bytes(n * 4);
  const auto covered = r.bytes(n);
  if (!r.at_end()) throw Error(ErrorCode::corrupt_file, "trailing bytes in run state");
  a.canvas.image = Image(width, height);
  std::copy(pixels.begin(), pixels.end(), a.canvas.image.pixels.begin());
  a.canvas.covered = Mask(width, height);
  std::copy(covered.begin(), covered.end(), a.canvas.covered.bits.begin());
  try {
    validate(a.style);
  } catch (const Error& e) {
    throw Error(ErrorCode::corrupt_file, std::string("run state style is invalid: ") + e.what());
  }
  return a;
}

void save(const AtlasRun& atlas, const std::filesystem::path& path) {
  write_file_atomic(path, serialize(atlas));
}

AtlasRun load_run(const std::filesystem::path& path) { return deserialize_run(read_file_bytes(path)); }

}  // namespace latent_atlas
