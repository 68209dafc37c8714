#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <set>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "latent_atlas/atlas.hpp"
#include "latent_atlas/binary_io.hpp"
#include "latent_atlas/dataset.hpp"
#include "latent_atlas/error.hpp"
#include "latent_atlas/output.hpp"
#include "latent_atlas/projection.hpp"
#include "latent_atlas/prompt.hpp"
#include "latent_atlas/random.hpp"
#include "latent_atlas/renderer.hpp"
#include "latent_atlas/serve.hpp"
#include "latent_atlas/stub.hpp"

namespace fs = std::filesystem;
using namespace latent_atlas;
using nlohmann::ordered_json;

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void summary(ordered_json j) { std::cout << j.dump() << std::endl; }

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("latent-atlas");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  const char* env = std::getenv("LATENT_ATLAS_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::set_level(spdlog::level::info);
    if (level != "info") spdlog::warn("LATENT_ATLAS_LOG={} not recognized; using info", level);
  }
}

struct Paths {
  std::string atlas_dir = "atlas";
  AtlasLayout layout() const { return {atlas_dir}; }
};

fs::path or_default(const std::string& flag, const fs::path& fallback) {
  return flag.empty() ? fallback : fs::path(flag);
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
    if (ec) throw Error(ErrorCode::io, "cannot create " + p.parent_path().string() + ": " + ec.message());
  }
}

struct BackendFlags {
  std::string kind = "procedural";
  std::string endpoint;
  double timeout = 30.0;
  int retries = 3;
  double backoff = 1.0;
  int steps = 30;
  double guidance = 7.5;

  void add(CLI::App* cmd) {
    cmd->add_option("--backend", kind, "procedural or remote")->check(CLI::IsMember({"procedural", "remote"}));
    cmd->add_option("--endpoint", endpoint, "remote inpainting service base URL");
    cmd->add_option("--timeout", timeout, "seconds per remote attempt")->check(CLI::PositiveNumber);
    cmd->add_option("--retries", retries, "remote retries after the first attempt")->check(CLI::NonNegativeNumber);
    cmd->add_option("--backoff", backoff, "base retry delay in seconds")->check(CLI::NonNegativeNumber);
    cmd->add_option("--steps", steps, "sampler steps sent to the remote service");
    cmd->add_option("--guidance", guidance, "guidance scale sent to the remote service");
  }

  std::unique_ptr<Renderer> make(std::uint64_t seed) const {
    if (kind == "procedural") return std::make_unique<ProceduralRenderer>(seed);
    if (endpoint.empty()) throw Error(ErrorCode::invalid_argument, "--backend remote needs --endpoint");
    RetryPolicy p;
    p.timeout = std::chrono::milliseconds(static_cast<std::int64_t>(timeout * 1000));
    p.retries = retries;
    p.backoff_base = std::chrono::milliseconds(static_cast<std::int64_t>(backoff * 1000));
    p.steps = steps;
    p.guidance = guidance;
    return std::make_unique<RemoteRenderer>(endpoint, p);
  }
};

// Style from file; embeddings from the flag, the file, or the atlas directory.
PromptSpec resolve_style(const fs::path& style_path, const std::string& embeddings_flag,
                         const AtlasLayout& layout, std::size_t dimension) {
  std::optional<fs::path> override;
  if (!embeddings_flag.empty()) override = embeddings_flag;
  auto spec = load_style(style_path, override);
  if (!spec.keyword_embeddings && fs::exists(layout.dir / "keywords.mat")) {
    spec = load_style(style_path, layout.dir / "keywords.mat");
  }
  if (!spec.keyword_embeddings) {
    throw Error(ErrorCode::invalid_argument,
                "style " + style_path.string() + " has no keyword embeddings; pass --keyword-embeddings");
  }
  if (spec.keyword_embeddings->cols != dimension) {
    throw Error(ErrorCode::dimension_mismatch,
                "keyword embeddings have dimension " + std::to_string(spec.keyword_embeddings->cols) +
                    " but the dataset has " + std::to_string(dimension));
  }
  for (const auto& w : lint(spec)) spdlog::warn("style {}: {}", spec.name, w);
  return spec;
}

RunOptions progress_options(const fs::path& state_path) {
  RunOptions opts;
  opts.on_job = [](std::size_t i, std::size_t total) { spdlog::info("patch {}/{}", i + 1, total); };
  opts.checkpoint = [state_path](const AtlasRun& run) {
    save(run, state_path);
    spdlog::debug("checkpoint: {} of {} jobs", run.completed, run.plan.jobs.size());
  };
  return opts;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Latent-space atlas: project embeddings, paint a map, export tiles"};
  app.require_subcommand(1);
  Paths paths;
  app.add_option("--atlas-dir", paths.atlas_dir, "directory holding the atlas artifacts");

  // ingest
  auto* ingest_cmd = app.add_subcommand("ingest", "validate an embedding file and store it as a dataset");
  std::string ingest_input, ingest_format = "jsonl", ingest_out, ingest_name;
  ingest_cmd->add_option("--input", ingest_input)->required();
  ingest_cmd->add_option("--format", ingest_format)->check(CLI::IsMember({"jsonl", "csv"}));
  ingest_cmd->add_option("--name", ingest_name, "dataset name (default: file stem)");
  ingest_cmd->add_option("--out", ingest_out);

  // fixture
  auto* fixture_cmd = app.add_subcommand("fixture", "write a synthetic clustered dataset");
  int clusters = 10, per = 6, dim = 32, keyword_count = 21;
  std::uint64_t fixture_seed = 42;
  std::string fixture_out, keywords_out;
  fixture_cmd->add_option("--clusters", clusters)->check(CLI::PositiveNumber);
  fixture_cmd->add_option("--per", per)->check(CLI::PositiveNumber);
  fixture_cmd->add_option("--dim", dim)->check(CLI::Range(2, 1 << 16));
  fixture_cmd->add_option("--seed", fixture_seed);
  fixture_cmd->add_option("--out", fixture_out);
  fixture_cmd->add_option("--keywords", keyword_count, "number of random keyword embeddings")
      ->check(CLI::NonNegativeNumber);
  fixture_cmd->add_option("--keywords-out", keywords_out, "keyword embedding matrix path");

  // project
  auto* project_cmd = app.add_subcommand("project", "fit the 2D projection");
  Hyperparameters hyper;
  std::string project_dataset, project_out;
  project_cmd->add_option("--k", hyper.k)->check(CLI::PositiveNumber);
  project_cmd->add_option("--min-dist", hyper.min_dist)->check(CLI::NonNegativeNumber);
  project_cmd->add_option("--epochs", hyper.n_epochs)->check(CLI::PositiveNumber);
  project_cmd->add_option("--seed", hyper.seed);
  project_cmd->add_option("--dataset", project_dataset);
  project_cmd->add_option("--out", project_out);

  // map
  auto* map_cmd = app.add_subcommand("map", "paint the map patch by patch");
  int size = kDefaultCanvasSize, patch = kDefaultPatchSize, overlap = kDefaultOverlap;
  double margin = kDefaultMargin;
  std::uint64_t map_seed = 42;
  std::string style_path = "styles/instruments.style", embeddings_flag, map_out;
  bool resume = false;
  BackendFlags backend;
  map_cmd->add_option("--size", size);
  map_cmd->add_option("--patch", patch);
  map_cmd->add_option("--overlap", overlap);
  map_cmd->add_option("--margin", margin);
  map_cmd->add_option("--seed", map_seed);
  map_cmd->add_option("--style", style_path);
  map_cmd->add_option("--keyword-embeddings", embeddings_flag);
  map_cmd->add_option("--out", map_out, "map PNG path");
  map_cmd->add_flag("--resume", resume, "continue from the saved run state");
  backend.add(map_cmd);

  // restyle
  auto* restyle_cmd = app.add_subcommand("restyle", "repaint a world rectangle in another style");
  std::vector<double> rect;
  std::string restyle_style, restyle_embeddings, restyle_out;
  BackendFlags restyle_backend;
  restyle_cmd->add_option("--rect", rect, "min_x,min_y,max_x,max_y in world units")
      ->required()
      ->expected(4)
      ->delimiter(',');
  restyle_cmd->add_option("--style", restyle_style)->required();
  restyle_cmd->add_option("--keyword-embeddings", restyle_embeddings);
  restyle_cmd->add_option("--out", restyle_out, "map PNG path");
  restyle_backend.add(restyle_cmd);

  // overlay
  auto* overlay_cmd = app.add_subcommand("overlay", "draw sample markers and a legend over the map");
  OverlaySpec overlay_spec;
  bool no_legend = false;
  std::string overlay_out;
  overlay_cmd->add_option("--radius", overlay_spec.marker_radius);
  overlay_cmd->add_flag("--labels", overlay_spec.show_labels);
  overlay_cmd->add_flag("--no-legend", no_legend);
  overlay_cmd->add_option("--out", overlay_out);

  // tiles
  auto* tiles_cmd = app.add_subcommand("tiles", "export the tile pyramid and manifest");
  std::string tiles_out;
  tiles_cmd->add_option("--out", tiles_out);

  // stub
  auto* stub_cmd = app.add_subcommand("stub", "run the inpainting conformance stub");
  ConformanceStub::Options stub_opts;
  std::string stub_mode = "echo";
  int stub_delay_ms = 0;
  stub_cmd->add_option("--host", stub_opts.host);
  stub_cmd->add_option("--port", stub_opts.port);
  stub_cmd->add_option("--mode", stub_mode)
      ->check(CLI::IsMember({"echo", "repaint", "wrong-dims", "malformed", "fail"}));
  stub_cmd->add_option("--failures", stub_opts.failures, "scripted failures in fail mode; -1 = always");
  stub_cmd->add_option("--delay-ms", stub_delay_ms);

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "serve tiles, probes and restyle jobs over HTTP");
  ServeOptions serve_opts;
  std::string styles_dir = "styles", serve_embeddings;
  serve_cmd->add_option("--host", serve_opts.host);
  serve_cmd->add_option("--port", serve_opts.port);
  serve_cmd->add_option("--styles-dir", styles_dir);
  serve_cmd->add_option("--cors-origin", serve_opts.cors_origin);
  serve_cmd->add_option("--keyword-embeddings", serve_embeddings);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ErrorCategory::usage);
  }

  const auto layout = paths.layout();
  std::string command = app.get_subcommands().front()->get_name();
  try {
    if (command == "ingest") {
      const fs::path in = ingest_input;
      auto ds = ingest(in, ingest_format == "csv" ? IngestFormat::csv : IngestFormat::jsonl);
      if (!ingest_name.empty()) ds = Dataset(ingest_name, ds.records());
      const auto out = or_default(ingest_out, layout.dataset());
      ensure_parent(out);
      save(ds, out);
      summary({{"command", command}, {"ok", true}, {"dataset", out.string()}, {"records", ds.size()},
               {"dimension", ds.dimension()}, {"families", family_order(ds).size()},
               {"checksum", hex64(ds.checksum())}});
    } else if (command == "fixture") {
      const auto ds = synth_fixture(clusters, per, dim, fixture_seed);
      const auto out = or_default(fixture_out, layout.dataset());
      ensure_parent(out);
      save(ds, out);
      ordered_json j = {{"command", command}, {"ok", true}, {"dataset", out.string()}, {"records", ds.size()},
                        {"dimension", ds.dimension()}, {"checksum", hex64(ds.checksum())}};
      if (keyword_count > 0) {
        const auto kw_out = or_default(keywords_out, layout.dir / "keywords.mat");
        ensure_parent(kw_out);
        save(random_keyword_embeddings(static_cast<std::size_t>(keyword_count), ds.dimension(),
                                       mix64(fixture_seed ^ 0x6b657977ULL)),
             kw_out);
        j["keyword_embeddings"] = kw_out.string();
      }
      summary(j);
    } else if (command == "project") {
      const auto ds = load_dataset(or_default(project_dataset, layout.dataset()));
      spdlog::info("fitting {} points (k={}, min_dist={}, epochs={})", ds.size(), hyper.k, hyper.min_dist,
                   hyper.n_epochs);
      const auto model = fit(ds, hyper);
      const auto out = or_default(project_out, layout.model());
      ensure_parent(out);
      save(model, out);
      summary({{"command", command}, {"ok", true}, {"model", out.string()}, {"points", model.coords.size()},
               {"a", model.a}, {"b", model.b}});
    } else if (command == "map") {
      const auto ds = load_dataset(layout.dataset());
      const auto model = load_model(layout.model());
      check_pairing(model, ds);
      AtlasRun run;
      if (resume) {
        run = load_run(layout.run_state());
        spdlog::info("resuming at job {}/{}", run.completed, run.plan.jobs.size());
        // Keep the recorded backend unless one is named explicitly.
        if (map_cmd->count("--backend") == 0) {
          backend.kind = run.backend;
        } else if (backend.kind != run.backend) {
          spdlog::warn("resuming a {} run with the {} backend", run.backend, backend.kind);
          run.backend = backend.kind;
        }
      } else {
        auto canvas = make_canvas(model, size, margin);
        auto plan = plan_patches(canvas, patch, overlap);
        auto style = resolve_style(style_path, embeddings_flag, layout, ds.dimension());
        run = make_run(std::move(canvas), std::move(plan), std::move(style), backend.kind, map_seed,
                       model.source_checksum);
        run.style_path = style_path;
        fs::create_directories(layout.dir);
        save(run, layout.run_state());
      }
      auto renderer = backend.make(run.seed);
      latent_atlas::run(run, model, ds, *renderer, progress_options(layout.run_state()));
      const auto out = or_default(map_out, layout.map_png());
      ensure_parent(out);
      export_png(run.canvas, out);
      summary({{"command", command}, {"ok", true}, {"map", out.string()}, {"state", layout.run_state().string()},
               {"jobs", run.plan.jobs.size()}, {"completed", run.completed},
               {"checksum", hex64(fnv1a64(read_file_bytes(out)))}});
    } else if (command == "restyle") {
      const auto ds = load_dataset(layout.dataset());
      const auto model = load_model(layout.model());
      auto run = load_run(layout.run_state());
      if (run.completed != run.plan.jobs.size()) {
        throw Error(ErrorCode::invalid_argument, "the map run is unfinished; resume it with `map --resume`");
      }
      auto style = resolve_style(restyle_style, restyle_embeddings, layout, ds.dimension());
      auto renderer = restyle_backend.make(run.seed);
      const WorldBounds r{rect[0], rect[1], rect[2], rect[3]};
      run.style_path = restyle_style;
      restyle_region(run, model, ds, r, std::move(style), *renderer, progress_options(layout.run_state()));
      const auto out = or_default(restyle_out, layout.map_png());
      ensure_parent(out);
      export_png(run.canvas, out);
      summary({{"command", command}, {"ok", true}, {"map", out.string()}, {"jobs", run.plan.jobs.size()},
               {"checksum", hex64(fnv1a64(read_file_bytes(out)))}});
    } else if (command == "overlay") {
      const auto ds = load_dataset(layout.dataset());
      const auto model = load_model(layout.model());
      const auto run = load_run(layout.run_state());
      overlay_spec.legend = !no_legend;
      const auto ov = render_overlay(run.canvas, model, ds, overlay_spec);
      const auto out = or_default(overlay_out, layout.overlay_png());
      ensure_parent(out);
      write_png(ov.image, out);
      summary({{"command", command}, {"ok", true}, {"overlay", out.string()}, {"families", ov.families.size()},
               {"markers", ov.centers.size()}});
    } else if (command == "tiles") {
      const auto ds = load_dataset(layout.dataset());
      const auto model = load_model(layout.model());
      const auto run = load_run(layout.run_state());
      const auto out = or_default(tiles_out, layout.tiles());
      const auto m = export_tiles(run.canvas, out, model, ds, run.style.name);
      std::size_t count = 0;
      for (int z = 0; z <= m.max_zoom; ++z) {
        const int level = (m.canvas_size + (1 << (m.max_zoom - z)) - 1) >> (m.max_zoom - z);
        const int n = tiles_across(level);
        count += static_cast<std::size_t>(n) * n;
      }
      summary({{"command", command}, {"ok", true}, {"tiles_dir", out.string()}, {"max_zoom", m.max_zoom},
               {"tiles", count}});
    } else if (command == "stub") {
      stub_opts.mode = ConformanceStub::parse_mode(stub_mode);
      stub_opts.delay = std::chrono::milliseconds(stub_delay_ms);
      ConformanceStub stub(stub_opts);
      stub.start();
      summary({{"command", command}, {"ok", true}, {"endpoint", stub.endpoint()}, {"mode", stub_mode}});
      spdlog::info("stub listening on {}", stub.endpoint());
      stub.run();
    } else if (command == "serve") {
      serve_opts.atlas_dir = layout.dir;
      serve_opts.styles_dir = styles_dir;
      if (!serve_embeddings.empty()) serve_opts.keyword_embeddings = fs::path(serve_embeddings);
      AtlasServer server(serve_opts);
      const int port = server.start();
      summary({{"command", command}, {"ok", true}, {"url", "http://" + serve_opts.host + ":" + std::to_string(port)}});
      spdlog::info("serving {} on port {}", layout.dir.string(), port);
      server.run();
    }
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    const int code = static_cast<int>(e.category());
    summary({{"command", command}, {"ok", false}, {"error", to_string(e.code())}, {"message", e.what()},
             {"exit", code}});
    return code;
  } catch (const std::exception& e) {
    spdlog::error("internal error: {}", e.what());
    summary({{"command", command}, {"ok", false}, {"error", "internal"}, {"message", e.what()},
             {"exit", static_cast<int>(ErrorCategory::internal)}});
    return static_cast<int>(ErrorCategory::internal);
  }
  return 0;
}
