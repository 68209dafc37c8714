#include "latent_atlas/serve.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "latent_atlas/binary_io.hpp"
#include "latent_atlas/error.hpp"
#include "latent_atlas/output.hpp"

namespace latent_atlas {

using nlohmann::json;

ProbeResult probe(const ProjectionModel& model, const Dataset& dataset, const PromptSpec& style,
                  const Point2& world, std::size_t neighbors) {
  if (!std::isfinite(world[0]) || !std::isfinite(world[1])) {
    throw Error(ErrorCode::invalid_argument, "probe coordinates must be finite");
  }
  check_pairing(model, dataset);
  ProbeResult out;
  out.world = world;
  std::vector<std::size_t> order(model.coords.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> dist(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    dist[i] = std::hypot(model.coords[i][0] - world[0], model.coords[i][1] - world[1]);
  }
  const auto n = std::min(neighbors, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(),
                    [&](auto a, auto b) { return dist[a] < dist[b] || (dist[a] == dist[b] && a < b); });
  for (std::size_t r = 0; r < n; ++r) {
    const auto i = order[r];
    out.nearest.push_back({i, dataset[i].id, dataset[i].family, dist[i]});
  }
  const auto weights = keyword_weights(style, inverse_transform(model, dataset, world));
  for (std::size_t k = 0; k < weights.weights.size(); ++k) {
    out.keyword_weights.emplace_back(style.keywords[k], weights.weights[k]);
  }
  std::stable_sort(out.keyword_weights.begin(), out.keyword_weights.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return out;
}

std::string to_json(const ProbeResult& r) {
  json nearest = json::array();
  for (const auto& s : r.nearest) {
    nearest.push_back({{"id", s.id}, {"family", s.family}, {"distance", s.distance}});
  }
  json weights = json::array();
  for (const auto& [k, w] : r.keyword_weights) weights.push_back({{"keyword", k}, {"weight", w}});
  return json{{"x", r.world[0]}, {"y", r.world[1]}, {"nearest", nearest}, {"keyword_weights", weights}}
      .dump();
}

std::string to_string(JobState state) {
  switch (state) {
    case JobState::queued: return "queued";
    case JobState::running: return "running";
    case JobState::done: return "done";
    case JobState::failed: return "failed";
  }
  return "unknown";
}

namespace {

struct Job {
  std::string id;
  WorldBounds rect;
  std::string style;
  JobState state = JobState::queued;
  std::vector<JobState> history{JobState::queued};
  std::size_t completed = 0;
  std::size_t total = 0;
  std::string error;
};

json job_json(const Job& j) {
  json history = json::array();
  for (auto s : j.history) history.push_back(to_string(s));
  json out = {
      {"id", j.id},
      {"state", to_string(j.state)},
      {"rect_world",
       {{"min_x", j.rect.min_x}, {"min_y", j.rect.min_y}, {"max_x", j.rect.max_x}, {"max_y", j.rect.max_y}}},
      {"style", j.style},
      {"progress", {{"completed", j.completed}, {"total", j.total}}},
      {"history", history},
  };
  if (!j.error.empty()) out["error"] = j.error;
  return out;
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  res.status = status;
  res.set_content(json{{"error", message}}.dump(), "application/json");
}

std::optional<double> parse_number(const std::string& text) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) return std::nullopt;
  return v;
}

WorldBounds parse_rect(const json& j) {
  WorldBounds r;
  if (j.is_array() && j.size() == 4) {
    r = {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  } else if (j.is_object()) {
    r = {j.at("min_x").get<double>(), j.at("min_y").get<double>(), j.at("max_x").get<double>(),
         j.at("max_y").get<double>()};
  } else {
    throw Error(ErrorCode::invalid_argument, "rect_world must be {min_x, min_y, max_x, max_y}");
  }
  for (double v : {r.min_x, r.min_y, r.max_x, r.max_y}) {
    if (!std::isfinite(v)) throw Error(ErrorCode::invalid_argument, "rect_world must be finite");
  }
  if (r.min_x > r.max_x || r.min_y > r.max_y) {
    throw Error(ErrorCode::invalid_argument, "rect_world min exceeds max");
  }
  return r;
}

std::string content_type_for(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".wav") return "audio/wav";
  if (ext == ".mp3") return "audio/mpeg";
  if (ext == ".ogg") return "audio/ogg";
  if (ext == ".flac") return "audio/flac";
  return "application/octet-stream";
}

}  // namespace

struct AtlasServer::Impl {
  ServeOptions options;
  AtlasLayout layout;
  Dataset dataset;
  ProjectionModel model;
  PromptSpec probe_style;

  std::mutex run_mutex;
  AtlasRun run;

  std::mutex jobs_mutex;
  std::map<std::string, std::shared_ptr<Job>> jobs;
  std::shared_ptr<Job> active;
  std::thread worker;
  int next_job = 1;

  httplib::Server server;
  std::thread listener;
  int port = -1;

  explicit Impl(ServeOptions o)
      : options(std::move(o)),
        layout{options.atlas_dir},
        dataset(load_dataset(layout.dataset())),
        model(load_model(layout.model())),
        run(load_run(layout.run_state())) {
    check_pairing(model, dataset);
    probe_style = run.style;
    if (!options.renderer) {
      options.renderer = [](const AtlasRun& r) { return std::make_unique<ProceduralRenderer>(r.seed); };
    }
    if (!options.audio_root) options.audio_root = options.atlas_dir;
    routes();
  }

  PromptSpec resolve_style(const std::string& name) {
    if (name.empty() || name.find_first_of("/\\") != std::string::npos || name.front() == '.') {
      throw Error(ErrorCode::not_found, "unknown style: " + name);
    }
    const auto path = options.styles_dir / (name + ".style");
    if (!std::filesystem::is_regular_file(path)) throw Error(ErrorCode::not_found, "unknown style: " + name);
    auto spec = load_style(path);
    if (!spec.keyword_embeddings && options.keyword_embeddings) {
      spec = load_style(path, options.keyword_embeddings);
    }
    if (!spec.keyword_embeddings) {
      throw Error(ErrorCode::invalid_argument, "style " + name + " has no keyword embeddings");
    }
    if (spec.keyword_embeddings->cols != dataset.dimension()) {
      throw Error(ErrorCode::dimension_mismatch, "style " + name + " embeddings do not match the dataset dimension");
    }
    return spec;
  }

  void routes() {
    server.set_default_headers({{"Access-Control-Allow-Origin", options.cors_origin}});
    server.Options(".*", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });

    server.Get("/manifest.json", [this](const httplib::Request&, httplib::Response& res) {
      try {
        const auto bytes = read_file_bytes(layout.manifest());
        res.set_content(std::string(bytes.begin(), bytes.end()), "application/json");
      } catch (const Error&) {
        send_error(res, 404, "manifest not found; export tiles first");
      }
    });

    server.Get(R"(/tiles/(\d+)/(\d+)/(\d+)\.png)", [this](const httplib::Request& req, httplib::Response& res) {
      const auto path = layout.tiles() / req.matches[1].str() / req.matches[2].str() /
                        (req.matches[3].str() + ".png");
      try {
        const auto bytes = read_file_bytes(path);
        res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
      } catch (const Error&) {
        send_error(res, 404, "no such tile");
      }
    });

    server.Get("/probe", [this](const httplib::Request& req, httplib::Response& res) {
      if (!req.has_param("x") || !req.has_param("y")) return send_error(res, 400, "x and y are required");
      const auto x = parse_number(req.get_param_value("x"));
      const auto y = parse_number(req.get_param_value("y"));
      if (!x || !y) return send_error(res, 400, "x and y must be finite numbers");
      try {
        res.set_content(to_json(probe(model, dataset, probe_style, {*x, *y})), "application/json");
      } catch (const Error& e) {
        send_error(res, e.category() == ErrorCategory::internal ? 500 : 400, e.what());
      }
    });

    server.Post("/restyle", [this](const httplib::Request& req, httplib::Response& res) { post_restyle(req, res); });

    server.Get(R"(/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(jobs_mutex);
      const auto it = jobs.find(req.matches[1].str());
      if (it == jobs.end()) return send_error(res, 404, "unknown job");
      res.set_content(job_json(*it->second).dump(), "application/json");
    });

    server.Get(R"(/audio/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto wanted = req.matches[1].str();
      for (const auto& r : dataset.records()) {
        if (r.audio_path && *r.audio_path == wanted) {
          std::filesystem::path p = *r.audio_path;
          if (p.is_relative()) p = *options.audio_root / p;
          try {
            const auto bytes = read_file_bytes(p);
            res.set_content(std::string(bytes.begin(), bytes.end()), content_type_for(p));
          } catch (const Error&) {
            send_error(res, 404, "audio file missing");
          }
          return;
        }
      }
      send_error(res, 404, "no sample references that audio path");
    });
  }

  void post_restyle(const httplib::Request& req, httplib::Response& res) {
    WorldBounds rect;
    std::string style_name;
    try {
      const auto body = json::parse(req.body);
      rect = parse_rect(body.at("rect_world"));
      style_name = body.at("style").get<std::string>();
    } catch (const std::exception& e) {
      return send_error(res, 400, std::string("bad restyle request: ") + e.what());
    }
    PromptSpec style;
    try {
      style = resolve_style(style_name);
    } catch (const Error& e) {
      return send_error(res, e.code() == ErrorCode::not_found ? 404 : 400, e.what());
    }
    {
      std::lock_guard lock(run_mutex);
      if (world_rect_to_pixels(run.canvas, rect).empty()) {
        return send_error(res, 400, "rect_world does not intersect the map");
      }
    }

    std::lock_guard lock(jobs_mutex);
    if (active && (active->state == JobState::queued || active->state == JobState::running)) {
      return send_error(res, 409, "a restyle is already in progress (" + active->id + ")");
    }
    if (worker.joinable()) worker.join();
    auto job = std::make_shared<Job>();
    job->id = "job-" + std::to_string(next_job++);
    job->rect = rect;
    job->style = style_name;
    jobs[job->id] = job;
    active = job;
    res.status = 202;
    res.set_content(job_json(*job).dump(), "application/json");
    worker = std::thread([this, job, style = std::move(style)]() mutable { execute(job, std::move(style)); });
  }

  void set_state(Job& job, JobState s) {
    std::lock_guard lock(jobs_mutex);
    job.state = s;
    job.history.push_back(s);
  }

  void execute(const std::shared_ptr<Job>& job, PromptSpec style) {
    set_state(*job, JobState::running);
    try {
      AtlasRun work;
      {
        std::lock_guard lock(run_mutex);
        work = run;
      }
      auto renderer = options.renderer(work);
      RunOptions opts;
      opts.on_job = [&](std::size_t i, std::size_t total) {
        std::lock_guard lock(jobs_mutex);
        job->completed = i;
        job->total = total;
      };
      restyle_region(work, model, dataset, job->rect, std::move(style), *renderer, opts);
      {
        std::lock_guard lock(jobs_mutex);
        job->completed = job->total = work.plan.jobs.size();
      }
      if (std::filesystem::exists(layout.manifest())) {
        const auto bytes = read_file_bytes(layout.manifest());
        auto manifest = parse_manifest(std::string(bytes.begin(), bytes.end()));
        const auto touched = tiles_touching(world_rect_to_pixels(work.canvas, job->rect),
                                            work.canvas.width(), manifest.max_zoom, manifest.tile_size);
        write_tiles(work.canvas, layout.tiles(), manifest.max_zoom, touched);
        ++manifest.version;
        write_file_atomic(layout.manifest(), to_json(manifest));
      }
      save(work, layout.run_state());
      export_png(work.canvas, layout.map_png());
      {
        std::lock_guard lock(run_mutex);
        run = std::move(work);
      }
      set_state(*job, JobState::done);
    } catch (const std::exception& e) {
      {
        std::lock_guard lock(jobs_mutex);
        job->error = e.what();
      }
      set_state(*job, JobState::failed);
    }
  }
};

AtlasServer::AtlasServer(ServeOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}

AtlasServer::~AtlasServer() {
  stop();
  wait_idle();
}

int AtlasServer::start() {
  if (impl_->listener.joinable()) return impl_->port;
  const auto& o = impl_->options;
  if (o.port == 0) {
    impl_->port = impl_->server.bind_to_any_port(o.host);
  } else {
    impl_->port = impl_->server.bind_to_port(o.host, o.port) ? o.port : -1;
  }
  if (impl_->port < 0) throw Error(ErrorCode::io, "cannot bind " + o.host + ":" + std::to_string(o.port));
  impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return impl_->port;
}

void AtlasServer::run() {
  start();
  impl_->listener.join();
}

void AtlasServer::stop() {
  impl_->server.stop();
  if (impl_->listener.joinable()) impl_->listener.join();
}

int AtlasServer::port() const { return impl_->port; }

void AtlasServer::wait_idle() {
  std::thread t;
  {
    std::lock_guard lock(impl_->jobs_mutex);
    t = std::move(impl_->worker);
  }
  if (t.joinable()) t.join();
}

}  // namespace latent_atlas
