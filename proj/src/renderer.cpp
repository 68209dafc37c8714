#include "latent_atlas/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "latent_atlas/error.hpp"
#include "latent_atlas/random.hpp"

namespace latent_atlas {

namespace {

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

// Shared by the per-pixel and per-patch paths so both produce identical bits.
inline double bilerp(double v00, double v10, double v01, double v11, double fx, double fy) {
  const double top = (1.0 - fx) * v00 + fx * v10;
  const double bottom = (1.0 - fx) * v01 + fx * v11;
  return (1.0 - fy) * top + fy * bottom;
}

inline std::uint8_t to_byte(double v) {
  const double r = std::nearbyint(v);
  return static_cast<std::uint8_t>(std::clamp(r, 0.0, 255.0));
}

inline double lattice_channel(std::uint64_t h, int c) {
  return static_cast<double>((h >> (8 * c)) & 0xffu);
}

std::string with_id(const RenderRequest& request, const std::string& what) {
  return (request.id.empty() ? std::string("render request") : request.id) + ": " + what;
}

}  // namespace

void validate(const RenderRequest& r) {
  if (!r.patch.valid() || r.patch.width <= 0 || r.patch.height <= 0) {
    throw Error(ErrorCode::invalid_argument, with_id(r, "patch image is empty or malformed"));
  }
  if (r.mask.width != r.patch.width || r.mask.height != r.patch.height ||
      r.mask.bits.size() != static_cast<std::size_t>(r.mask.width) * r.mask.height) {
    throw Error(ErrorCode::dimension_mismatch, with_id(r, "mask dimensions do not match patch"));
  }
  if (r.mask.count() == 0) {
    throw Error(ErrorCode::invalid_argument, with_id(r, "mask has no pixels to generate"));
  }
  if (r.weights.weights.size() != r.prompts.size() || r.prompts.empty()) {
    throw Error(ErrorCode::dimension_mismatch,
                with_id(r, "weights length " + std::to_string(r.weights.weights.size()) +
                               " does not match prompts length " + std::to_string(r.prompts.size())));
  }
  double total = 0.0;
  for (double w : r.weights.weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw Error(ErrorCode::invalid_argument, with_id(r, "keyword weights must be finite and >= 0"));
    }
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw Error(ErrorCode::invalid_argument, with_id(r, "keyword weights must sum to 1"));
  }
}

Image render(Renderer& backend, const RenderRequest& request) {
  validate(request);
  Image out;
  try {
    out = backend.render_patch(request);
  } catch (const Error& e) {
    throw Error(e.code(), with_id(request, e.what()));
  } catch (const std::exception& e) {
    throw Error(ErrorCode::internal, with_id(request, backend.name() + " backend: " + e.what()));
  }
  if (out.width != request.patch.width || out.height != request.patch.height || !out.valid()) {
    throw Error(ErrorCode::backend_dimension,
                with_id(request, backend.name() + " backend returned " + std::to_string(out.width) +
                                     "x" + std::to_string(out.height) + ", expected " +
                                     std::to_string(request.patch.width) + "x" +
                                     std::to_string(request.patch.height)));
  }
  const auto& mask = request.mask.bits;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) std::copy_n(request.patch.pixels.data() + 4 * i, 4, out.pixels.data() + 4 * i);
  }
  return out;
}

std::uint64_t ProceduralRenderer::lattice_hash(std::uint64_t k, std::uint64_t seed,
                                               std::int64_t lx, std::int64_t ly) {
  std::uint64_t h = mix64(seed ^ 0x6c61747469636521ULL);
  h = mix64(h ^ k);
  h = mix64(h ^ static_cast<std::uint64_t>(lx));
  return mix64(h ^ static_cast<std::uint64_t>(ly));
}

double ProceduralRenderer::texture(std::uint64_t k, std::uint64_t seed, std::int64_t x,
                                   std::int64_t y, int c) {
  const auto cx = floor_div(x, kCell);
  const auto cy = floor_div(y, kCell);
  const double fx = static_cast<double>(x - cx * kCell) / kCell;
  const double fy = static_cast<double>(y - cy * kCell) / kCell;
  return bilerp(lattice_channel(lattice_hash(k, seed, cx, cy), c),
                lattice_channel(lattice_hash(k, seed, cx + 1, cy), c),
                lattice_channel(lattice_hash(k, seed, cx, cy + 1), c),
                lattice_channel(lattice_hash(k, seed, cx + 1, cy + 1), c), fx, fy);
}

std::array<std::uint8_t, 4> ProceduralRenderer::pixel(std::span<const double> weights,
                                                      std::uint64_t seed, std::int64_t x,
                                                      std::int64_t y) {
  std::array<std::uint8_t, 4> out{0, 0, 0, 255};
  for (int c = 0; c < 3; ++c) {
    double acc = 0.0;
    for (std::size_t k = 0; k < weights.size(); ++k) acc += weights[k] * texture(k, seed, x, y, c);
    out[static_cast<std::size_t>(c)] = to_byte(acc);
  }
  return out;
}

Image ProceduralRenderer::render_patch(const RenderRequest& request) {
  const int w = request.patch.width;
  const int h = request.patch.height;
  Image out = request.patch;
  const auto& weights = request.weights.weights;
  const std::size_t kn = weights.size();

  const auto cx0 = floor_div(request.origin_x, kCell);
  const auto cy0 = floor_div(request.origin_y, kCell);
  const auto cols = static_cast<std::size_t>(floor_div(request.origin_x + w - 1, kCell) - cx0 + 2);
  const auto rows = static_cast<std::size_t>(floor_div(request.origin_y + h - 1, kCell) - cy0 + 2);
  // lattice[(k * rows + row) * cols + col]
  std::vector<std::uint64_t> lattice(kn * rows * cols);
  for (std::size_t k = 0; k < kn; ++k) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        lattice[(k * rows + r) * cols + c] =
            lattice_hash(k, seed_, cx0 + static_cast<std::int64_t>(c), cy0 + static_cast<std::int64_t>(r));
      }
    }
  }

  for (int py = 0; py < h; ++py) {
    const std::int64_t y = request.origin_y + py;
    const auto cy = floor_div(y, kCell);
    const double fy = static_cast<double>(y - cy * kCell) / kCell;
    const auto r = static_cast<std::size_t>(cy - cy0);
    for (int px = 0; px < w; ++px) {
      if (!request.mask.get(px, py)) continue;
      const std::int64_t x = request.origin_x + px;
      const auto cx = floor_div(x, kCell);
      const double fx = static_cast<double>(x - cx * kCell) / kCell;
      const auto c = static_cast<std::size_t>(cx - cx0);
      auto* dst = out.at(px, py);
      for (int ch = 0; ch < 3; ++ch) {
        double acc = 0.0;
        for (std::size_t k = 0; k < kn; ++k) {
          const auto* base = lattice.data() + (k * rows + r) * cols + c;
          acc += weights[k] * bilerp(lattice_channel(base[0], ch), lattice_channel(base[1], ch),
                                     lattice_channel(base[cols], ch),
                                     lattice_channel(base[cols + 1], ch), fx, fy);
        }
        dst[ch] = to_byte(acc);
      }
      dst[3] = 255;
    }
  }
  return out;
}

RemoteRenderer::RemoteRenderer(std::string endpoint, RetryPolicy policy)
    : policy_(policy), sleeper_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {
  while (!endpoint.empty() && endpoint.back() == '/') endpoint.pop_back();
  const auto scheme = endpoint.find("://");
  if (scheme == std::string::npos || endpoint.substr(0, scheme) != "http") {
    throw Error(ErrorCode::invalid_argument, "endpoint must be an http:// URL: " + endpoint);
  }
  const auto path = endpoint.find('/', scheme + 3);
  scheme_host_port_ = endpoint.substr(0, path);
  path_prefix_ = path == std::string::npos ? "" : endpoint.substr(path);
  if (scheme_host_port_.size() <= scheme + 3) {
    throw Error(ErrorCode::invalid_argument, "endpoint has no host: " + endpoint);
  }
  if (policy_.retries < 0) throw Error(ErrorCode::invalid_argument, "retries must be >= 0");
}

std::string RemoteRenderer::request_body(const RenderRequest& request, const RetryPolicy& policy) {
  nlohmann::json prompts = nlohmann::json::array();
  for (std::size_t k = 0; k < request.prompts.size(); ++k) {
    prompts.push_back({{"text", request.prompts[k]}, {"weight", request.weights.weights[k]}});
  }
  const nlohmann::json body = {
      {"image", base64_encode(encode_png(request.patch))},
      {"mask", base64_encode(encode_mask_png(request.mask))},
      {"prompts", std::move(prompts)},
      {"seed", request.seed},
      {"steps", policy.steps},
      {"guidance", policy.guidance},
  };
  return body.dump();
}

std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, int retry, std::uint64_t seed) {
  Rng rng(mix64(seed ^ static_cast<std::uint64_t>(retry)));
  const double factor = std::ldexp(1.0, std::max(0, retry - 1)) * (0.5 + rng.uniform());
  return std::chrono::milliseconds(
      static_cast<std::int64_t>(std::llround(static_cast<double>(policy.backoff_base.count()) * factor)));
}

Image RemoteRenderer::attempt_once(const RenderRequest& request, const std::string& body) {
  httplib::Client client(scheme_host_port_);
  client.set_connection_timeout(policy_.timeout);
  client.set_read_timeout(policy_.timeout);
  client.set_write_timeout(policy_.timeout);
  const auto res = client.Post(path_prefix_ + "/v1/inpaint", body, "application/json");
  if (!res) {
    throw Error(ErrorCode::backend_transport, "transport error: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    std::string detail;
    try {
      detail = nlohmann::json::parse(res->body).value("error", "");
    } catch (const nlohmann::json::exception&) {
    }
    throw Error(ErrorCode::backend_status,
                "status " + std::to_string(res->status) + (detail.empty() ? "" : ": " + detail));
  }
  Image image;
  try {
    const auto j = nlohmann::json::parse(res->body);
    image = decode_png(base64_decode(j.at("image").get<std::string>()));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::backend_payload, std::string("malformed response: ") + e.what());
  } catch (const Error& e) {
    throw Error(ErrorCode::backend_payload, std::string("malformed response image: ") + e.what());
  }
  if (image.width != request.patch.width || image.height != request.patch.height) {
    throw Error(ErrorCode::backend_dimension,
                "response image is " + std::to_string(image.width) + "x" +
                    std::to_string(image.height) + ", expected " +
                    std::to_string(request.patch.width) + "x" + std::to_string(request.patch.height));
  }
  return image;
}

Image RemoteRenderer::render_patch(const RenderRequest& request) {
  const auto body = request_body(request, policy_);
  std::vector<Attempt> log;
  const int max_attempts = policy_.retries + 1;
  for (int n = 1;; ++n) {
    try {
      auto image = attempt_once(request, body);
      log.push_back({n, true, ""});
      std::lock_guard lock(mutex_);
      all_.insert(all_.end(), log.begin(), log.end());
      last_ = std::move(log);
      return image;
    } catch (const Error& e) {
      log.push_back({n, false, e.what()});
      if (n >= max_attempts) {
        {
          std::lock_guard lock(mutex_);
          all_.insert(all_.end(), log.begin(), log.end());
          last_ = log;
        }
        throw Error(e.code(), "remote render failed after " + std::to_string(n) +
                                  " attempt(s): " + e.what());
      }
    }
    sleeper_(backoff_delay(policy_, n, request.seed));
  }
}

std::vector<Attempt> RemoteRenderer::attempts() const {
  std::lock_guard lock(mutex_);
  return last_;
}

std::vector<Attempt> RemoteRenderer::transcript() const {
  std::lock_guard lock(mutex_);
  return all_;
}

}  // namespace latent_atlas
