#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "latent_atlas/image.hpp"
#include "latent_atlas/prompt.hpp"

namespace latent_atlas {

struct RenderRequest {
  Image patch;
  Mask mask;
  KeywordWeights weights;
  std::vector<std::string> prompts;
  std::uint64_t seed = 0;
  // Canvas pixel position of the patch's top-left corner.
  std::int64_t origin_x = 0;
  std::int64_t origin_y = 0;
  // Attached to errors; the atlas uses "job <n>".
  std::string id;
};

class Renderer {
 public:
  virtual ~Renderer() = default;
  virtual std::string name() const = 0;
  /// Backend output, before the dispatcher's mask overwrite.
  virtual Image render_patch(const RenderRequest& request) = 0;
};

/// Throws invalid_argument / dimension_mismatch when the request is malformed.
void validate(const RenderRequest& request);

/// Validates, dispatches, checks the output size and restores every pixel
/// where mask is false. Backend errors are rethrown with the request id.
Image render(Renderer& backend, const RenderRequest& request);

/// Deterministic value-noise backend sampled in canvas coordinates.
class ProceduralRenderer final : public Renderer {
 public:
  static constexpr int kCell = 32;

  explicit ProceduralRenderer(std::uint64_t global_seed = 0) : seed_(global_seed) {}

  std::string name() const override { return "procedural"; }
  Image render_patch(const RenderRequest& request) override;

  std::uint64_t seed() const { return seed_; }

  /// 64-bit avalanche hash of (k, seed, lattice x, lattice y).
  static std::uint64_t lattice_hash(std::uint64_t k, std::uint64_t seed, std::int64_t lx,
                                    std::int64_t ly);
  /// Channel c (0..2) of texture k at canvas pixel (x, y), unrounded.
  static double texture(std::uint64_t k, std::uint64_t seed, std::int64_t x, std::int64_t y,
                        int c);
  /// Rounded half-to-even RGBA for weights at canvas pixel (x, y).
  static std::array<std::uint8_t, 4> pixel(std::span<const double> weights, std::uint64_t seed,
                                           std::int64_t x, std::int64_t y);

 private:
  std::uint64_t seed_;
};

struct RetryPolicy {
  std::chrono::milliseconds timeout{30000};
  // Retries after the first attempt.
  int retries = 3;
  std::chrono::milliseconds backoff_base{1000};
  int steps = 30;
  double guidance = 7.5;
};

struct Attempt {
  int number = 0;
  bool ok = false;
  std::string error;
};

/// Client of the HTTP inpainting protocol (POST {endpoint}/v1/inpaint).
class RemoteRenderer final : public Renderer {
 public:
  explicit RemoteRenderer(std::string endpoint, RetryPolicy policy = {});

  std::string name() const override { return "remote"; }
  Image render_patch(const RenderRequest& request) override;

  /// Attempts of the most recent render_patch call.
  std::vector<Attempt> attempts() const;
  /// All attempts since construction.
  std::vector<Attempt> transcript() const;
  const RetryPolicy& policy() const { return policy_; }

  /// JSON request body exactly as sent on the wire.
  static std::string request_body(const RenderRequest& request, const RetryPolicy& policy);

  using Sleeper = std::function<void(std::chrono::milliseconds)>;
  void set_sleeper(Sleeper s) { sleeper_ = std::move(s); }

 private:
  Image attempt_once(const RenderRequest& request, const std::string& body);

  std::string scheme_host_port_;
  std::string path_prefix_;
  RetryPolicy policy_;
  Sleeper sleeper_;
  mutable std::mutex mutex_;
  std::vector<Attempt> last_;
  std::vector<Attempt> all_;
};

/// Delay before retry n (1-based): base * 2^(n-1) * jitter, jitter in [0.5, 1.5).
std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, int retry, std::uint64_t seed);

}  // namespace latent_atlas
