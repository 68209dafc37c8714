#pragma once

#include <chrono>
#include <memory>
#include <string>

namespace latent_atlas {

/// In-process HTTP server speaking the inpainting protocol, for tests and demos.
class ConformanceStub {
 public:
  enum class Mode {
    echo,        // returns the input image
    repaint,     // inverts every RGB value, context included
    wrong_dims,  // returns an image one column wider
    malformed,   // 200 with a body that is not the protocol
    fail,        // `failures` scripted 503s, then echo
  };

  struct Options {
    Mode mode = Mode::echo;
    // For Mode::fail; a negative count fails forever.
    int failures = 2;
    std::chrono::milliseconds delay{0};
    std::string host = "127.0.0.1";
    int port = 0;  // 0 picks a free port
  };

  explicit ConformanceStub(Options options);
  ~ConformanceStub();
  ConformanceStub(const ConformanceStub&) = delete;
  ConformanceStub& operator=(const ConformanceStub&) = delete;

  /// Binds and serves on a background thread; returns the bound port.
  int start();
  void stop();
  /// Blocks serving on the calling thread until stop() from another thread.
  void run();

  int port() const;
  std::string endpoint() const;
  /// Requests received on /v1/inpaint, including rejected ones.
  int requests() const;
  /// Requests rejected as protocol violations (status 400).
  int violations() const;

  static Mode parse_mode(const std::string& name);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace latent_atlas
