#include "latent_atlas/stub.hpp"

#include <atomic>
#include <cmath>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "latent_atlas/error.hpp"
#include "latent_atlas/image.hpp"

namespace latent_atlas {

struct ConformanceStub::Impl {
  Options options;
  httplib::Server server;
  std::thread thread;
  int port = -1;
  std::atomic<int> requests{0};
  std::atomic<int> violations{0};
  std::atomic<int> failed{0};

  void reply_error(httplib::Response& res, int status, const std::string& message) {
    res.status = status;
    res.set_content(nlohmann::json{{"error", message}}.dump(), "application/json");
  }

  void handle(const httplib::Request& req, httplib::Response& res) {
    ++requests;
    if (options.delay.count() > 0) std::this_thread::sleep_for(options.delay);

    Image image;
    try {
      const auto j = nlohmann::json::parse(req.body);
      image = decode_png(base64_decode(j.at("image").get<std::string>()));
      const auto mask = decode_mask_png(base64_decode(j.at("mask").get<std::string>()));
      if (mask.width != image.width || mask.height != image.height) {
        throw Error(ErrorCode::dimension_mismatch, "mask dimensions do not match image");
      }
      const auto& prompts = j.at("prompts");
      if (!prompts.is_array() || prompts.empty()) {
        throw Error(ErrorCode::invalid_argument, "prompts must be a nonempty array");
      }
      double total = 0.0;
      for (const auto& p : prompts) {
        (void)p.at("text").get<std::string>();
        total += p.at("weight").get<double>();
      }
      if (std::abs(total - 1.0) > 1e-6) {
        throw Error(ErrorCode::invalid_argument, "prompt weights must sum to 1");
      }
      if (!j.at("seed").is_number_integer() || !j.at("steps").is_number_integer() ||
          !j.at("guidance").is_number()) {
        throw Error(ErrorCode::invalid_argument, "seed, steps and guidance must be numbers");
      }
    } catch (const std::exception& e) {
      ++violations;
      reply_error(res, 400, e.what());
      return;
    }

    switch (options.mode) {
      case Mode::fail:
        if (options.failures < 0 || failed.fetch_add(1) < options.failures) {
          reply_error(res, 503, "scripted failure");
          return;
        }
        break;
      case Mode::malformed:
        res.status = 200;
        res.set_content("{\"picture\": 42", "application/json");
        return;
      case Mode::wrong_dims: {
        Image wider(image.width + 1, image.height);
        image = wider;
        break;
      }
      case Mode::repaint:
        for (std::size_t i = 0; i < image.pixels.size(); ++i) {
          if (i % 4 != 3) image.pixels[i] = static_cast<std::uint8_t>(255 - image.pixels[i]);
        }
        break;
      case Mode::echo:
        break;
    }
    res.status = 200;
    res.set_content(nlohmann::json{{"image", base64_encode(encode_png(image))}}.dump(),
                    "application/json");
  }
};

ConformanceStub::ConformanceStub(Options options) : impl_(std::make_unique<Impl>()) {
  impl_->options = std::move(options);
  impl_->server.Post("/v1/inpaint", [this](const httplib::Request& req, httplib::Response& res) {
    impl_->handle(req, res);
  });
}

ConformanceStub::~ConformanceStub() { stop(); }

int ConformanceStub::start() {
  if (impl_->thread.joinable()) return impl_->port;
  auto& o = impl_->options;
  if (o.port == 0) {
    impl_->port = impl_->server.bind_to_any_port(o.host);
  } else {
    impl_->port = impl_->server.bind_to_port(o.host, o.port) ? o.port : -1;
  }
  if (impl_->port < 0) {
    throw Error(ErrorCode::io, "stub could not bind " + o.host + ":" + std::to_string(o.port));
  }
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return impl_->port;
}

void ConformanceStub::run() {
  start();
  impl_->thread.join();
}

void ConformanceStub::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

int ConformanceStub::port() const { return impl_->port; }

std::string ConformanceStub::endpoint() const {
  return "http://" + impl_->options.host + ":" + std::to_string(impl_->port);
}

int ConformanceStub::requests() const { return impl_->requests.load(); }
int ConformanceStub::violations() const { return impl_->violations.load(); }

ConformanceStub::Mode ConformanceStub::parse_mode(const std::string& name) {
  if (name == "echo") return Mode::echo;
  if (name == "repaint") return Mode::repaint;
  if (name == "wrong-dims") return Mode::wrong_dims;
  if (name == "malformed") return Mode::malformed;
  if (name == "fail") return Mode::fail;
  throw Error(ErrorCode::invalid_argument, "unknown stub mode: " + name);
}

}  // namespace latent_atlas
