// Acceptance suite: one PASS/FAIL line per criterion; nonzero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "latent_atlas/atlas.hpp"
#include "latent_atlas/binary_io.hpp"
#include "latent_atlas/error.hpp"
#include "latent_atlas/output.hpp"
#include "latent_atlas/random.hpp"
#include "latent_atlas/renderer.hpp"
#include "latent_atlas/stub.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace latent_atlas;
using latent_atlas::testing::TempDir;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool ok = true;
  std::ostringstream detail;

  // Records a failed condition; keeps the first few reasons.
  void require(bool cond, const std::string& what) {
    if (cond) return;
    if (ok || failures < 3) detail << (failures ? "; " : "") << what;
    ok = false;
    ++failures;
  }
  int failures = 0;
};

int failed = 0;

void criterion(const std::string& name, const std::function<void(Verdict&, std::ostringstream&)>& body) {
  Verdict v;
  std::ostringstream info;
  const auto t0 = Clock::now();
  try {
    body(v, info);
  } catch (const std::exception& e) {
    v.require(false, std::string("exception: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  if (!v.ok) ++failed;
  std::printf("%s %s (%s%s%.2fs)%s%s\n", v.ok ? "PASS" : "FAIL", name.c_str(), info.str().c_str(),
              info.str().empty() ? "" : ", ", secs, v.ok ? "" : ": ", v.detail.str().c_str());
  std::fflush(stdout);
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

oracle::Points points_of(const Dataset& ds) {
  oracle::Points out;
  for (const auto& r : ds.records()) out.push_back(r.vector);
  return out;
}

oracle::Points points_of(const std::vector<Point2>& coords) {
  oracle::Points out;
  for (const auto& p : coords) out.push_back({p[0], p[1]});
  return out;
}

bool same_pixel(const Image& a, const Image& b, int x, int y) {
  return std::equal(a.at(x, y), a.at(x, y) + 4, b.at(x, y));
}

struct World {
  Dataset dataset = synth_fixture(10, 6, 32, 42);
  ProjectionModel model = [this] {
    Hyperparameters h;
    h.k = 15;
    h.min_dist = 0.1;
    h.seed = 42;
    return fit(dataset, h);
  }();
  PromptSpec style = [] {
    PromptSpec s = load_style(std::filesystem::path(LATENT_ATLAS_STYLES_DIR) / "instruments.style");
    s.keyword_embeddings = random_keyword_embeddings(s.keywords.size(), 32, 5);
    return s;
  }();
};

const World& world() {
  static const World w;
  return w;
}

constexpr std::uint64_t kSeed = 42;

AtlasRun fresh_run() {
  const auto& w = world();
  auto canvas = make_canvas(w.model, 1024);
  auto plan = plan_patches(canvas, 256, 64);
  return make_run(std::move(canvas), std::move(plan), w.style, "procedural", kSeed, w.model.source_checksum);
}

// The full procedural 1024 run, shared by the atlas criteria.
const AtlasRun& reference_run() {
  static const AtlasRun r = [] {
    auto run_state = fresh_run();
    ProceduralRenderer backend(kSeed);
    run(run_state, world().model, world().dataset, backend);
    return run_state;
  }();
  return r;
}

Image noise_image(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  Image img(w, h);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

RenderRequest random_request(Rng& rng, int job) {
  const int w = 1 + static_cast<int>(rng.below(64));
  const int h = 1 + static_cast<int>(rng.below(64));
  RenderRequest r;
  r.patch = noise_image(w, h, 1000 + static_cast<std::uint64_t>(job));
  r.mask = Mask(w, h, false);
  const double p = rng.uniform();
  for (auto& b : r.mask.bits) b = rng.uniform() < p ? 1 : 0;
  r.mask.bits[rng.below(r.mask.bits.size())] = 1;
  const std::size_t k = 1 + rng.below(6);
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    r.weights.weights.push_back(rng.uniform() + 1e-3);
    total += r.weights.weights.back();
    r.prompts.push_back("prompt " + std::to_string(i));
  }
  for (auto& x : r.weights.weights) x /= total;
  r.seed = rng.next();
  r.origin_x = static_cast<std::int64_t>(rng.below(4096)) - 2048;
  r.origin_y = static_cast<std::int64_t>(rng.below(4096)) - 2048;
  r.id = "job " + std::to_string(job);
  return r;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::internal;
}

void projection_correctness() {
  criterion("projection: 60-point fixture purity and trustworthiness", [](Verdict& v, std::ostringstream& info) {
    const auto ds = synth_fixture(10, 6, 32, 42);
    Hyperparameters h;
    h.k = 15;
    h.min_dist = 0.1;
    h.seed = 42;
    const auto t0 = Clock::now();
    const auto m = fit(ds, h);
    const double secs = seconds_since(t0);
    std::vector<std::string> labels;
    for (const auto& r : ds.records()) labels.push_back(r.family);
    const double purity = oracle::knn_purity(points_of(m.coords), labels, 10);
    const double trust = oracle::trustworthiness(points_of(ds), points_of(m.coords), 10);
    info << "purity=" << purity << " trust=" << trust << " fit=" << secs << "s";
    v.require(ds.size() == 60, "fixture size");
    v.require(purity >= 0.9, "purity below 0.9");
    v.require(trust >= 0.95, "trustworthiness below 0.95");
    v.require(secs < 10.0, "fit slower than 10 s");
  });
}

void smooth_knn_calibration() {
  criterion("smooth-knn: 1000 profiles calibrated against a 1e7-step sweep", [](Verdict& v, std::ostringstream& info) {
    Rng rng(2024);
    double worst_sum = 0.0, worst_sigma = 0.0;
    for (int t = 0; t < 1000; ++t) {
      const std::size_t k = 3 + rng.below(28);
      std::vector<double> d;
      double acc = rng.uniform(0.0, 3.0);
      for (std::size_t q = 0; q < k; ++q) d.push_back(acc += rng.uniform(0.0, 1.0));
      const double target = std::log2(static_cast<double>(k));
      const auto p = smooth_knn_point(d, target);
      const double err = std::abs(membership_sum(d, p.rho, p.sigma) - target);
      worst_sum = std::max(worst_sum, err);
      v.require(p.status == SmoothStatus::converged, "profile " + std::to_string(t) + " not converged");
      const auto ref = oracle::sigma_sweep(d, target);
      v.require(ref.has_value(), "sweep found no crossing for profile " + std::to_string(t));
      if (ref) worst_sigma = std::max(worst_sigma, std::abs(p.sigma - *ref));
    }
    info << "max|sum-log2k|=" << worst_sum << " max|dsigma|=" << worst_sigma;
    v.require(worst_sum <= 1e-3, "membership sum off by more than 1e-3");
    v.require(worst_sigma <= 1e-6, "sigma differs from the sweep by more than 1e-6");
  });
}

void gradient_check() {
  criterion("layout gradients: central differences at 20 configurations", [](Verdict& v, std::ostringstream& info) {
    const auto curve = fit_curve(0.1);
    const double a = curve.a, b = curve.b;
    auto sq = [](const Point2& p, const Point2& q) {
      return (p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]);
    };
    auto attract = [&](const Point2& yi, const Point2& yj) { return std::log(1.0 + a * std::pow(sq(yi, yj), b)); };
    auto repel = [&](const Point2& yi, const Point2& yj) {
      return -std::log(1.0 - 1.0 / (1.0 + a * std::pow(sq(yi, yj), b)));
    };
    Rng rng(1234);
    int checked = 0;
    double worst = 0.0;
    while (checked < 20) {
      const Point2 yi{rng.uniform(-3, 3), rng.uniform(-3, 3)};
      const Point2 yj{rng.uniform(-3, 3), rng.uniform(-3, 3)};
      const auto ga = attractive_gradient(yi, yj, a, b);
      const auto gr = repulsive_gradient(yi, yj, a, b, 0.0);
      bool clipped = false;
      for (int d = 0; d < 2; ++d) clipped |= std::abs(ga[d]) >= 4.0 || std::abs(gr[d]) >= 4.0;
      if (clipped) continue;
      ++checked;
      const double h = 1e-6;
      for (int d = 0; d < 2; ++d) {
        Point2 up = yi, dn = yi;
        up[d] += h;
        dn[d] -= h;
        const double fd_a = -(attract(up, yj) - attract(dn, yj)) / (2 * h);
        const double fd_r = -(repel(up, yj) - repel(dn, yj)) / (2 * h);
        const double ra = std::abs(ga[d] - fd_a) / std::max(std::abs(fd_a), 1e-12);
        const double rr = std::abs(gr[d] - fd_r) / std::max(std::abs(fd_r), 1e-12);
        worst = std::max({worst, ra, rr});
      }
    }
    info << "max rel err=" << worst;
    v.require(worst <= 1e-4, "relative error above 1e-4");
  });
}

void inverse_transform_contracts() {
  criterion("inverse transform: exact hit, midpoint symmetry, convex interval", [](Verdict& v, std::ostringstream& info) {
    const auto& w = world();
    for (std::size_t j = 0; j < w.dataset.size(); ++j) {
      v.require(inverse_transform(w.model, w.dataset, w.model.coords[j]) == w.dataset[j].vector,
                "exact hit " + std::to_string(j));
    }

    // Two projected points far from the rest: their midpoint is equidistant.
    std::vector<EmbeddingRecord> recs;
    const std::vector<std::vector<double>> vecs{{0.3, -1.0, 2.0}, {1.7, 4.0, -2.5}, {9, 9, 9}, {-9, 9, -9}};
    for (std::size_t i = 0; i < vecs.size(); ++i) {
      recs.push_back({"p" + std::to_string(i), vecs[i], "f", std::nullopt, std::nullopt});
    }
    const Dataset line("pair", recs);
    ProjectionModel m;
    m.coords = {{0, 0}, {2, 0}, {100, 100}, {-100, 100}};
    m.source_checksum = line.checksum();
    const auto mid = inverse_transform(m, line, {1, 0}, 2);
    double sym = 0.0;
    for (std::size_t d = 0; d < 3; ++d) sym = std::max(sym, std::abs(mid[d] - (vecs[0][d] + vecs[1][d]) / 2));
    v.require(sym <= 1e-9, "midpoint asymmetric");

    Rng rng(8);
    int inside = 0;
    for (int q = 0; q < 100; ++q) {
      const Point2 p{rng.uniform(-15, 15), rng.uniform(-15, 15)};
      const auto weights = inverse_weights(w.model, p);
      const auto e = inverse_transform(w.model, w.dataset, p);
      bool ok = true;
      for (std::size_t d = 0; d < w.dataset.dimension(); ++d) {
        double lo = 1e300, hi = -1e300;
        for (const auto& x : weights) {
          lo = std::min(lo, w.dataset[x.index].vector[d]);
          hi = std::max(hi, w.dataset[x.index].vector[d]);
        }
        ok &= e[d] >= lo - 1e-12 && e[d] <= hi + 1e-12;
      }
      double total = 0.0;
      for (const auto& x : weights) {
        ok &= x.weight >= 0.0;
        total += x.weight;
      }
      ok &= std::abs(total - 1.0) <= 1e-12;
      inside += ok;
    }
    info << "midpoint err=" << sym << " convex=" << inside << "/100";
    v.require(inside == 100, "convex-combination interval violated");
  });
}

void prompt_math() {
  criterion("prompt math: weights, scale invariance, one-hot, template", [](Verdict& v, std::ostringstream& info) {
    Rng rng(55);
    double worst_sum = 0.0, worst_scale = 0.0;
    for (int t = 0; t < 200; ++t) {
      PromptSpec s;
      s.prompt_template = "<KEYWORD>";
      const std::size_t k = 1 + rng.below(25);
      for (std::size_t i = 0; i < k; ++i) s.keywords.push_back("k" + std::to_string(i));
      s.keyword_embeddings = random_keyword_embeddings(k, 16, 900 + static_cast<std::uint64_t>(t));
      s.temperature = std::exp(rng.uniform(std::log(1e-3), std::log(10.0)));
      std::vector<double> e(16);
      for (auto& x : e) x = rng.normal();
      const auto w = keyword_weights(s, e);
      double total = 0.0;
      for (double x : w.weights) total += x;
      worst_sum = std::max(worst_sum, std::abs(total - 1.0));
      auto scaled = e;
      const double c = std::exp(rng.uniform(-8, 8));
      for (auto& x : scaled) x *= c;
      const auto ws = keyword_weights(s, scaled);
      for (std::size_t i = 0; i < k; ++i) worst_scale = std::max(worst_scale, std::abs(ws.weights[i] - w.weights[i]));

      s.temperature = 1e-6;
      const auto hot = keyword_weights(s, e);
      const double top = *std::max_element(hot.weights.begin(), hot.weights.end());
      v.require(std::abs(top - 1.0) <= 1e-9, "not one-hot at temperature 1e-6");
    }
    const auto style = load_style(std::filesystem::path(LATENT_ATLAS_STYLES_DIR) / "instruments.style");
    const bool text_ok =
        expand_template(style, 0) == "A 3D rendered close-up of a bass guitar, pinterest trending aesthetic";
    info << "max|sum-1|=" << worst_sum << " max scale drift=" << worst_scale;
    v.require(worst_sum <= 1e-9, "weights do not sum to 1");
    v.require(worst_scale <= 1e-12, "weights change with embedding scale");
    v.require(text_ok, "template expansion differs");
  });
}

void atlas_determinism() {
  criterion("atlas: 1024 canvas coverage, determinism, resume at every boundary", [](Verdict& v, std::ostringstream& info) {
    const auto& w = world();
    ProceduralRenderer backend(kSeed);

    auto first = fresh_run();
    std::vector<int> writes(1024u * 1024u, 0);
    std::vector<std::vector<std::uint8_t>> boundaries{serialize(first)};
    RunOptions opts;
    opts.on_composite = [&](std::size_t, const Rect& r, const Mask& m) {
      for (int y = 0; y < r.h; ++y) {
        for (int x = 0; x < r.w; ++x) {
          if (m.get(x, y)) ++writes[static_cast<std::size_t>(r.y + y) * 1024 + r.x + x];
        }
      }
    };
    opts.checkpoint = [&](const AtlasRun& s) { boundaries.push_back(serialize(s)); };
    const auto t0 = Clock::now();
    run(first, w.model, w.dataset, backend, opts);
    const double secs = seconds_since(t0);

    const auto& ref = reference_run();
    const auto ref_bytes = serialize(ref);
    v.require(first.canvas.covered.count() == 1024u * 1024u, "canvas not fully covered");
    v.require(std::all_of(writes.begin(), writes.end(), [](int c) { return c == 1; }),
              "a pixel was not written exactly once");
    v.require(serialize(first) == ref_bytes, "repeated run differs");

    // Kill after every completed job (and before the first), persist, reload, finish.
    TempDir dir;
    int resumed_ok = 0;
    for (std::size_t b = 0; b + 1 < boundaries.size(); ++b) {
      write_file_atomic(dir / "run.state", boundaries[b]);
      auto state = load_run(dir / "run.state");
      if (state.completed != b) {
        v.require(false, "boundary " + std::to_string(b) + " has wrong progress");
        continue;
      }
      run(state, w.model, w.dataset, backend);
      const bool same = serialize(state) == ref_bytes;
      v.require(same, "resume from job " + std::to_string(b) + " differs");
      resumed_ok += same;
    }
    info << "jobs=" << first.plan.jobs.size() << " resumes=" << resumed_ok << "/" << boundaries.size() - 1
         << " run=" << secs << "s";
    v.require(first.plan.jobs.size() == 25, "expected a 5x5 plan");
    v.require(secs < 30.0, "run slower than 30 s");
  });
}

void seamlessness() {
  criterion("seamlessness: canvas equals the ownership-replay oracle", [](Verdict& v, std::ostringstream& info) {
    const auto& w = world();
    const auto& ref = reference_run();
    const auto& jobs = ref.plan.jobs;
    std::vector<std::vector<double>> job_weights;
    for (const auto& job : jobs) job_weights.push_back(derive_weights(w.model, w.dataset, w.style, job.center_world).weights);
    std::size_t mismatches = 0;
    for (int y = 0; y < 1024; ++y) {
      for (int x = 0; x < 1024; ++x) {
        std::size_t owner = 0;
        while (owner < jobs.size() && !jobs[owner].rect.contains(x, y)) ++owner;
        if (owner == jobs.size()) {
          ++mismatches;
          continue;
        }
        const auto& wt = job_weights[owner];
        const std::uint8_t* got = ref.canvas.image.at(x, y);
        for (int c = 0; c < 3; ++c) {
          long double acc = 0;
          for (std::size_t k = 0; k < wt.size(); ++k) acc += wt[k] * oracle::texture(k, kSeed, x, y, c);
          const long double rounded = std::nearbyint(std::clamp(acc, 0.0L, 255.0L));
          if (static_cast<long double>(got[c]) != rounded) {
            ++mismatches;
            break;
          }
        }
        if (got[3] != 255) ++mismatches;
      }
    }
    info << "mismatched pixels=" << mismatches;
    v.require(mismatches == 0, "composed canvas differs from the oracle");
  });
}

void mask_respect() {
  criterion("mask-respect: procedural and stub backends over 50 jobs each", [](Verdict& v, std::ostringstream& info) {
    ProceduralRenderer procedural(3);
    ConformanceStub::Options opts;
    opts.mode = ConformanceStub::Mode::repaint;
    ConformanceStub stub(opts);
    stub.start();
    RetryPolicy policy;
    policy.retries = 0;
    RemoteRenderer remote(stub.endpoint(), policy);
    Rng rng(99);
    std::size_t preserved = 0, repainted = 0;
    for (Renderer* backend : std::initializer_list<Renderer*>{&procedural, &remote}) {
      for (int job = 0; job < 50; ++job) {
        const auto r = random_request(rng, job);
        const auto out = render(*backend, r);
        v.require(out.width == r.patch.width && out.height == r.patch.height, "output size changed");
        for (std::size_t i = 0; i < r.mask.bits.size(); ++i) {
          const bool same = std::equal(out.pixels.begin() + 4 * i, out.pixels.begin() + 4 * i + 4,
                                       r.patch.pixels.begin() + 4 * i);
          if (!r.mask.bits[i]) {
            v.require(same, backend->name() + " changed a preserved pixel");
            ++preserved;
          } else if (!same) {
            ++repainted;
          }
        }
      }
    }
    info << "preserved=" << preserved << " repainted=" << repainted << " stub violations=" << stub.violations();
    v.require(stub.violations() == 0, "stub rejected a request");
    v.require(repainted > 0, "nothing was repainted");
  });
}

void wire_protocol() {
  criterion("wire protocol: success, wrong size, malformed, retry transcripts", [](Verdict& v, std::ostringstream& info) {
    Rng rng(5);
    const auto r = random_request(rng, 0);
    const auto no_sleep = [](std::chrono::milliseconds) {};

    {
      const auto body = nlohmann::json::parse(RemoteRenderer::request_body(r, RetryPolicy{}));
      v.require(body.size() == 6 && body.contains("image") && body.contains("mask") && body.contains("prompts") &&
                    body.contains("seed") && body.contains("steps") && body.contains("guidance"),
                "request body keys");
      v.require(body["steps"] == 30 && body["guidance"] == 7.5, "request defaults");
      v.require(decode_png(base64_decode(body["image"].get<std::string>())) == r.patch, "image payload");
      v.require(decode_mask_png(base64_decode(body["mask"].get<std::string>())) == r.mask, "mask payload");
    }
    {
      ConformanceStub::Options o;
      o.mode = ConformanceStub::Mode::echo;
      ConformanceStub stub(o);
      stub.start();
      RemoteRenderer remote(stub.endpoint());
      v.require(render(remote, r) == r.patch, "echo output differs from input");
      v.require(remote.attempts().size() == 1 && remote.attempts()[0].ok, "echo transcript");
      v.require(stub.violations() == 0, "echo request rejected");
    }
    {
      ConformanceStub::Options o;
      o.mode = ConformanceStub::Mode::wrong_dims;
      ConformanceStub stub(o);
      stub.start();
      RetryPolicy p;
      p.retries = 3;
      RemoteRenderer remote(stub.endpoint(), p);
      remote.set_sleeper(no_sleep);
      v.require(code_of([&] { render(remote, r); }) == ErrorCode::backend_dimension, "wrong size not reported");
      v.require(remote.attempts().size() == 4 && stub.requests() == 4, "wrong size not retried");
    }
    {
      ConformanceStub::Options o;
      o.mode = ConformanceStub::Mode::malformed;
      ConformanceStub stub(o);
      stub.start();
      RetryPolicy p;
      p.retries = 3;
      RemoteRenderer remote(stub.endpoint(), p);
      remote.set_sleeper(no_sleep);
      v.require(code_of([&] { render(remote, r); }) == ErrorCode::backend_payload, "malformed body not reported");
      v.require(remote.attempts().size() == 4, "malformed body not retried");
    }
    std::size_t logged = 0;
    {
      ConformanceStub::Options o;
      o.mode = ConformanceStub::Mode::fail;
      o.failures = 2;
      ConformanceStub stub(o);
      stub.start();
      RetryPolicy p;
      p.retries = 3;
      RemoteRenderer remote(stub.endpoint(), p);
      std::vector<std::chrono::milliseconds> sleeps;
      remote.set_sleeper([&](std::chrono::milliseconds d) { sleeps.push_back(d); });
      v.require(render(remote, r) == r.patch, "retry did not succeed");
      const auto log = remote.attempts();
      logged = log.size();
      v.require(log.size() == 3 && !log[0].ok && !log[1].ok && log[2].ok, "retry transcript is not fail, fail, ok");
      v.require(sleeps.size() == 2, "expected two backoff sleeps");
      if (sleeps.size() == 2) {
        v.require(sleeps[0].count() >= 500 && sleeps[0].count() <= 1500, "first backoff outside 1 s +- jitter");
        v.require(sleeps[1].count() >= 1000 && sleeps[1].count() <= 3000, "second backoff outside 2 s +- jitter");
      }
    }
    info << "retry attempts logged=" << logged;
  });
}

void tile_pyramid() {
  criterion("tiles: max-zoom reassembly, zoom formula, world round trip", [](Verdict& v, std::ostringstream& info) {
    const auto& w = world();
    const auto& ref = reference_run();
    TempDir dir;
    const auto m = export_tiles(ref.canvas, dir.path(), w.model, w.dataset, w.style.name);
    v.require(m.max_zoom == static_cast<int>(std::ceil(std::log2(1024 / 256.0))), "manifest max_zoom");
    for (int size : {256, 300, 512, 700, 1024, 1500, 2048, 4096}) {
      v.require(max_zoom_for(size) == static_cast<int>(std::ceil(std::log2(size / 256.0))),
                "zoom formula at " + std::to_string(size));
    }
    const int n = tiles_across(1024);
    std::size_t mismatches = 0;
    for (int tx = 0; tx < n; ++tx) {
      for (int ty = 0; ty < n; ++ty) {
        const auto tile = read_png(tile_path(dir.path(), {m.max_zoom, tx, ty}));
        for (int y = 0; y < kTileSize; ++y) {
          for (int x = 0; x < kTileSize; ++x) {
            if (!std::equal(tile.at(x, y), tile.at(x, y) + 4, ref.canvas.image.at(tx * kTileSize + x, ty * kTileSize + y))) {
              ++mismatches;
            }
          }
        }
      }
    }
    v.require(mismatches == 0, "reassembled tiles differ from the canvas");

    const auto ov = render_overlay(ref.canvas, w.model, w.dataset);
    double worst = 0.0;
    for (std::size_t i = 0; i < w.dataset.size(); ++i) {
      const auto back = ref.canvas.world.pixel_to_world(ov.centers[i]);
      worst = std::max({worst, std::abs(back[0] - w.model.coords[i][0]), std::abs(back[1] - w.model.coords[i][1])});
    }
    info << "max_zoom=" << m.max_zoom << " tile mismatches=" << mismatches << " round trip=" << worst;
    v.require(worst <= 1e-9, "world/pixel round trip above 1e-9");
  });
}

void restyle_isolation() {
  criterion("restyle: one-patch world rect leaves the rest untouched", [](Verdict& v, std::ostringstream& info) {
    const auto& w = world();
    const auto& ref = reference_run();
    auto edited = ref;
    auto style2 = w.style;
    style2.name = "alternate";
    style2.keyword_embeddings = random_keyword_embeddings(style2.keywords.size(), 32, 777);
    const auto& job = ref.plan.jobs[12];
    const auto p0 = ref.canvas.world.pixel_to_world({double(job.rect.x), double(job.rect.y)});
    const auto p1 = ref.canvas.world.pixel_to_world({double(job.rect.x + job.rect.w), double(job.rect.y + job.rect.h)});
    const WorldBounds rect{std::min(p0[0], p1[0]), std::min(p0[1], p1[1]), std::max(p0[0], p1[0]),
                           std::max(p0[1], p1[1])};
    ProceduralRenderer backend(kSeed);
    restyle_region(edited, w.model, w.dataset, rect, style2, backend);
    std::size_t outside_changed = 0, inside_changed = 0;
    for (int y = 0; y < 1024; ++y) {
      for (int x = 0; x < 1024; ++x) {
        const bool same = same_pixel(ref.canvas.image, edited.canvas.image, x, y);
        if (job.rect.contains(x, y)) {
          inside_changed += !same;
        } else {
          outside_changed += !same;
        }
      }
    }
    info << "inside changed=" << inside_changed << " outside changed=" << outside_changed;
    v.require(outside_changed == 0, "pixels outside the rect changed");
    v.require(inside_changed > 0, "restyle changed nothing");
    v.require(edited.plan.jobs.size() == 1, "expected a single restyle job");
  });
}

}  // namespace

int main() {
  projection_correctness();
  smooth_knn_calibration();
  gradient_check();
  inverse_transform_contracts();
  prompt_math();
  atlas_determinism();
  seamlessness();
  mask_respect();
  wire_protocol();
  tile_pyramid();
  restyle_isolation();
  std::printf("%d criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
