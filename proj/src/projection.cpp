#include "latent_atlas/projection.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <thread>

#include <Eigen/Dense>
#include <json.hpp>

#include "latent_atlas/binary_io.hpp"
#include "latent_atlas/random.hpp"

namespace latent_atlas {

namespace {

double squared_distance(std::span<const double> x, std::span<const double> y) {
  double acc = 0.0;
  for (std::size_t d = 0; d < x.size(); ++d) {
    const double diff = x[d] - y[d];
    acc += diff * diff;
  }
  return acc;
}

double attractive_coefficient(double dist_squared, double a, double b) {
  if (dist_squared <= 0.0) return 0.0;
  return -2.0 * a * b * std::pow(dist_squared, b - 1.0) /
         (a * std::pow(dist_squared, b) + 1.0);
}

double repulsive_coefficient(double dist_squared, double a, double b, double epsilon) {
  if (dist_squared <= 0.0) return 0.0;
  return 2.0 * b / ((epsilon + dist_squared) * (a * std::pow(dist_squared, b) + 1.0));
}

double clip(double v) { return std::clamp(v, -kGradientClip, kGradientClip); }

struct DirectedEdge {
  std::size_t head;
  std::size_t tail;
  double weight;
};

// Plain and atomic views of the coordinate buffer for the SGD kernel.
struct PlainAccess {
  double load(double& x) const { return x; }
  void add(double& x, double v) const { x += v; }
};

struct RelaxedAccess {
  double load(double& x) const { return std::atomic_ref<double>(x).load(std::memory_order_relaxed); }
  void add(double& x, double v) const {
    std::atomic_ref<double> ref(x);
    ref.store(ref.load(std::memory_order_relaxed) + v, std::memory_order_relaxed);
  }
};

struct EdgeSchedule {
  std::vector<DirectedEdge> edges;
  std::vector<double> epochs_per_sample;
  std::vector<double> next_sample;
  std::vector<double> epochs_per_negative;
  std::vector<double> next_negative;
};

template <typename Access>
void sgd_range(EdgeSchedule& s, std::size_t begin, std::size_t end, int epoch, double alpha,
               double a, double b, int negative_rate, std::vector<Point2>& y, Rng& rng,
               const Access& access) {
  (void)negative_rate;
  const std::size_t n = y.size();
  for (std::size_t e = begin; e < end; ++e) {
    if (s.next_sample[e] > epoch) continue;
    const auto& edge = s.edges[e];
    auto& cur = y[edge.head];
    auto& other = y[edge.tail];

    double diff[2];
    for (int d = 0; d < 2; ++d) diff[d] = access.load(cur[d]) - access.load(other[d]);
    const double dist_squared = diff[0] * diff[0] + diff[1] * diff[1];
    const double coeff = attractive_coefficient(dist_squared, a, b);
    for (int d = 0; d < 2; ++d) {
      const double grad = clip(coeff * diff[d]);
      access.add(cur[d], grad * alpha);
      access.add(other[d], -grad * alpha);
    }
    s.next_sample[e] += s.epochs_per_sample[e];

    const int n_negative =
        static_cast<int>((epoch - s.next_negative[e]) / s.epochs_per_negative[e]);
    for (int p = 0; p < n_negative; ++p) {
      const std::size_t k = static_cast<std::size_t>(rng.below(n));
      if (k == edge.head) continue;
      auto& neg = y[k];
      for (int d = 0; d < 2; ++d) diff[d] = access.load(cur[d]) - access.load(neg[d]);
      const double d2 = diff[0] * diff[0] + diff[1] * diff[1];
      const double rc = repulsive_coefficient(d2, a, b, kRepulsionEpsilon);
      for (int d = 0; d < 2; ++d) {
        const double grad = rc > 0.0 ? clip(rc * diff[d]) : 0.0;
        access.add(cur[d], grad * alpha);
      }
    }
    s.next_negative[e] += n_negative * s.epochs_per_negative[e];
  }
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

std::uint64_t parse_hex64(const std::string& s) {
  if (s.size() != 16) throw Error(ErrorCode::corrupt_file, "bad checksum field");
  std::uint64_t v = 0;
  for (char c : s) {
    v <<= 4;
    if (c >= '0' && c <= '9') v |= static_cast<std::uint64_t>(c - '0');
    else if (c >= 'a' && c <= 'f') v |= static_cast<std::uint64_t>(c - 'a' + 10);
    else throw Error(ErrorCode::corrupt_file, "bad checksum field");
  }
  return v;
}

}  // namespace

// ---- kNN -------------------------------------------------------------------

KnnGraph build_knn(std::span<const double> points, std::size_t dimension, int k) {
  if (dimension == 0 || points.size() % dimension != 0) {
    throw Error(ErrorCode::invalid_argument, "point buffer does not match dimension");
  }
  const std::size_t n = points.size() / dimension;
  if (k < 1 || static_cast<std::size_t>(k) >= n) {
    throw Error(ErrorCode::out_of_range, "k must satisfy 1 <= k < n (k=" + std::to_string(k) +
                                             ", n=" + std::to_string(n) + ")");
  }
  const auto kk = static_cast<std::size_t>(k);
  KnnGraph g;
  g.k = kk;
  g.indices.resize(n * kk);
  g.distances.resize(n * kk);
  std::vector<std::pair<double, std::size_t>> cand(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const auto xi = points.subspan(i * dimension, dimension);
    std::size_t c = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      cand[c++] = {squared_distance(xi, points.subspan(j * dimension, dimension)), j};
    }
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(kk), cand.end());
    for (std::size_t m = 0; m < kk; ++m) {
      g.indices[i * kk + m] = cand[m].second;
      g.distances[i * kk + m] = std::sqrt(cand[m].first);
    }
  }
  return g;
}

KnnGraph build_knn(const Dataset& dataset, int k) {
  std::vector<double> flat;
  flat.reserve(dataset.size() * dataset.dimension());
  for (const auto& r : dataset.records()) flat.insert(flat.end(), r.vector.begin(), r.vector.end());
  return build_knn(flat, dataset.dimension(), k);
}

// ---- smooth kNN ----------------------------------------------------------------

double membership_sum(std::span<const double> distances, double rho, double sigma) {
  double acc = 0.0;
  for (double d : distances) acc += std::exp(-std::max(0.0, d - rho) / sigma);
  return acc;
}

SmoothKnnPoint smooth_knn_point(std::span<const double> distances, double target) {
  SmoothKnnPoint out;
  if (distances.empty()) {
    out.status = SmoothStatus::degenerate;
    return out;
  }
  out.rho = *std::min_element(distances.begin(), distances.end());
  const double farthest = *std::max_element(distances.begin(), distances.end());
  if (!(farthest > out.rho)) {
    out.status = SmoothStatus::degenerate;
    return out;
  }
  double lo = kSigmaLower;
  double hi = kSigmaUpper;
  if (membership_sum(distances, out.rho, lo) >= target) {
    out.sigma = lo;
    out.status = SmoothStatus::at_bracket;
    return out;
  }
  if (membership_sum(distances, out.rho, hi) <= target) {
    out.sigma = hi;
    out.status = SmoothStatus::at_bracket;
    return out;
  }
  // The sum is increasing in sigma; bisect in log space.
  for (int it = 0; it < kSigmaIterations; ++it) {
    const double mid = std::sqrt(lo * hi);
    if (mid <= lo || mid >= hi) break;
    if (membership_sum(distances, out.rho, mid) < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double lo_err = std::abs(membership_sum(distances, out.rho, lo) - target);
  const double hi_err = std::abs(membership_sum(distances, out.rho, hi) - target);
  out.sigma = lo_err < hi_err ? lo : hi;
  return out;
}

SmoothKnn smooth_knn(const KnnGraph& knn, std::optional<double> target) {
  const double t = target.value_or(std::log2(static_cast<double>(knn.k)));
  const std::size_t n = knn.size();
  SmoothKnn out;
  out.rho.resize(n);
  out.sigma.resize(n);
  out.status.resize(n);
  double sigma_sum = 0.0;
  std::size_t regular = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = smooth_knn_point(knn.dists(i), t);
    out.rho[i] = p.rho;
    out.sigma[i] = p.sigma;
    out.status[i] = p.status;
    if (p.status != SmoothStatus::degenerate) {
      sigma_sum += p.sigma;
      ++regular;
    }
  }
  const double fill = regular > 0 ? sigma_sum / static_cast<double>(regular) : 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (out.status[i] == SmoothStatus::degenerate) out.sigma[i] = fill;
  }
  return out;
}

// ---- fuzzy union ---------------------------------------------------------------

std::vector<Edge> directed_memberships(const KnnGraph& knn, const SmoothKnn& smooth) {
  std::vector<Edge> out;
  out.reserve(knn.indices.size());
  for (std::size_t i = 0; i < knn.size(); ++i) {
    const auto nb = knn.neighbors(i);
    const auto ds = knn.dists(i);
    for (std::size_t m = 0; m < knn.k; ++m) {
      const double w = std::exp(-std::max(0.0, ds[m] - smooth.rho[i]) / smooth.sigma[i]);
      out.push_back({i, nb[m], w});
    }
  }
  return out;
}

std::vector<Edge> fuzzy_union(std::size_t n, std::span<const Edge> directed) {
  std::map<std::pair<std::size_t, std::size_t>, std::pair<double, double>> pairs;
  for (const auto& e : directed) {
    if (e.i >= n || e.j >= n) throw Error(ErrorCode::out_of_range, "edge endpoint out of range");
    if (!(e.weight >= 0.0 && e.weight <= 1.0)) {
      throw Error(ErrorCode::invalid_argument, "directed membership outside [0, 1]");
    }
    if (e.i == e.j) continue;
    if (e.i < e.j) {
      pairs[{e.i, e.j}].first = e.weight;
    } else {
      pairs[{e.j, e.i}].second = e.weight;
    }
  }
  std::vector<Edge> out;
  out.reserve(pairs.size());
  for (const auto& [key, w] : pairs) {
    const double u = w.first + w.second - w.first * w.second;
    if (u > 0.0) out.push_back({key.first, key.second, std::min(u, 1.0)});
  }
  return out;
}

FuzzyGraph build_fuzzy_graph(const KnnGraph& knn) {
  const auto smooth = smooth_knn(knn);
  const auto directed = directed_memberships(knn, smooth);
  FuzzyGraph g;
  g.n = knn.size();
  g.rho = smooth.rho;
  g.sigma = smooth.sigma;
  g.status = smooth.status;
  g.edges = fuzzy_union(g.n, directed);
  return g;
}

// ---- curve fit -------------------------------------------------------------------

double curve_residual(double a, double b, double min_dist) {
  double acc = 0.0;
  for (int s = 0; s < kCurveSamples; ++s) {
    const double x = kCurveRange * s / (kCurveSamples - 1);
    const double target = x <= min_dist ? 1.0 : std::exp(-(x - min_dist));
    const double phi = 1.0 / (1.0 + a * std::pow(x, 2.0 * b));
    acc += (phi - target) * (phi - target);
  }
  return acc;
}

CurveParams fit_curve(double min_dist) {
  if (!(min_dist > 0.0)) throw Error(ErrorCode::invalid_argument, "min_dist must be positive");

  std::array<double, kCurveSamples> xs{};
  std::array<double, kCurveSamples> ts{};
  for (int s = 0; s < kCurveSamples; ++s) {
    xs[s] = kCurveRange * s / (kCurveSamples - 1);
    ts[s] = xs[s] <= min_dist ? 1.0 : std::exp(-(xs[s] - min_dist));
  }

  CurveParams p{1.0, 1.0};
  double cost = curve_residual(p.a, p.b, min_dist);
  double lambda = 1e-3;
  constexpr int kMaxIterations = 500;
  for (int it = 0; it < kMaxIterations; ++it) {
    // Normal equations of the Gauss-Newton step.
    double jtj[2][2] = {{0, 0}, {0, 0}};
    double jtr[2] = {0, 0};
    for (int s = 0; s < kCurveSamples; ++s) {
      const double x = xs[s];
      const double xp = std::pow(x, 2.0 * p.b);
      const double denom = 1.0 + p.a * xp;
      const double r = 1.0 / denom - ts[s];
      const double ja = -xp / (denom * denom);
      const double jb = x > 0.0 ? -p.a * xp * 2.0 * std::log(x) / (denom * denom) : 0.0;
      jtj[0][0] += ja * ja;
      jtj[0][1] += ja * jb;
      jtj[1][1] += jb * jb;
      jtr[0] += ja * r;
      jtr[1] += jb * r;
    }
    jtj[1][0] = jtj[0][1];
    if (std::max(std::abs(jtr[0]), std::abs(jtr[1])) < 1e-14) return p;

    bool improved = false;
    while (lambda < 1e16) {
      const double m00 = jtj[0][0] * (1.0 + lambda);
      const double m11 = jtj[1][1] * (1.0 + lambda);
      const double m01 = jtj[0][1];
      const double det = m00 * m11 - m01 * m01;
      const double da = (-jtr[0] * m11 + jtr[1] * m01) / det;
      const double db = (-jtr[1] * m00 + jtr[0] * m01) / det;
      const CurveParams trial{p.a + da, p.b + db};
      const double trial_cost = trial.a > 0.0 && trial.b > 0.0
                                    ? curve_residual(trial.a, trial.b, min_dist)
                                    : std::numeric_limits<double>::infinity();
      if (trial_cost < cost) {
        const bool small_step = std::abs(da) <= 1e-12 * (1.0 + p.a) &&
                                std::abs(db) <= 1e-12 * (1.0 + p.b);
        const bool flat = cost - trial_cost <= 1e-15 * (1.0 + cost);
        p = trial;
        cost = trial_cost;
        lambda = std::max(lambda / 10.0, 1e-12);
        improved = true;
        if (small_step || flat) return p;
        break;
      }
      lambda *= 10.0;
    }
    // No descent step exists at machine precision: p is a stationary point.
    if (!improved) return p;
  }
  throw CurveFitError("curve fit did not converge in " + std::to_string(kMaxIterations) +
                          " iterations",
                      p);
}

// ---- layout ------------------------------------------------------------------------

Point2 attractive_gradient(const Point2& yi, const Point2& yj, double a, double b) {
  const double dx = yi[0] - yj[0];
  const double dy = yi[1] - yj[1];
  const double c = attractive_coefficient(dx * dx + dy * dy, a, b);
  return {c * dx, c * dy};
}

Point2 repulsive_gradient(const Point2& yi, const Point2& yj, double a, double b,
                          double epsilon) {
  const double dx = yi[0] - yj[0];
  const double dy = yi[1] - yj[1];
  const double c = repulsive_coefficient(dx * dx + dy * dy, a, b, epsilon);
  return {c * dx, c * dy};
}

std::vector<Point2> initialize_layout(const Dataset& dataset, std::uint64_t seed) {
  const auto n = static_cast<Eigen::Index>(dataset.size());
  const auto dim = static_cast<Eigen::Index>(dataset.dimension());
  std::vector<Point2> out(dataset.size());

  bool degenerate = n < 3;
  if (!degenerate) {
    Eigen::MatrixXd x(n, dim);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto v = dataset.vector(static_cast<std::size_t>(i));
      for (Eigen::Index d = 0; d < dim; ++d) x(i, d) = v[static_cast<std::size_t>(d)];
    }
    x.rowwise() -= x.colwise().mean();
    Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinU);
    const auto& sv = svd.singularValues();
    degenerate = sv.size() < 2 || !(sv(0) > 0.0) || !(sv(1) > 1e-9 * sv(0));
    if (!degenerate) {
      Eigen::MatrixXd scores = svd.matrixU().leftCols(2) * sv.head(2).asDiagonal();
      // Fix the sign of each component so its largest-magnitude score is positive.
      for (Eigen::Index c = 0; c < 2; ++c) {
        Eigen::Index arg = 0;
        scores.col(c).cwiseAbs().maxCoeff(&arg);
        if (scores(arg, c) < 0.0) scores.col(c) *= -1.0;
      }
      const double scale = 10.0 / scores.cwiseAbs().maxCoeff();
      for (Eigen::Index i = 0; i < n; ++i) {
        out[static_cast<std::size_t>(i)] = {scores(i, 0) * scale, scores(i, 1) * scale};
      }
    }
  }
  if (degenerate) {
    Rng rng(mix64(seed ^ 0x1417ULL));
    for (auto& p : out) p = {rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0)};
  }
  return out;
}

std::vector<Point2> layout(const FuzzyGraph& fuzzy, double a, double b,
                           const Hyperparameters& hyper, std::vector<Point2> initial,
                           const LayoutOptions& options) {
  if (initial.size() != fuzzy.n) {
    throw Error(ErrorCode::dimension_mismatch, "initial layout size does not match graph");
  }
  if (fuzzy.n == 0) throw Error(ErrorCode::invalid_argument, "empty fuzzy graph");
  if (hyper.n_epochs < 1) throw Error(ErrorCode::invalid_argument, "n_epochs must be >= 1");
  if (hyper.negative_sample_rate < 0) {
    throw Error(ErrorCode::invalid_argument, "negative_sample_rate must be >= 0");
  }
  auto y = std::move(initial);
  if (fuzzy.edges.empty()) return y;

  double max_w = 0.0;
  for (const auto& e : fuzzy.edges) max_w = std::max(max_w, e.weight);

  EdgeSchedule s;
  for (const auto& e : fuzzy.edges) {
    // Edges too weak to be sampled once over the run are dropped.
    if (e.weight < max_w / hyper.n_epochs) continue;
    s.edges.push_back({e.i, e.j, e.weight});
    s.edges.push_back({e.j, e.i, e.weight});
  }
  std::stable_sort(s.edges.begin(), s.edges.end(), [](const auto& l, const auto& r) {
    return l.head != r.head ? l.head < r.head : l.tail < r.tail;
  });
  for (const auto& e : s.edges) {
    const double eps = max_w / e.weight;
    s.epochs_per_sample.push_back(eps);
    s.next_sample.push_back(eps);
    const double neg = hyper.negative_sample_rate > 0
                           ? eps / hyper.negative_sample_rate
                           : std::numeric_limits<double>::infinity();
    s.epochs_per_negative.push_back(neg);
    s.next_negative.push_back(neg);
  }

  const int workers = std::max(1, options.workers);
  std::vector<Rng> rngs;
  for (int w = 0; w < workers; ++w) rngs.emplace_back(mix64(hyper.seed + static_cast<std::uint64_t>(w)));

  for (int epoch = 0; epoch < hyper.n_epochs; ++epoch) {
    const double alpha =
        hyper.learning_rate * (1.0 - static_cast<double>(epoch) / hyper.n_epochs);
    if (workers == 1) {
      sgd_range(s, 0, s.edges.size(), epoch, alpha, a, b, hyper.negative_sample_rate, y,
                rngs[0], PlainAccess{});
    } else {
      std::vector<std::thread> pool;
      const std::size_t chunk = (s.edges.size() + workers - 1) / workers;
      for (int w = 0; w < workers; ++w) {
        const std::size_t begin = std::min(s.edges.size(), chunk * w);
        const std::size_t end = std::min(s.edges.size(), begin + chunk);
        pool.emplace_back([&, begin, end, w] {
          sgd_range(s, begin, end, epoch, alpha, a, b, hyper.negative_sample_rate, y,
                    rngs[static_cast<std::size_t>(w)], RelaxedAccess{});
        });
      }
      for (auto& t : pool) t.join();
    }
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (!std::isfinite(y[i][0]) || !std::isfinite(y[i][1])) {
        throw Error(ErrorCode::non_finite, "non-finite coordinate at epoch " +
                                               std::to_string(epoch) + ", point " +
                                               std::to_string(i));
      }
    }
    if (options.on_epoch) options.on_epoch(epoch, y);
  }
  return y;
}

ProjectionModel fit(const Dataset& dataset, const Hyperparameters& hyper,
                    const LayoutOptions& options) {
  if (hyper.k < 1 || static_cast<std::size_t>(hyper.k) >= dataset.size()) {
    throw Error(ErrorCode::out_of_range,
                "k must satisfy 1 <= k < n (k=" + std::to_string(hyper.k) +
                    ", n=" + std::to_string(dataset.size()) + ")");
  }
  ProjectionModel m;
  m.hyper = hyper;
  m.source_name = dataset.name();
  m.source_checksum = dataset.checksum();
  m.knn = build_knn(dataset, hyper.k);
  m.fuzzy = build_fuzzy_graph(m.knn);
  const auto curve = fit_curve(hyper.min_dist);
  m.a = curve.a;
  m.b = curve.b;
  m.coords = layout(m.fuzzy, m.a, m.b, hyper, initialize_layout(dataset, hyper.seed), options);
  return m;
}

// ---- inverse transform ---------------------------------------------------------------

std::vector<WeightedIndex> inverse_weights(const ProjectionModel& model, const Point2& point,
                                           int k_inv, double epsilon) {
  if (!std::isfinite(point[0]) || !std::isfinite(point[1])) {
    throw Error(ErrorCode::invalid_argument, "query point is not finite");
  }
  if (k_inv < 1) throw Error(ErrorCode::invalid_argument, "k_inv must be >= 1");
  const std::size_t n = model.coords.size();
  if (n == 0) throw Error(ErrorCode::invalid_argument, "model has no points");
  std::vector<std::pair<double, std::size_t>> cand(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = point[0] - model.coords[i][0];
    const double dy = point[1] - model.coords[i][1];
    cand[i] = {std::sqrt(dx * dx + dy * dy), i};
  }
  const std::size_t kk = std::min(n, static_cast<std::size_t>(k_inv));
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(kk), cand.end());
  if (cand[0].first <= epsilon) return {{cand[0].second, 1.0}};

  std::vector<WeightedIndex> out(kk);
  double total = 0.0;
  for (std::size_t m = 0; m < kk; ++m) {
    const double r = cand[m].first + epsilon;
    out[m] = {cand[m].second, 1.0 / (r * r)};
    total += out[m].weight;
  }
  for (auto& w : out) w.weight /= total;
  return out;
}

void check_pairing(const ProjectionModel& model, const Dataset& dataset) {
  if (model.source_checksum != dataset.checksum() || model.coords.size() != dataset.size()) {
    throw Error(ErrorCode::checksum_mismatch,
                "projection model was fitted on '" + model.source_name +
                    "', not on dataset '" + dataset.name() + "'");
  }
}

std::vector<double> inverse_transform(const ProjectionModel& model, const Dataset& dataset,
                                      const Point2& point, int k_inv, double epsilon) {
  check_pairing(model, dataset);
  const auto weights = inverse_weights(model, point, k_inv, epsilon);
  if (weights.size() == 1 && weights[0].weight == 1.0) {
    const auto v = dataset.vector(weights[0].index);
    return {v.begin(), v.end()};
  }
  std::vector<double> out(dataset.dimension(), 0.0);
  for (const auto& w : weights) {
    const auto v = dataset.vector(w.index);
    for (std::size_t d = 0; d < out.size(); ++d) out[d] += w.weight * v[d];
  }
  return out;
}

// ---- persistence ------------------------------------------------------------------------

std::string serialize(const ProjectionModel& model) {
  using nlohmann::json;
  json j;
  j["format"] = "latent-atlas-projection";
  j["version"] = 1;
  j["hyper"] = {{"k", model.hyper.k},
                {"min_dist", model.hyper.min_dist},
                {"n_epochs", model.hyper.n_epochs},
                {"negative_sample_rate", model.hyper.negative_sample_rate},
                {"learning_rate", model.hyper.learning_rate},
                {"seed", model.hyper.seed}};
  j["source"] = {{"name", model.source_name}, {"checksum", hex64(model.source_checksum)}};
  j["a"] = model.a;
  j["b"] = model.b;
  json coords = json::array();
  for (const auto& p : model.coords) coords.push_back({p[0], p[1]});
  j["coords"] = std::move(coords);
  j["knn"] = {{"k", model.knn.k}, {"indices", model.knn.indices}, {"distances", model.knn.distances}};
  j["rho"] = model.fuzzy.rho;
  j["sigma"] = model.fuzzy.sigma;
  json status = json::array();
  for (auto s : model.fuzzy.status) status.push_back(static_cast<int>(s));
  j["status"] = std::move(status);
  json edges = json::array();
  for (const auto& e : model.fuzzy.edges) edges.push_back({e.i, e.j, e.weight});
  j["edges"] = std::move(edges);
  return j.dump() + "\n";
}

ProjectionModel deserialize_model(std::string_view text) {
  using nlohmann::json;
  ProjectionModel m;
  try {
    const json j = json::parse(text);
    if (j.at("format") != "latent-atlas-projection") {
      throw Error(ErrorCode::corrupt_file, "not a projection model file");
    }
    if (j.at("version") != 1) throw Error(ErrorCode::corrupt_file, "unsupported model version");
    const auto& h = j.at("hyper");
    m.hyper.k = h.at("k").get<int>();
    m.hyper.min_dist = h.at("min_dist").get<double>();
    m.hyper.n_epochs = h.at("n_epochs").get<int>();
    m.hyper.negative_sample_rate = h.at("negative_sample_rate").get<int>();
    m.hyper.learning_rate = h.at("learning_rate").get<double>();
    m.hyper.seed = h.at("seed").get<std::uint64_t>();
    m.source_name = j.at("source").at("name").get<std::string>();
    m.source_checksum = parse_hex64(j.at("source").at("checksum").get<std::string>());
    m.a = j.at("a").get<double>();
    m.b = j.at("b").get<double>();
    for (const auto& p : j.at("coords")) m.coords.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    m.knn.k = j.at("knn").at("k").get<std::size_t>();
    m.knn.indices = j.at("knn").at("indices").get<std::vector<std::size_t>>();
    m.knn.distances = j.at("knn").at("distances").get<std::vector<double>>();
    m.fuzzy.n = m.coords.size();
    m.fuzzy.rho = j.at("rho").get<std::vector<double>>();
    m.fuzzy.sigma = j.at("sigma").get<std::vector<double>>();
    for (int s : j.at("status").get<std::vector<int>>()) {
      if (s < 0 || s > 2) throw Error(ErrorCode::corrupt_file, "bad smooth-kNN status");
      m.fuzzy.status.push_back(static_cast<SmoothStatus>(s));
    }
    for (const auto& e : j.at("edges")) {
      m.fuzzy.edges.push_back({e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>(),
                               e.at(2).get<double>()});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::corrupt_file, std::string("malformed model file: ") + e.what());
  }

  const std::size_t n = m.coords.size();
  auto invalid = [](const std::string& what) { return Error(ErrorCode::corrupt_file, what); };
  if (n == 0) throw invalid("model has no coordinates");
  for (const auto& p : m.coords) {
    if (!std::isfinite(p[0]) || !std::isfinite(p[1])) throw invalid("non-finite coordinate");
  }
  if (!(m.a > 0.0) || !(m.b > 0.0)) throw invalid("curve parameters must be positive");
  if (m.knn.indices.size() != n * m.knn.k || m.knn.distances.size() != n * m.knn.k) {
    throw invalid("kNN graph shape does not match coordinates");
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto nb = m.knn.neighbors(i);
    const auto ds = m.knn.dists(i);
    for (std::size_t q = 0; q < m.knn.k; ++q) {
      if (nb[q] >= n || nb[q] == i) throw invalid("bad kNN neighbor index");
      if (!std::isfinite(ds[q]) || (q > 0 && ds[q] < ds[q - 1])) throw invalid("kNN distances not ascending");
    }
  }
  if (m.fuzzy.rho.size() != n || m.fuzzy.sigma.size() != n || m.fuzzy.status.size() != n) {
    throw invalid("rho/sigma arrays do not match coordinates");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!(m.fuzzy.sigma[i] > 0.0) || !(m.fuzzy.rho[i] >= 0.0)) throw invalid("bad rho/sigma");
  }
  for (const auto& e : m.fuzzy.edges) {
    if (e.i >= e.j || e.j >= n || !(e.weight > 0.0 && e.weight <= 1.0)) throw invalid("bad edge");
  }
  return m;
}

void save(const ProjectionModel& model, const std::filesystem::path& path) {
  write_file_atomic(path, serialize(model));
}

ProjectionModel load_model(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return deserialize_model({reinterpret_cast<const char*>(bytes.data()), bytes.size()});
}

}  // namespace latent_atlas
