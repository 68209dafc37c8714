#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "latent_atlas/dataset.hpp"
#include "latent_atlas/error.hpp"

namespace latent_atlas {

using Point2 = std::array<double, 2>;

/// Exact k nearest neighbors. Row-major n x k; each row ascending by distance,
/// ties broken by index, self excluded.
struct KnnGraph {
  std::size_t k = 0;
  std::vector<std::size_t> indices;
  std::vector<double> distances;

  std::size_t size() const { return k == 0 ? 0 : indices.size() / k; }
  std::span<const std::size_t> neighbors(std::size_t i) const { return {indices.data() + i * k, k}; }
  std::span<const double> dists(std::size_t i) const { return {distances.data() + i * k, k}; }
  bool operator==(const KnnGraph&) const = default;
};

enum class SmoothStatus : std::uint8_t {
  converged = 0,
  // Every neighbor sits at distance rho; no sigma can reach the target.
  degenerate = 1,
  // The root lies outside the search bracket; sigma is the nearest bound.
  at_bracket = 2,
};

struct SmoothKnnPoint {
  double rho = 0.0;
  double sigma = 1.0;
  SmoothStatus status = SmoothStatus::converged;
};

struct SmoothKnn {
  std::vector<double> rho;
  std::vector<double> sigma;
  std::vector<SmoothStatus> status;
};

struct Edge {
  std::size_t i = 0;
  std::size_t j = 0;
  double weight = 0.0;
  bool operator==(const Edge&) const = default;
};

/// Symmetrized fuzzy neighborhood graph; each undirected edge stored once with i < j.
struct FuzzyGraph {
  std::size_t n = 0;
  std::vector<double> rho;
  std::vector<double> sigma;
  std::vector<SmoothStatus> status;
  std::vector<Edge> edges;
  bool operator==(const FuzzyGraph&) const = default;
};

struct Hyperparameters {
  int k = 15;
  double min_dist = 0.1;
  int n_epochs = 200;
  int negative_sample_rate = 5;
  double learning_rate = 1.0;
  std::uint64_t seed = 42;
  bool operator==(const Hyperparameters&) const = default;
};

struct CurveParams {
  double a = 0.0;
  double b = 0.0;
};

class CurveFitError : public Error {
 public:
  CurveFitError(const std::string& message, CurveParams best)
      : Error(ErrorCode::non_convergence, message), best_(best) {}
  CurveParams best() const { return best_; }

 private:
  CurveParams best_;
};

struct ProjectionModel {
  std::vector<Point2> coords;
  KnnGraph knn;
  FuzzyGraph fuzzy;
  double a = 0.0;
  double b = 0.0;
  Hyperparameters hyper;
  std::string source_name;
  std::uint64_t source_checksum = 0;
  bool operator==(const ProjectionModel&) const = default;
};

// ---- kNN ---------------------------------------------------------------

KnnGraph build_knn(const Dataset& dataset, int k);
KnnGraph build_knn(std::span<const double> points, std::size_t dimension, int k);

// ---- smooth kNN calibration ----------------------------------------------

inline constexpr double kSigmaLower = 1e-12;
inline constexpr double kSigmaUpper = 1e12;
inline constexpr int kSigmaIterations = 64;

/// Sum over neighbors of exp(-max(0, d - rho) / sigma).
double membership_sum(std::span<const double> distances, double rho, double sigma);

/// Calibrates one point: rho is the nearest distance, sigma is found by
/// geometric bisection on [kSigmaLower, kSigmaUpper] so the membership sum
/// hits `target`. Degenerate points get sigma = 1 here; smooth_knn replaces it.
SmoothKnnPoint smooth_knn_point(std::span<const double> distances, double target);

/// Per point calibration with target log2(k) unless given. Degenerate points
/// receive the mean sigma of the non-degenerate ones, or 1.0 if there are none.
SmoothKnn smooth_knn(const KnnGraph& knn, std::optional<double> target = std::nullopt);

// ---- fuzzy union -----------------------------------------------------------

/// Directed memberships exp(-max(0, d_ij - rho_i) / sigma_i) for every kNN edge.
std::vector<Edge> directed_memberships(const KnnGraph& knn, const SmoothKnn& smooth);

/// Probabilistic t-conorm: w = w_ij + w_ji - w_ij * w_ji. Zero weights are
/// dropped; output sorted by (i, j) with i < j.
std::vector<Edge> fuzzy_union(std::size_t n, std::span<const Edge> directed);

FuzzyGraph build_fuzzy_graph(const KnnGraph& knn);

// ---- layout curve ----------------------------------------------------------

inline constexpr int kCurveSamples = 300;
inline constexpr double kCurveRange = 3.0;

/// Sum of squared errors of 1 / (1 + a x^(2b)) against the min_dist target
/// curve over the fixed sample grid.
double curve_residual(double a, double b, double min_dist);

/// Levenberg-Marquardt fit of (a, b). Throws CurveFitError on non-convergence.
CurveParams fit_curve(double min_dist);

// ---- layout ------------------------------------------------------------------

inline constexpr double kRepulsionEpsilon = 1e-3;
inline constexpr double kGradientClip = 4.0;

/// Unclipped descent direction for y_i from a positive edge to y_j.
Point2 attractive_gradient(const Point2& yi, const Point2& yj, double a, double b);
/// Unclipped descent direction for y_i from a negative sample y_j.
Point2 repulsive_gradient(const Point2& yi, const Point2& yj, double a, double b,
                          double epsilon = kRepulsionEpsilon);

/// PCA of the embeddings scaled so the largest |coordinate| is 10. Falls back
/// to seeded uniform noise in [-10, 10] when the top two components are
/// degenerate.
std::vector<Point2> initialize_layout(const Dataset& dataset, std::uint64_t seed);

struct LayoutOptions {
  // 1: deterministic single-threaded SGD. >1: lock-free workers sharing the
  // coordinate buffer; results are not reproducible.
  int workers = 1;
  std::function<void(int epoch, std::span<const Point2>)> on_epoch;
};

std::vector<Point2> layout(const FuzzyGraph& fuzzy, double a, double b,
                           const Hyperparameters& hyper, std::vector<Point2> initial,
                           const LayoutOptions& options = {});

ProjectionModel fit(const Dataset& dataset, const Hyperparameters& hyper,
                    const LayoutOptions& options = {});

// ---- inverse transform -------------------------------------------------------

inline constexpr int kInverseNeighbors = 8;
inline constexpr double kInverseEpsilon = 1e-9;

struct WeightedIndex {
  std::size_t index = 0;
  double weight = 0.0;
};

/// Inverse-distance-squared weights over the nearest projected points.
/// Returns a single unit weight when the query is within epsilon of a point.
std::vector<WeightedIndex> inverse_weights(const ProjectionModel& model, const Point2& point,
                                           int k_inv = kInverseNeighbors,
                                           double epsilon = kInverseEpsilon);

/// Throws ErrorCode::checksum_mismatch if the model was not fitted on `dataset`.
void check_pairing(const ProjectionModel& model, const Dataset& dataset);

std::vector<double> inverse_transform(const ProjectionModel& model, const Dataset& dataset,
                                      const Point2& point, int k_inv = kInverseNeighbors,
                                      double epsilon = kInverseEpsilon);

// ---- persistence -------------------------------------------------------------

std::string serialize(const ProjectionModel& model);
ProjectionModel deserialize_model(std::string_view text);
void save(const ProjectionModel& model, const std::filesystem::path& path);
ProjectionModel load_model(const std::filesystem::path& path);

}  // namespace latent_atlas
