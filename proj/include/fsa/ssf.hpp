#pragma once

// Scale-space filtering (SSF) clustering of 2-D points.
//
// Every point is treated as a unit light source; blurring the scatter image
// with a Gaussian of scale sigma yields a density whose local maxima are the
// cluster centers at that scale. Centers are tracked across a geometric
// sweep of scales, and the cluster count that survives the longest (in the
// logarithmic "lifetime" measure) is selected.

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "fsa/geometry.hpp"

namespace fsa::ssf {

struct ScaleSweepConfig {
  /// Initial blur scale. Unset means "derive from the data" (see
  /// default_sigma0).
  std::optional<double> sigma0;
  double k = 1.05;
  double epsilon = 0.01;
  /// Both tolerances are relative to the current sigma.
  double convergence_tol = 1e-6;
  double merge_tol = 1e-2;
  int max_inner_iters = 500;
  int max_scales = 400;
  /// K = 1 lives forever as sigma grows, so it only wins when nothing else
  /// exists unless this is set.
  bool allow_single_cluster = false;
};

void validate(const ScaleSweepConfig& cfg);

struct ClusterSnapshot {
  double sigma = 0.0;
  std::vector<Point2> centers;

  std::size_t k() const { return centers.size(); }
};

struct SweepResult {
  std::vector<ClusterSnapshot> snapshots;
  /// max_scales was reached while more than one cluster remained.
  bool truncated = false;
};

struct LifetimeEntry {
  double sigma_inf = 0.0;
  double sigma_sup = 0.0;
  double lifetime = 0.0;
  /// Snapshot indices [first, last] of the run.
  std::size_t first = 0;
  std::size_t last = 0;
};

using LifetimeTable = std::map<std::size_t, LifetimeEntry>;

struct SelectedModel {
  std::vector<Point2> centers;
  double sigma_star = 0.0;

  std::size_t k() const { return centers.size(); }
};

/// Label value used for points farther than sigma* from every center.
inline constexpr int kOutlier = -1;

struct Assignment {
  /// Cluster index in [0, K) or kOutlier, one per input point.
  std::vector<int> labels;

  bool is_outlier(std::size_t i) const { return labels[i] == kOutlier; }
};

struct ShiftResult {
  Point2 center;
  bool isolated = false;
};

/// exp(-|x - c|^2 / (2 sigma^2)). Throws std::invalid_argument if sigma <= 0.
double gaussian_weight(const Point2& x, const Point2& c, double sigma);

/// Kernel density P(c, sigma) = sum_i gaussian_weight(x_i, c, sigma): the
/// scatter image blurred at scale sigma, sampled at c.
double scale_space_density(std::span<const Point2> points, const Point2& c,
                           double sigma);

/// One Gaussian mean-shift update. Its fixed points are the stationary points
/// of scale_space_density. When all weights underflow the center is returned
/// unchanged with `isolated` set.
ShiftResult mean_shift_step(std::span<const Point2> points, const Point2& c,
                            double sigma);

ClusterSnapshot converge_centers(std::span<const Point2> points,
                                 std::span<const Point2> init_centers,
                                 double sigma, const ScaleSweepConfig& cfg);

/// Half the 5th percentile of the nonzero pairwise distances, clamped to at
/// least epsilon. Falls back to 1 when every point coincides.
double default_sigma0(std::span<const Point2> points, double epsilon);

SweepResult scale_sweep(std::span<const Point2> points,
                        const ScaleSweepConfig& cfg);

/// c * log(sigma / epsilon) with c = 1 / log(1.05).
double lifetime(double sigma, const ScaleSweepConfig& cfg);

LifetimeTable build_lifetime_table(std::span<const ClusterSnapshot> snapshots,
                                   const ScaleSweepConfig& cfg);

SelectedModel select_model(std::span<const ClusterSnapshot> snapshots,
                           const LifetimeTable& table,
                           const ScaleSweepConfig& cfg = {});

Assignment assign_points(std::span<const Point2> points,
                         const SelectedModel& model);

/// Everything the pipeline produced for one point set.
struct ClusteringResult {
  SweepResult sweep;
  LifetimeTable table;
  SelectedModel model;
  Assignment assignment;
};

ClusteringResult cluster(std::span<const Point2> points,
                         const ScaleSweepConfig& cfg);

}  // namespace fsa::ssf
