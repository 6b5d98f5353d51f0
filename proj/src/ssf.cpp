#include "fsa/ssf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace fsa::ssf {
namespace {

void require_points(std::span<const Point2> points) {
  if (points.empty()) throw std::invalid_argument("point set is empty");
  for (const auto& p : points) {
    if (!is_finite(p)) throw std::invalid_argument("point set has non-finite coordinates");
  }
}

// Greedy merge in index order: a center joins the first group whose seed lies
// within tol, and each group is replaced by its mean. Repeated until no two
// survivors are within tol.
std::vector<Point2> merge_centers(std::vector<Point2> centers, double tol) {
  const double tol2 = tol * tol;
  bool merged = true;
  while (merged && centers.size() > 1) {
    merged = false;
    std::vector<Point2> seeds;
    std::vector<Point2> sums;
    std::vector<int> counts;
    for (const auto& c : centers) {
      std::size_t g = 0;
      for (; g < seeds.size(); ++g) {
        if (squared_distance(c, seeds[g]) <= tol2) break;
      }
      if (g == seeds.size()) {
        seeds.push_back(c);
        sums.push_back(c);
        counts.push_back(1);
      } else {
        sums[g].x += c.x;
        sums[g].y += c.y;
        ++counts[g];
        merged = true;
      }
    }
    if (!merged) break;
    centers.clear();
    for (std::size_t g = 0; g < seeds.size(); ++g) {
      if (counts[g] == 1) {
        centers.push_back(seeds[g]);
      } else {
        centers.push_back({sums[g].x / counts[g], sums[g].y / counts[g]});
      }
    }
  }
  return centers;
}

}  // namespace

void validate(const ScaleSweepConfig& cfg) {
  if (cfg.sigma0 && !(*cfg.sigma0 > 0.0)) throw std::invalid_argument("sigma0 must be > 0");
  if (!(cfg.k > 1.0)) throw std::invalid_argument("scale multiplier k must be > 1");
  if (!(cfg.epsilon > 0.0)) throw std::invalid_argument("epsilon must be > 0");
  if (!(cfg.convergence_tol > 0.0) || !(cfg.merge_tol > 0.0)) {
    throw std::invalid_argument("tolerances must be > 0");
  }
  if (cfg.max_inner_iters < 1 || cfg.max_scales < 1) {
    throw std::invalid_argument("iteration limits must be >= 1");
  }
}

double gaussian_weight(const Point2& x, const Point2& c, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be > 0");
  return std::exp(-squared_distance(x, c) / (2.0 * sigma * sigma));
}

double scale_space_density(std::span<const Point2> points, const Point2& c,
                           double sigma) {
  double total = 0.0;
  for (const auto& p : points) total += gaussian_weight(p, c, sigma);
  return total;
}

ShiftResult mean_shift_step(std::span<const Point2> points, const Point2& c,
                            double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be > 0");
  if (points.empty()) throw std::invalid_argument("point set is empty");
  const double inv = 1.0 / (2.0 * sigma * sigma);
  double wsum = 0.0;
  double sx = 0.0;
  double sy = 0.0;
  for (const auto& p : points) {
    const double dx = p.x - c.x;
    const double dy = p.y - c.y;
    const double w = std::exp(-(dx * dx + dy * dy) * inv);
    wsum += w;
    sx += w * dx;
    sy += w * dy;
  }
  if (wsum < std::numeric_limits<double>::epsilon()) return {c, true};
  return {{c.x + sx / wsum, c.y + sy / wsum}, false};
}

ClusterSnapshot converge_centers(std::span<const Point2> points,
                                 std::span<const Point2> init_centers,
                                 double sigma, const ScaleSweepConfig& cfg) {
  if (init_centers.empty()) throw std::invalid_argument("no initial centers");
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be > 0");
  const double move_tol = cfg.convergence_tol * sigma;
  std::vector<Point2> centers;
  centers.reserve(init_centers.size());
  for (Point2 c : init_centers) {
    for (int it = 0; it < cfg.max_inner_iters; ++it) {
      const ShiftResult next = mean_shift_step(points, c, sigma);
      if (next.isolated) break;
      const double moved = distance(next.center, c);
      c = next.center;
      if (moved < move_tol) break;
    }
    centers.push_back(c);
  }
  return {sigma, merge_centers(std::move(centers), cfg.merge_tol * sigma)};
}

double default_sigma0(std::span<const Point2> points, double epsilon) {
  std::vector<double> d;
  d.reserve(points.size() * (points.size() - 1) / 2);
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t j = i + 1; j < points.size(); ++j) {
      const double v = distance(points[i], points[j]);
      if (v > 0.0) d.push_back(v);
    }
  }
  if (d.empty()) return std::max(1.0, epsilon);
  const std::size_t idx = static_cast<std::size_t>(0.05 * static_cast<double>(d.size() - 1));
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(idx), d.end());
  return std::max(0.5 * d[idx], epsilon);
}

SweepResult scale_sweep(std::span<const Point2> points,
                        const ScaleSweepConfig& cfg) {
  validate(cfg);
  require_points(points);
  const double sigma0 = cfg.sigma0 ? *cfg.sigma0 : default_sigma0(points, cfg.epsilon);

  SweepResult out;
  std::vector<Point2> seeds(points.begin(), points.end());
  for (int j = 0; j < cfg.max_scales; ++j) {
    const double sigma = sigma0 * std::pow(cfg.k, j);
    ClusterSnapshot snap = converge_centers(points, seeds, sigma, cfg);
    seeds = snap.centers;
    out.snapshots.push_back(std::move(snap));
    if (seeds.size() == 1) return out;
  }
  out.truncated = true;
  return out;
}

double lifetime(double sigma, const ScaleSweepConfig& cfg) {
  if (!(sigma >= cfg.epsilon)) {
    throw std::invalid_argument("lifetime undefined for sigma below epsilon");
  }
  static const double c = 1.0 / std::log(1.05);
  return c * std::log(sigma / cfg.epsilon);
}

LifetimeTable build_lifetime_table(std::span<const ClusterSnapshot> snapshots,
                                   const ScaleSweepConfig& cfg) {
  LifetimeTable table;
  std::size_t start = 0;
  for (std::size_t i = 1; i <= snapshots.size(); ++i) {
    if (i < snapshots.size() && snapshots[i].k() == snapshots[start].k()) continue;
    const std::size_t k = snapshots[start].k();
    const std::size_t last = i - 1;
    // Scales below epsilon have no defined lifetime; count them from epsilon.
    const double lo = std::max(snapshots[start].sigma, cfg.epsilon);
    const double hi = std::max(snapshots[last].sigma, cfg.epsilon);
    LifetimeEntry e{snapshots[start].sigma, snapshots[last].sigma,
                    lifetime(hi, cfg) - lifetime(lo, cfg), start, last};
    auto it = table.find(k);
    if (it == table.end() || e.lifetime > it->second.lifetime) table[k] = e;
    start = i;
  }
  return table;
}

SelectedModel select_model(std::span<const ClusterSnapshot> snapshots,
                           const LifetimeTable& table,
                           const ScaleSweepConfig& cfg) {
  if (table.empty()) throw std::invalid_argument("lifetime table is empty");
  const bool has_multi = std::any_of(table.begin(), table.end(),
                                     [](const auto& kv) { return kv.first >= 2; });
  const bool skip_single = has_multi && !cfg.allow_single_cluster;

  // Runs of equal length differ by rounding in their log-ratio lifetimes.
  constexpr double kTieTol = 1e-9;
  const LifetimeEntry* best = nullptr;
  // Iterating by descending K makes the strict comparison favor larger K on ties.
  for (auto it = table.rbegin(); it != table.rend(); ++it) {
    if (skip_single && it->first == 1) continue;
    if (best == nullptr || it->second.lifetime > best->lifetime + kTieTol) best = &it->second;
  }
  const std::size_t n = best->last - best->first + 1;
  const std::size_t mid = best->first + (n - 1) / 2;
  if (mid >= snapshots.size()) throw std::invalid_argument("table does not match snapshots");
  return {snapshots[mid].centers, snapshots[mid].sigma};
}

Assignment assign_points(std::span<const Point2> points,
                         const SelectedModel& model) {
  if (model.centers.empty()) throw std::invalid_argument("model has no centers");
  Assignment out;
  out.labels.reserve(points.size());
  for (const auto& p : points) {
    int best = 0;
    double best_d2 = squared_distance(p, model.centers[0]);
    for (std::size_t c = 1; c < model.centers.size(); ++c) {
      const double d2 = squared_distance(p, model.centers[c]);
      if (d2 < best_d2) {
        best_d2 = d2;
        best = static_cast<int>(c);
      }
    }
    out.labels.push_back(std::sqrt(best_d2) > model.sigma_star ? kOutlier : best);
  }
  return out;
}

ClusteringResult cluster(std::span<const Point2> points,
                         const ScaleSweepConfig& cfg) {
  ClusteringResult r;
  r.sweep = scale_sweep(points, cfg);
  r.table = build_lifetime_table(r.sweep.snapshots, cfg);
  r.model = select_model(r.sweep.snapshots, r.table, cfg);
  r.assignment = assign_points(points, r.model);
  return r;
}

}  // namespace fsa::ssf
