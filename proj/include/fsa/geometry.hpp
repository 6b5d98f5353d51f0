#pragma once

#include <array>
#include <cmath>

namespace fsa {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

inline double squared_distance(const Point2& a, const Point2& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return dx * dx + dy * dy;
}

inline double distance(const Point2& a, const Point2& b) {
  return std::sqrt(squared_distance(a, b));
}

inline bool is_finite(const Point2& p) {
  return std::isfinite(p.x) && std::isfinite(p.y);
}

/// Axis-aligned box in center/size form, pixel units.
struct BoundingBox {
  double bx = 0.0;
  double by = 0.0;
  double w = 1.0;
  double h = 1.0;

  Point2 center() const { return {bx, by}; }
  double x0() const { return bx - 0.5 * w; }
  double x1() const { return bx + 0.5 * w; }
  double y0() const { return by - 0.5 * h; }
  double y1() const { return by + 0.5 * h; }
  double area() const { return w * h; }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

bool is_valid(const BoundingBox& box);

double iou(const BoundingBox& a, const BoundingBox& b);

/// Regression parametrisation (dx, dy, log dw, log dh) of `target` relative
/// to `anchor`, as used by two-stage detectors.
std::array<double, 4> encode_deltas(const BoundingBox& anchor,
                                    const BoundingBox& target);
BoundingBox apply_deltas(const BoundingBox& anchor,
                         const std::array<double, 4>& deltas);

}  // namespace fsa
