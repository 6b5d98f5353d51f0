#include "fsa/geometry.hpp"

#include <algorithm>

namespace fsa {

bool is_valid(const BoundingBox& box) {
  return std::isfinite(box.bx) && std::isfinite(box.by) &&
         std::isfinite(box.w) && std::isfinite(box.h) && box.w > 0.0 &&
         box.h > 0.0;
}

double iou(const BoundingBox& a, const BoundingBox& b) {
  const double ix = std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0());
  const double iy = std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0());
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

std::array<double, 4> encode_deltas(const BoundingBox& anchor,
                                    const BoundingBox& target) {
  return {(target.bx - anchor.bx) / anchor.w, (target.by - anchor.by) / anchor.h,
          std::log(target.w / anchor.w), std::log(target.h / anchor.h)};
}

BoundingBox apply_deltas(const BoundingBox& anchor,
                         const std::array<double, 4>& d) {
  // Clamp the log-scale terms so a wild prediction cannot overflow exp().
  constexpr double kMaxLog = 4.0;
  return {anchor.bx + d[0] * anchor.w, anchor.by + d[1] * anchor.h,
          anchor.w * std::exp(std::clamp(d[2], -kMaxLog, kMaxLog)),
          anchor.h * std::exp(std::clamp(d[3], -kMaxLog, kMaxLog))};
}

}  // namespace fsa
