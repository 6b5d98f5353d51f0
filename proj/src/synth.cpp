#include "fsa/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "fsa/losses.hpp"

namespace fsa::synth {
namespace {

bool inside(ShapeKind kind, double cx, double cy, double size, double px, double py) {
  const double half = 0.5 * size;
  switch (kind) {
    case ShapeKind::kDisk: {
      const double dx = px - cx;
      const double dy = py - cy;
      return dx * dx + dy * dy <= half * half;
    }
    case ShapeKind::kSquare:
      return std::abs(px - cx) <= half && std::abs(py - cy) <= half;
    case ShapeKind::kTriangle: {
      // Apex up; base along the bottom edge of the bounding square.
      const double top = cy - half;
      const double bottom = cy + half;
      if (py < top || py > bottom) return false;
      const double t = (py - top) / size;
      return std::abs(px - cx) <= t * half;
    }
  }
  return false;
}

FeatureMap box_blur(const FeatureMap& in, int r) {
  if (r <= 0) return in;
  FeatureMap tmp(in.c, in.h, in.w);
  FeatureMap out(in.c, in.h, in.w);
  const double n = 2.0 * r + 1.0;
  for (int c = 0; c < in.c; ++c) {
    for (int y = 0; y < in.h; ++y) {
      for (int x = 0; x < in.w; ++x) {
        double s = 0.0;
        for (int k = -r; k <= r; ++k) s += in.at(c, y, std::clamp(x + k, 0, in.w - 1));
        tmp.at(c, y, x) = s / n;
      }
    }
    for (int y = 0; y < in.h; ++y) {
      for (int x = 0; x < in.w; ++x) {
        double s = 0.0;
        for (int k = -r; k <= r; ++k) s += tmp.at(c, std::clamp(y + k, 0, in.h - 1), x);
        out.at(c, y, x) = s / n;
      }
    }
  }
  return out;
}

bool boxes_clear(const BoundingBox& a, const BoundingBox& b, double gap) {
  return a.x1() + gap <= b.x0() || b.x1() + gap <= a.x0() || a.y1() + gap <= b.y0() ||
         b.y1() + gap <= a.y0();
}

}  // namespace

DomainShiftSpec default_shift() {
  DomainShiftSpec s;
  s.color_shift = {0.05, -0.05, 0.1};
  s.fog_alpha = 0.1;
  s.blur_radius = 1;
  s.noise_std = 0.02;
  return s;
}

Sample::Sample(FeatureMap rgb, Annotations ann, Domain domain)
    : rgb_(std::move(rgb)), gray_(losses::rgb_to_grayscale(rgb_)), ann_(std::move(ann)),
      domain_(domain) {}

const Annotations& Sample::training_annotations() const {
  if (domain_ == Domain::kTarget) {
    throw std::logic_error("target-domain labels are evaluation-only");
  }
  return ann_;
}

void Sample::set_rgb(FeatureMap rgb) {
  rgb_ = std::move(rgb);
  gray_ = losses::rgb_to_grayscale(rgb_);
}

void validate(const SceneSpec& spec) {
  if (spec.height < 32 || spec.width < 32) throw std::invalid_argument("canvas must be at least 32x32");
  if (spec.min_objects < 1 || spec.max_objects < spec.min_objects) {
    throw std::invalid_argument("object_count_range must satisfy 1 <= min <= max");
  }
  if (spec.shapes.empty()) throw std::invalid_argument("no shapes enabled");
  if (spec.palette.empty()) throw std::invalid_argument("palette is empty");
  if (!(spec.min_size > 1.0) || spec.max_size < spec.min_size) {
    throw std::invalid_argument("object size range is invalid");
  }
  if (spec.max_size + 2.0 > std::min(spec.height, spec.width)) {
    throw std::invalid_argument("objects do not fit on the canvas");
  }
}

Sample generate_scene(const SceneSpec& spec, std::uint64_t seed) {
  validate(spec);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> count_dist(spec.min_objects, spec.max_objects);
  std::uniform_int_distribution<std::size_t> shape_dist(0, spec.shapes.size() - 1);
  std::uniform_int_distribution<std::size_t> color_dist(0, spec.palette.size() - 1);
  std::uniform_real_distribution<double> size_dist(spec.min_size, spec.max_size);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  FeatureMap rgb(3, spec.height, spec.width);
  for (int c = 0; c < 3; ++c) {
    std::fill(rgb.data.begin() + static_cast<std::ptrdiff_t>(c * rgb.plane()),
              rgb.data.begin() + static_cast<std::ptrdiff_t>((c + 1) * rgb.plane()),
              spec.background[static_cast<std::size_t>(c)]);
  }

  Annotations ann;
  const int count = count_dist(rng);
  for (int obj = 0; obj < count; ++obj) {
    const ShapeKind kind = spec.shapes[shape_dist(rng)];
    const Rgb color = spec.palette[color_dist(rng)];
    bool placed = false;
    for (int attempt = 0; attempt < spec.max_retries && !placed; ++attempt) {
      const double size = size_dist(rng);
      const double half = 0.5 * size;
      const double cx = half + 1.0 + unit(rng) * (spec.width - size - 2.0);
      const double cy = half + 1.0 + unit(rng) * (spec.height - size - 2.0);
      const BoundingBox candidate{cx, cy, size, size};
      const bool clear = std::all_of(ann.boxes.begin(), ann.boxes.end(), [&](const BoundingBox& b) {
        return boxes_clear(candidate, b, spec.spacing);
      });
      if (!clear) continue;

      int x0 = spec.width, x1 = -1, y0 = spec.height, y1 = -1;
      for (int y = 0; y < spec.height; ++y) {
        for (int x = 0; x < spec.width; ++x) {
          if (!inside(kind, cx, cy, size, x + 0.5, y + 0.5)) continue;
          for (int c = 0; c < 3; ++c) rgb.at(c, y, x) = color[static_cast<std::size_t>(c)];
          x0 = std::min(x0, x);
          x1 = std::max(x1, x);
          y0 = std::min(y0, y);
          y1 = std::max(y1, y);
        }
      }
      if (x1 < 0) continue;
      ann.boxes.push_back({0.5 * (x0 + x1 + 1), 0.5 * (y0 + y1 + 1),
                           static_cast<double>(x1 + 1 - x0), static_cast<double>(y1 + 1 - y0)});
      ann.labels.push_back(class_id(kind));
      placed = true;
    }
    if (!placed) {
      throw GenerationError("could not place object " + std::to_string(obj) + " without overlap");
    }
  }
  return Sample(std::move(rgb), std::move(ann), Domain::kSource);
}

Sample apply_domain_shift(const Sample& s, const DomainShiftSpec& shift, std::uint64_t seed) {
  if (!(shift.fog_alpha >= 0.0 && shift.fog_alpha <= 1.0)) {
    throw std::invalid_argument("fog_alpha must lie in [0, 1]");
  }
  FeatureMap rgb = s.rgb();
  for (int c = 0; c < 3; ++c) {
    const double off = shift.color_shift[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < rgb.plane(); ++i) rgb.data[c * rgb.plane() + i] += off;
  }
  rgb = box_blur(rgb, shift.blur_radius);
  for (double& v : rgb.data) v = (1.0 - shift.fog_alpha) * v + shift.fog_alpha;
  if (shift.noise_std > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, shift.noise_std);
    for (double& v : rgb.data) v += noise(rng);
  }
  for (double& v : rgb.data) v = std::clamp(v, 0.0, 1.0);
  Sample out = s;
  out.set_rgb(std::move(rgb));
  out.set_domain(Domain::kTarget);
  return out;
}

grouping::ProposalSet generate_proposals(const Sample& s, const ProposalNoiseSpec& noise,
                                         std::uint64_t seed) {
  const auto& ann = s.evaluation_annotations();
  if (ann.boxes.empty()) throw std::invalid_argument("sample has no objects");
  if (noise.redundancy < 1) throw std::invalid_argument("redundancy must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> jitter(0.0, noise.jitter_std > 0.0 ? noise.jitter_std : 1.0);
  std::uniform_real_distribution<double> scale(1.0 - noise.size_jitter, 1.0 + noise.size_jitter);
  std::uniform_real_distribution<double> ux(0.0, s.rgb().w);
  std::uniform_real_distribution<double> uy(0.0, s.rgb().h);

  grouping::ProposalSet set;
  for (const auto& gt : ann.boxes) {
    for (int r = 0; r < noise.redundancy; ++r) {
      BoundingBox b = gt;
      if (noise.jitter_std > 0.0) {
        b.bx += jitter(rng);
        b.by += jitter(rng);
        b.w *= scale(rng);
        b.h *= scale(rng);
      }
      set.proposals.push_back({b, {}, 1.0});
    }
  }
  double min_w = ann.boxes[0].w, max_w = ann.boxes[0].w;
  for (const auto& b : ann.boxes) {
    min_w = std::min({min_w, b.w, b.h});
    max_w = std::max({max_w, b.w, b.h});
  }
  std::uniform_real_distribution<double> bg_size(min_w, max_w);
  for (int k = 0; k < noise.background_count; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < noise.max_retries && !placed; ++attempt) {
      const Point2 c{ux(rng), uy(rng)};
      const bool far = std::all_of(ann.boxes.begin(), ann.boxes.end(), [&](const BoundingBox& b) {
        return distance(c, b.center()) >= noise.background_margin;
      });
      if (!far) continue;
      const double size = bg_size(rng);
      set.proposals.push_back({{c.x, c.y, size, size}, {}, 0.5});
      placed = true;
    }
    if (!placed) throw GenerationError("background margin cannot be satisfied");
  }
  return set;
}

std::vector<int> match_proposals(const grouping::ProposalSet& set, const Annotations& ann,
                                 double iou_threshold) {
  std::vector<int> out;
  out.reserve(set.proposals.size());
  for (const auto& p : set.proposals) {
    int best = -1;
    double best_iou = iou_threshold;
    for (std::size_t g = 0; g < ann.boxes.size(); ++g) {
      const double v = iou(p.box, ann.boxes[g]);
      if (v >= best_iou) {
        if (best < 0 || v > best_iou) {
          best = static_cast<int>(g);
          best_iou = v;
        }
      }
    }
    out.push_back(best);
  }
  return out;
}

}  // namespace fsa::synth
