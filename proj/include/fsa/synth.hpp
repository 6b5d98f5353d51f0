#pragma once

// Deterministic two-domain detection corpus: clean colored shapes (source),
// fogged/color-shifted copies (target), and redundant noisy proposals that
// stand in for a region proposal network.

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "fsa/feature_map.hpp"
#include "fsa/geometry.hpp"
#include "fsa/grouping.hpp"

namespace fsa::synth {

enum class ShapeKind { kDisk = 0, kSquare = 1, kTriangle = 2 };
inline constexpr int kNumShapeKinds = 3;

/// Detector class id of a shape; 0 is background.
inline int class_id(ShapeKind s) { return static_cast<int>(s) + 1; }

using Rgb = std::array<double, 3>;

struct SceneSpec {
  int height = 64;
  int width = 64;
  int min_objects = 1;
  int max_objects = 3;
  std::vector<ShapeKind> shapes{ShapeKind::kDisk, ShapeKind::kSquare, ShapeKind::kTriangle};
  std::vector<Rgb> palette{{0.9, 0.2, 0.2}, {0.2, 0.8, 0.3}, {0.25, 0.35, 0.95},
                           {0.95, 0.85, 0.2}, {0.85, 0.3, 0.9}, {0.2, 0.85, 0.9}};
  Rgb background{0.08, 0.08, 0.1};
  double min_size = 14.0;
  double max_size = 24.0;
  /// Minimum gap between object boxes, pixels.
  double spacing = 2.0;
  int max_retries = 200;
};

struct DomainShiftSpec {
  Rgb color_shift{0.0, 0.0, 0.0};
  double fog_alpha = 0.0;
  int blur_radius = 0;
  double noise_std = 0.0;
};

/// The default source -> target shift used by the toy experiments.
DomainShiftSpec default_shift();

struct ProposalNoiseSpec {
  /// Standard deviation of the center jitter. Zero disables all jitter,
  /// including the +-size_jitter relative size perturbation.
  double jitter_std = 1.5;
  double size_jitter = 0.1;
  int redundancy = 6;
  int background_count = 2;
  double background_margin = 12.0;
  int max_retries = 1000;
};

enum class Domain { kSource, kTarget };

struct Annotations {
  std::vector<BoundingBox> boxes;
  /// Detector class ids (1..kNumShapeKinds).
  std::vector<int> labels;

  friend bool operator==(const Annotations&, const Annotations&) = default;
};

class Sample {
 public:
  Sample() = default;
  Sample(FeatureMap rgb, Annotations ann, Domain domain);

  const FeatureMap& rgb() const { return rgb_; }
  const FeatureMap& gray() const { return gray_; }
  Domain domain() const { return domain_; }
  std::size_t object_count() const { return ann_.boxes.size(); }

  /// Labels usable by training code. Throws std::logic_error for target
  /// samples, whose labels are withheld.
  const Annotations& training_annotations() const;
  /// Ground truth for evaluation and proposal simulation, any domain.
  const Annotations& evaluation_annotations() const { return ann_; }

  void set_rgb(FeatureMap rgb);
  void set_domain(Domain d) { domain_ = d; }

  friend bool operator==(const Sample&, const Sample&) = default;

 private:
  FeatureMap rgb_;
  FeatureMap gray_;
  Annotations ann_;
  Domain domain_ = Domain::kSource;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void validate(const SceneSpec& spec);

Sample generate_scene(const SceneSpec& spec, std::uint64_t seed);

Sample apply_domain_shift(const Sample& s, const DomainShiftSpec& shift,
                          std::uint64_t seed);

/// Proposals carry empty feature vectors; the trainer fills them in.
grouping::ProposalSet generate_proposals(const Sample& s,
                                         const ProposalNoiseSpec& noise,
                                         std::uint64_t seed);

/// Ground-truth object index of each proposal (-1 for background), by
/// highest IoU above `iou_threshold`.
std::vector<int> match_proposals(const grouping::ProposalSet& set,
                                 const Annotations& ann, double iou_threshold = 0.5);

}  // namespace fsa::synth
