#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fsa/autograd.hpp"
#include "fsa/grouping.hpp"
#include "fsa/losses.hpp"
#include "fsa/network.hpp"
#include "fsa/ssf.hpp"
#include "fsa/synth.hpp"

namespace fsa::nn {

struct TrainConfig {
  double lr_initial = 1e-3;
  double lr_after_decay = 1e-4;
  int iterations = 2000;
  /// Step at which the learning rate drops; unset means 70% of iterations.
  std::optional<int> decay_step;
  double momentum = 0.9;
  losses::ObjectiveWeights weights;
  bool normalize_reconstruction = false;
  losses::DifferenceMode difference_mode = losses::DifferenceMode::kPerSample;
  std::uint64_t seed = 0;
};

void validate(const TrainConfig& cfg);

enum class TrainMode {
  /// Detection, feature separation and every adversarial branch.
  kAdapted,
  /// L_c + L_r only; no other branch is built.
  kSourceOnly,
};

/// One image ready for the network: tensors, proposals and (for source
/// images) detector targets. Grouping depends only on proposal centers, so
/// it is computed once here.
struct PreparedImage {
  synth::Domain domain = synth::Domain::kSource;
  Tensor rgb;
  Tensor gray;
  std::vector<BoundingBox> proposals;
  std::vector<std::vector<std::size_t>> groups;
  /// Source images only.
  std::vector<int> class_targets;
  std::vector<double> box_targets;
  std::vector<int> positive;
};

PreparedImage prepare_image(const synth::Sample& sample, const grouping::ProposalSet& proposals,
                            const ssf::ScaleSweepConfig& ssf_cfg = {});

/// Detector targets: class of the best-IoU ground truth at IoU >= 0.5 (else
/// background 0), and encoded box deltas for the positives.
struct DetectorTargets {
  std::vector<int> classes;
  std::vector<double> deltas;
  std::vector<int> positive;
};
DetectorTargets detector_targets(std::span<const BoundingBox> proposals,
                                 const synth::Annotations& ann);

struct DetectorLosses {
  Tensor l_c;
  Tensor l_r;
};
DetectorLosses detector_losses(const Tensor& class_logits, const Tensor& box_deltas,
                               const DetectorTargets& gt);

/// The graph of one source/target pair.
struct Objective {
  Tensor l_c, l_r, l_rec, l_diff, l_adv1, l_adv2, l_adv3, l_ri;
  /// Scalar that backpropagation minimises. Adversarial branches enter with
  /// weight 1 behind gradient reversal, so classifiers descend on them while
  /// the features receive -lambda times their gradient.
  Tensor optimized;
  losses::LossTerms terms;
  /// Domain-classifier accuracies (local, mid, global, instance).
  std::array<double, 4> domain_accuracy{};
};

/// Builds every loss for one pair. `grl_lambda` overrides the gradient
/// reversal strength (finite-difference checks use -1, which turns the layer
/// into a plain identity); by default it is weights.lambda.
Objective build_objective(const Network& net, const PreparedImage& source,
                          const PreparedImage& target, const TrainConfig& cfg, TrainMode mode,
                          std::optional<double> grl_lambda = std::nullopt);

struct StepMetrics {
  int step = 0;
  losses::LossTerms terms;
  double total = 0.0;
  std::array<double, 4> domain_accuracy{};
};

/// SGD with momentum over every network parameter.
class Trainer {
 public:
  Trainer(Network& net, TrainConfig cfg, TrainMode mode);

  StepMetrics step(const PreparedImage& source, const PreparedImage& target);
  double learning_rate(int step) const;
  int steps_taken() const { return step_; }

 private:
  Network& net_;
  TrainConfig cfg_;
  TrainMode mode_;
  int step_ = 0;
  std::vector<Tensor*> params_;
  std::vector<std::vector<double>> velocity_;
};

/// Writes the header `step,L_c,L_r,L_rec,L_diff,L_lg,L_ri,total`.
void write_loss_header(std::ostream& os);
void write_loss_row(std::ostream& os, const StepMetrics& m);

// --- evaluation --------------------------------------------------------------

/// Fraction of target proposals the detector gets right: background
/// proposals (IoU < 0.5 with every object) must be predicted background;
/// others must be predicted as a class whose ground-truth box overlaps the
/// refined box at IoU >= 0.5.
double proposal_match_rate(const Network& net, std::span<const PreparedImage> images,
                           std::span<const synth::Sample> samples);

struct ProbeConfig {
  int iterations = 2000;
  double learning_rate = 0.5;
  double l2 = 1e-4;
};

/// Logistic-regression domain probe on globally pooled f3 of a frozen
/// network: fit on one split, report accuracy on the other.
double probe_domain_accuracy(const Network& net, std::span<const PreparedImage> fit_images,
                             std::span<const PreparedImage> test_images,
                             const ProbeConfig& cfg = {});

}  // namespace fsa::nn
