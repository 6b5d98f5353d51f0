#pragma once

// Scalar loss kernels on plain values. The network evaluates the same
// formulas through its autograd ops, which delegate their forward values here.

#include <span>
#include <vector>

#include "fsa/feature_map.hpp"

namespace fsa::losses {

inline constexpr double kProbFloor = 1e-7;
inline constexpr double kProbCeil = 1.0 - 1e-7;

struct ObjectiveWeights {
  double beta = 0.1;
  double lambda = 1.0;
  double gamma = 5.0;
};

void validate(const ObjectiveWeights& w);

/// How the pooled private/shared product of the difference loss is formed.
enum class DifferenceMode {
  /// One squared inner product per sample, averaged over samples.
  kPerSample,
  /// ||D^T F||_F^2 / n with D, F the (n x C) stacks of pooled vectors.
  kBatchMatrix,
};

double clamp_probability(double p);

/// Channel-wise mean over all spatial positions.
std::vector<double> global_pool(const FeatureMap& f);

double difference_loss(std::span<const FeatureMap> d_source,
                       std::span<const FeatureMap> f3_source,
                       std::span<const FeatureMap> d_target,
                       std::span<const FeatureMap> f3_target,
                       DifferenceMode mode = DifferenceMode::kPerSample);

/// Sum of absolute differences per image, averaged over images within each
/// domain, then summed over domains. An empty domain contributes nothing.
/// `normalize_by_pixels` divides each image term by its element count.
double reconstruction_loss(std::span<const FeatureMap> gray_source,
                           std::span<const FeatureMap> recon_source,
                           std::span<const FeatureMap> gray_target,
                           std::span<const FeatureMap> recon_target,
                           bool normalize_by_pixels = false);

/// -(1-p)^gamma log p, with p the probability of "source".
double focal_source_term(double p, double gamma);
/// -p^gamma log(1-p).
double focal_target_term(double p, double gamma);

/// Per-image lists of group probabilities; each image is averaged over its
/// groups, each domain over its images, and the two domains are averaged.
double region_instance_loss(std::span<const std::vector<double>> source_probs,
                            std::span<const std::vector<double>> target_probs,
                            double gamma);

/// Least-squares per-location loss on single-channel classifier maps: mean
/// of p^2 over source locations plus mean of (1-p)^2 over target locations.
double local_adv_loss(std::span<const FeatureMap> source_maps,
                      std::span<const FeatureMap> target_maps);

/// Image-level focal adversarial loss: region_instance_loss with one
/// probability per image.
double global_adv_loss(std::span<const double> source_probs,
                       std::span<const double> target_probs, double gamma);

struct LossTerms {
  double l_c = 0.0;
  double l_r = 0.0;
  double l_rec = 0.0;
  double l_diff = 0.0;
  double l_lg = 0.0;
  double l_ri = 0.0;
};

/// L_c + L_r + beta (L_rec + L_diff) - lambda (L_lg + L_ri).
double total_objective(double l_c, double l_r, double l_rec, double l_diff,
                       double l_lg, double l_ri, const ObjectiveWeights& w);
double total_objective(const LossTerms& t, const ObjectiveWeights& w);

/// ITU-R BT.601 luma.
FeatureMap rgb_to_grayscale(const FeatureMap& rgb);

inline constexpr double kLumaR = 0.299;
inline constexpr double kLumaG = 0.587;
inline constexpr double kLumaB = 0.114;

}  // namespace fsa::losses
