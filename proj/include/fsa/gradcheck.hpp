#pragma once

// Central-difference verification of the network's analytic gradients.
//
// Gradient reversal makes the trained objective a saddle problem, so the
// analytic gradient of a reversed branch is not the derivative of any scalar.
// Checks therefore run with the reversal strength set to -1, which turns the
// layer into an identity in both directions; the sign flip itself is verified
// separately against the lambda = +1 gradients.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fsa/network.hpp"
#include "fsa/synth.hpp"
#include "fsa/trainer.hpp"

namespace fsa::nn {

enum class Branch { kLc, kLr, kLrec, kLdiff, kLadv1, kLadv2, kLadv3, kLri, kComposite };
inline constexpr int kNumBranches = 9;

std::string branch_name(Branch b);

/// 32x32 input with narrow layers; keeps a full check of every branch fast.
NetworkSpec small_network_spec();

struct GradcheckConfig {
  std::uint64_t seed = 0;
  double step = 1e-5;
  double tolerance = 1e-4;
  int coords_per_layer = 50;
  NetworkSpec network = small_network_spec();
  TrainConfig train;
  /// Negates the analytic gradient of the first extractor layer before the
  /// comparison; a negative control that must fail.
  bool inject_wrong_sign = false;
};

struct BranchReport {
  Branch branch = Branch::kComposite;
  double max_rel_error = 0.0;
  std::string worst_layer;
  int checked = 0;
  /// Coordinates where the one-sided differences disagree, i.e. the loss has
  /// a kink (an L1 residual crossing zero) inside the step.
  int skipped_nonsmooth = 0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<BranchReport> branches;
  /// lambda = +1 gradients of the adversarial branches equal the exact
  /// negation of the lambda = -1 gradients for the extractor, and are
  /// identical for the classifiers.
  bool grl_sign_exact = false;
  bool passed = false;
};

/// |a - n| / max(|a|, |n|, floor), with floor = 1e-6 * max(1, |loss|) so that
/// gradients below the rounding level of the loss are not over-scored.
double relative_error(double analytic, double numeric, double floor);

/// Builds a small random scene pair and checks every branch.
GradcheckReport finite_difference_check(const GradcheckConfig& cfg);

/// Checks a caller-supplied pair and network.
GradcheckReport finite_difference_check(Network& net, const PreparedImage& source,
                                        const PreparedImage& target, const GradcheckConfig& cfg);

}  // namespace fsa::nn
