#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsa/geometry.hpp"
#include "fsa/ssf.hpp"

namespace fsa::grouping {

struct Proposal {
  BoundingBox box;
  std::vector<double> feature;
  double objectness = 1.0;
};

struct ProposalSet {
  std::string image_id;
  std::vector<Proposal> proposals;
};

/// Per-image context features, broadcast to every proposal of the image.
struct ContextVectors {
  std::vector<double> f_l;
  std::vector<double> f_m;
  std::vector<double> f_g;
};

struct InstanceGroup {
  std::vector<std::size_t> member_indices;
  Point2 center;
  std::vector<double> pooled_feature;
};

struct GroupingResult {
  std::vector<InstanceGroup> groups;
  std::vector<std::size_t> outliers;
  ssf::ClusteringResult clustering;
};

/// Raised when every proposal lands outside sigma* of all centers.
class DegenerateClustering : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<Point2> box_centers(const ProposalSet& set);

/// Global average pooling over a group: the componentwise mean.
std::vector<double> pool_group(std::span<const std::vector<double>> features);

/// [f_l, f_m, f_g, f_r]
std::vector<double> context_fuse(const ContextVectors& ctx,
                                 std::span<const double> f_r);

/// SSF on box centers, outlier removal, then per-group mean of the proposal
/// features. Empty clusters are dropped. Throws DegenerateClustering if
/// nothing survives outlier removal.
GroupingResult cluster_proposals(const ProposalSet& set,
                                 const ssf::ScaleSweepConfig& cfg);

/// Same grouping as cluster_proposals, but groups pool the context-fused
/// features instead of the raw ones.
GroupingResult group_fused_features(const ProposalSet& set,
                                    const ContextVectors& ctx,
                                    const ssf::ScaleSweepConfig& cfg);

/// cluster_proposals, falling back to one group holding every proposal when
/// the clustering is degenerate.
GroupingResult cluster_proposals_or_single_group(const ProposalSet& set,
                                                 const ssf::ScaleSweepConfig& cfg);

}  // namespace fsa::grouping
