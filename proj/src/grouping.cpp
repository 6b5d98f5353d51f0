#include "fsa/grouping.hpp"

#include <cmath>

namespace fsa::grouping {
namespace {

void validate(const ProposalSet& set) {
  if (set.proposals.empty()) throw std::invalid_argument("proposal set is empty");
  const std::size_t d = set.proposals.front().feature.size();
  for (const auto& p : set.proposals) {
    if (!is_valid(p.box)) throw std::invalid_argument("proposal has an invalid box");
    if (p.feature.size() != d) {
      throw std::invalid_argument("proposal features differ in length");
    }
  }
}

std::vector<InstanceGroup> build_groups(const ssf::ClusteringResult& clustering) {
  const auto& labels = clustering.assignment.labels;
  std::vector<InstanceGroup> groups(clustering.model.k());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != ssf::kOutlier) groups[static_cast<std::size_t>(labels[i])].member_indices.push_back(i);
  }
  std::vector<InstanceGroup> kept;
  for (std::size_t c = 0; c < groups.size(); ++c) {
    if (groups[c].member_indices.empty()) continue;
    groups[c].center = clustering.model.centers[c];
    kept.push_back(std::move(groups[c]));
  }
  return kept;
}

template <typename FeatureOf>
GroupingResult group_with(const ProposalSet& set, const ssf::ScaleSweepConfig& cfg,
                          FeatureOf&& feature_of) {
  validate(set);
  const auto centers = box_centers(set);
  GroupingResult out;
  out.clustering = ssf::cluster(centers, cfg);
  out.groups = build_groups(out.clustering);
  if (out.groups.empty()) {
    throw DegenerateClustering("every proposal of image '" + set.image_id +
                               "' is an outlier");
  }
  for (std::size_t i = 0; i < centers.size(); ++i) {
    if (out.clustering.assignment.is_outlier(i)) out.outliers.push_back(i);
  }
  for (auto& g : out.groups) {
    std::vector<std::vector<double>> members;
    members.reserve(g.member_indices.size());
    for (std::size_t i : g.member_indices) members.push_back(feature_of(set.proposals[i]));
    g.pooled_feature = pool_group(members);
  }
  return out;
}

}  // namespace

std::vector<Point2> box_centers(const ProposalSet& set) {
  std::vector<Point2> centers;
  centers.reserve(set.proposals.size());
  for (const auto& p : set.proposals) centers.push_back(p.box.center());
  return centers;
}

std::vector<double> pool_group(std::span<const std::vector<double>> features) {
  if (features.empty()) throw std::invalid_argument("cannot pool an empty group");
  const std::size_t d = features.front().size();
  std::vector<double> sum(d, 0.0);
  for (const auto& f : features) {
    if (f.size() != d) throw std::invalid_argument("feature length mismatch in group");
    for (std::size_t j = 0; j < d; ++j) sum[j] += f[j];
  }
  const double n = static_cast<double>(features.size());
  for (auto& v : sum) v /= n;
  return sum;
}

std::vector<double> context_fuse(const ContextVectors& ctx,
                                 std::span<const double> f_r) {
  std::vector<double> out;
  out.reserve(ctx.f_l.size() + ctx.f_m.size() + ctx.f_g.size() + f_r.size());
  out.insert(out.end(), ctx.f_l.begin(), ctx.f_l.end());
  out.insert(out.end(), ctx.f_m.begin(), ctx.f_m.end());
  out.insert(out.end(), ctx.f_g.begin(), ctx.f_g.end());
  out.insert(out.end(), f_r.begin(), f_r.end());
  return out;
}

GroupingResult cluster_proposals(const ProposalSet& set,
                                 const ssf::ScaleSweepConfig& cfg) {
  return group_with(set, cfg, [](const Proposal& p) { return p.feature; });
}

GroupingResult group_fused_features(const ProposalSet& set,
                                    const ContextVectors& ctx,
                                    const ssf::ScaleSweepConfig& cfg) {
  return group_with(set, cfg, [&ctx](const Proposal& p) {
    return context_fuse(ctx, p.feature);
  });
}

GroupingResult cluster_proposals_or_single_group(const ProposalSet& set,
                                                 const ssf::ScaleSweepConfig& cfg) {
  try {
    return cluster_proposals(set, cfg);
  } catch (const DegenerateClustering&) {
    GroupingResult out;
    const auto centers = box_centers(set);
    out.clustering = ssf::cluster(centers, cfg);
    InstanceGroup all;
    std::vector<std::vector<double>> members;
    double cx = 0.0;
    double cy = 0.0;
    for (std::size_t i = 0; i < set.proposals.size(); ++i) {
      all.member_indices.push_back(i);
      members.push_back(set.proposals[i].feature);
      cx += centers[i].x;
      cy += centers[i].y;
    }
    const double n = static_cast<double>(centers.size());
    all.center = {cx / n, cy / n};
    all.pooled_feature = pool_group(members);
    out.groups.push_back(std::move(all));
    return out;
  }
}

}  // namespace fsa::grouping
