#pragma once

// File formats: point CSV, clustering/grouping/proposal/label JSON, binary
// PPM images and flat float64 checkpoints.

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "fsa/feature_map.hpp"
#include "fsa/geometry.hpp"
#include "fsa/grouping.hpp"
#include "fsa/network.hpp"
#include "fsa/ssf.hpp"
#include "fsa/synth.hpp"

namespace fsa::io {

using Json = nlohmann::json;

/// Malformed or unreadable input.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);
Json read_json(const std::filesystem::path& path);

/// CSV with header `x,y`. Blank trailing lines are ignored.
std::vector<Point2> parse_points_csv(const std::string& text);
std::vector<Point2> read_points_csv(const std::filesystem::path& path);

Json clustering_to_json(const ssf::ClusteringResult& r);
/// One row per snapshot: sigma, K, lifetime of sigma.
std::string lifetime_csv(const ssf::ClusteringResult& r, const ssf::ScaleSweepConfig& cfg);

grouping::ProposalSet proposals_from_json(const Json& j);
Json proposals_to_json(const grouping::ProposalSet& set);
Json grouping_to_json(const grouping::GroupingResult& r);

Json annotations_to_json(const synth::Annotations& ann);
synth::Annotations annotations_from_json(const Json& j);

/// Binary P6, 8-bit, values in [0, 1] rounded to the nearest level.
void write_ppm(const std::filesystem::path& path, const FeatureMap& rgb);
FeatureMap read_ppm(const std::filesystem::path& path);

/// Little-endian float64 values of every parameter, in layer order, plus a
/// JSON manifest of names, shapes and byte offsets.
void write_checkpoint(const std::filesystem::path& bin, const std::filesystem::path& manifest,
                      nn::Network& net);
void read_checkpoint(const std::filesystem::path& bin, nn::Network& net);

}  // namespace fsa::io
