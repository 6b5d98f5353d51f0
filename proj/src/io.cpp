#include "fsa/io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace fsa::io {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_number(const std::string& field, std::size_t line) {
  const std::string t = trim(field);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(t, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (t.empty() || used != t.size() || !std::isfinite(v)) {
    throw InputError("line " + std::to_string(line) + ": '" + t + "' is not a finite number");
  }
  return v;
}

double number_field(const Json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_number()) {
    throw InputError(std::string("missing or non-numeric field '") + key + "'");
  }
  return j.at(key).get<double>();
}

void put_u64_le(std::ostream& os, std::uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(bytes, 8);
}

}  // namespace

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

Json read_json(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

std::vector<Point2> parse_points_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || trim(line) != "x,y") {
    throw InputError("points CSV must start with the header 'x,y'");
  }
  std::vector<Point2> points;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
      throw InputError("line " + std::to_string(n) + ": expected two comma-separated values");
    }
    points.push_back({parse_number(line.substr(0, comma), n), parse_number(line.substr(comma + 1), n)});
  }
  if (points.empty()) throw InputError("points CSV holds no points");
  return points;
}

std::vector<Point2> read_points_csv(const std::filesystem::path& path) {
  return parse_points_csv(read_text(path));
}

Json clustering_to_json(const ssf::ClusteringResult& r) {
  Json j;
  j["k"] = r.model.k();
  j["sigma_star"] = r.model.sigma_star;
  j["centers"] = Json::array();
  for (const auto& c : r.model.centers) j["centers"].push_back({c.x, c.y});
  j["assignments"] = Json::array();
  for (int label : r.assignment.labels) {
    if (label == ssf::kOutlier) {
      j["assignments"].push_back("outlier");
    } else {
      j["assignments"].push_back(label);
    }
  }
  j["lifetimes"] = Json::object();
  for (const auto& [k, e] : r.table) {
    j["lifetimes"][std::to_string(k)] = {
        {"sigma_inf", e.sigma_inf}, {"sigma_sup", e.sigma_sup}, {"lifetime", e.lifetime}};
  }
  j["truncated"] = r.sweep.truncated;
  return j;
}

std::string lifetime_csv(const ssf::ClusteringResult& r, const ssf::ScaleSweepConfig& cfg) {
  std::ostringstream os;
  os << "sigma,K,lifetime\n";
  char buf[128];
  for (const auto& s : r.sweep.snapshots) {
    std::snprintf(buf, sizeof buf, "%.17g,%zu,%.17g\n", s.sigma, s.k(), ssf::lifetime(s.sigma, cfg));
    os << buf;
  }
  return os.str();
}

grouping::ProposalSet proposals_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("proposals") || !j.at("proposals").is_array()) {
    throw InputError("proposal file must be an object with a 'proposals' array");
  }
  grouping::ProposalSet set;
  if (j.contains("image_id")) {
    const Json& id = j.at("image_id");
    set.image_id = id.is_string() ? id.get<std::string>() : id.dump();
  }
  for (const Json& p : j.at("proposals")) {
    if (!p.is_object()) throw InputError("each proposal must be an object");
    grouping::Proposal prop;
    prop.box = {number_field(p, "bx"), number_field(p, "by"), number_field(p, "w"), number_field(p, "h")};
    if (!is_valid(prop.box)) throw InputError("proposal box must be finite with w, h > 0");
    prop.objectness = p.contains("objectness") ? number_field(p, "objectness") : 1.0;
    if (p.contains("feature")) {
      if (!p.at("feature").is_array()) throw InputError("'feature' must be an array");
      for (const Json& v : p.at("feature")) {
        if (!v.is_number()) throw InputError("feature entries must be numbers");
        prop.feature.push_back(v.get<double>());
      }
    }
    set.proposals.push_back(std::move(prop));
  }
  if (set.proposals.empty()) throw InputError("proposal set is empty");
  const std::size_t d = set.proposals.front().feature.size();
  for (const auto& p : set.proposals) {
    if (p.feature.size() != d) throw InputError("proposal features differ in length");
  }
  return set;
}

Json proposals_to_json(const grouping::ProposalSet& set) {
  Json j;
  j["image_id"] = set.image_id;
  j["proposals"] = Json::array();
  for (const auto& p : set.proposals) {
    j["proposals"].push_back({{"bx", p.box.bx},
                              {"by", p.box.by},
                              {"w", p.box.w},
                              {"h", p.box.h},
                              {"objectness", p.objectness},
                              {"feature", p.feature}});
  }
  return j;
}

Json grouping_to_json(const grouping::GroupingResult& r) {
  Json j;
  j["clustering"] = clustering_to_json(r.clustering);
  j["groups"] = Json::array();
  for (const auto& g : r.groups) {
    j["groups"].push_back({{"members", g.member_indices},
                           {"center", {g.center.x, g.center.y}},
                           {"pooled_feature", g.pooled_feature}});
  }
  j["outliers"] = r.outliers;
  return j;
}

Json annotations_to_json(const synth::Annotations& ann) {
  Json j;
  j["boxes"] = Json::array();
  for (const auto& b : ann.boxes) j["boxes"].push_back({{"bx", b.bx}, {"by", b.by}, {"w", b.w}, {"h", b.h}});
  j["labels"] = ann.labels;
  return j;
}

synth::Annotations annotations_from_json(const Json& j) {
  if (!j.contains("boxes") || !j.contains("labels")) throw InputError("labels need 'boxes' and 'labels'");
  synth::Annotations ann;
  for (const Json& b : j.at("boxes")) {
    ann.boxes.push_back({number_field(b, "bx"), number_field(b, "by"), number_field(b, "w"), number_field(b, "h")});
  }
  for (const Json& l : j.at("labels")) {
    if (!l.is_number_integer()) throw InputError("labels must be integers");
    ann.labels.push_back(l.get<int>());
  }
  if (ann.labels.size() != ann.boxes.size()) throw InputError("boxes and labels differ in length");
  return ann;
}

void write_ppm(const std::filesystem::path& path, const FeatureMap& rgb) {
  if (rgb.c != 3) throw std::invalid_argument("PPM needs a 3-channel image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P6\n" << rgb.w << ' ' << rgb.h << "\n255\n";
  std::vector<unsigned char> bytes;
  bytes.reserve(rgb.size());
  for (int y = 0; y < rgb.h; ++y) {
    for (int x = 0; x < rgb.w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(rgb.at(c, y, x), 0.0, 1.0);
        bytes.push_back(static_cast<unsigned char>(std::lround(v * 255.0)));
      }
    }
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

FeatureMap read_ppm(const std::filesystem::path& path) {
  const std::string data = read_text(path);
  std::istringstream in(data);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255) {
    throw InputError(path.string() + ": not an 8-bit binary PPM");
  }
  in.get();
  const auto offset = static_cast<std::size_t>(in.tellg());
  if (data.size() < offset + static_cast<std::size_t>(w) * h * 3) {
    throw InputError(path.string() + ": truncated pixel data");
  }
  FeatureMap rgb(3, h, w);
  std::size_t i = offset;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) rgb.at(c, y, x) = static_cast<unsigned char>(data[i++]) / 255.0;
    }
  }
  return rgb;
}

void write_checkpoint(const std::filesystem::path& bin, const std::filesystem::path& manifest,
                      nn::Network& net) {
  std::ofstream out(bin, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + bin.string());
  Json m;
  m["dtype"] = "float64";
  m["byte_order"] = "little";
  m["tensors"] = Json::array();
  std::size_t offset = 0;
  for (const auto& layer : net.layers()) {
    const std::pair<const char*, nn::Tensor*> parts[] = {{"weight", layer.weight}, {"bias", layer.bias}};
    for (const auto& [suffix, t] : parts) {
      m["tensors"].push_back({{"name", layer.name + "." + suffix}, {"shape", t->shape()}, {"offset", offset}});
      for (double v : t->values()) put_u64_le(out, std::bit_cast<std::uint64_t>(v));
      offset += t->size() * sizeof(double);
    }
  }
  m["bytes"] = offset;
  write_text(manifest, m.dump(2) + "\n");
}

void read_checkpoint(const std::filesystem::path& bin, nn::Network& net) {
  const std::string data = read_text(bin);
  std::size_t expected = 0;
  for (nn::Tensor* t : net.parameters()) expected += t->size() * sizeof(double);
  if (data.size() != expected) throw InputError("checkpoint size does not match the network");
  std::size_t pos = 0;
  for (nn::Tensor* t : net.parameters()) {
    for (double& v : t->mutable_values()) {
      std::uint64_t bits = 0;
      for (int i = 0; i < 8; ++i) bits |= std::uint64_t{static_cast<unsigned char>(data[pos + i])} << (8 * i);
      v = std::bit_cast<double>(bits);
      pos += 8;
    }
  }
}

}  // namespace fsa::io
