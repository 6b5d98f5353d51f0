#include "fsa/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fsa::losses {
namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double domain_difference(std::span<const FeatureMap> d, std::span<const FeatureMap> f3,
                         DifferenceMode mode) {
  if (d.size() != f3.size()) {
    throw std::invalid_argument("difference_loss: private/shared lists differ in length");
  }
  if (d.empty()) return 0.0;
  std::vector<std::vector<double>> gd;
  std::vector<std::vector<double>> gf;
  for (std::size_t i = 0; i < d.size(); ++i) {
    gd.push_back(global_pool(d[i]));
    gf.push_back(global_pool(f3[i]));
    if (gd.back().size() != gf.back().size()) {
      throw std::invalid_argument("difference_loss: channel count mismatch");
    }
  }
  const double n = static_cast<double>(d.size());
  double total = 0.0;
  if (mode == DifferenceMode::kPerSample) {
    for (std::size_t i = 0; i < gd.size(); ++i) {
      const double ip = dot(gd[i], gf[i]);
      total += ip * ip;
    }
    return total / n;
  }
  // (D^T F)_{ab} = sum_i gd[i][a] gf[i][b]
  const std::size_t c = gd.front().size();
  for (std::size_t a = 0; a < c; ++a) {
    for (std::size_t b = 0; b < c; ++b) {
      double m = 0.0;
      for (std::size_t i = 0; i < gd.size(); ++i) m += gd[i][a] * gf[i][b];
      total += m * m;
    }
  }
  return total / n;
}

double domain_reconstruction(std::span<const FeatureMap> x, std::span<const FeatureMap> xhat,
                             bool normalize) {
  if (x.size() != xhat.size()) {
    throw std::invalid_argument("reconstruction_loss: lists differ in length");
  }
  if (x.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!x[i].same_shape(xhat[i])) throw std::invalid_argument("reconstruction_loss: shape mismatch");
    double s = 0.0;
    for (std::size_t j = 0; j < x[i].size(); ++j) s += std::abs(x[i].data[j] - xhat[i].data[j]);
    if (normalize) s /= static_cast<double>(x[i].size());
    total += s;
  }
  return total / static_cast<double>(x.size());
}

double mean_map(const FeatureMap& m, bool target) {
  if (m.c != 1) throw std::invalid_argument("local_adv_loss: maps must have one channel");
  double s = 0.0;
  for (double p : m.data) {
    const double e = target ? 1.0 - p : p;
    s += e * e;
  }
  return s / static_cast<double>(m.size());
}

}  // namespace

void validate(const ObjectiveWeights& w) {
  for (double v : {w.beta, w.lambda, w.gamma}) {
    if (!std::isfinite(v) || v < 0.0) {
      throw std::invalid_argument("objective weights must be finite and non-negative");
    }
  }
}

double clamp_probability(double p) { return std::clamp(p, kProbFloor, kProbCeil); }

std::vector<double> global_pool(const FeatureMap& f) {
  std::vector<double> out(static_cast<std::size_t>(f.c), 0.0);
  const std::size_t plane = f.plane();
  for (int ch = 0; ch < f.c; ++ch) {
    const double* p = f.data.data() + static_cast<std::size_t>(ch) * plane;
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += p[i];
    out[static_cast<std::size_t>(ch)] = s / static_cast<double>(plane);
  }
  return out;
}

double difference_loss(std::span<const FeatureMap> d_source,
                       std::span<const FeatureMap> f3_source,
                       std::span<const FeatureMap> d_target,
                       std::span<const FeatureMap> f3_target, DifferenceMode mode) {
  if (d_source.empty() && d_target.empty()) {
    throw std::invalid_argument("difference_loss: both domains are empty");
  }
  return domain_difference(d_source, f3_source, mode) +
         domain_difference(d_target, f3_target, mode);
}

double reconstruction_loss(std::span<const FeatureMap> gray_source,
                           std::span<const FeatureMap> recon_source,
                           std::span<const FeatureMap> gray_target,
                           std::span<const FeatureMap> recon_target,
                           bool normalize_by_pixels) {
  return domain_reconstruction(gray_source, recon_source, normalize_by_pixels) +
         domain_reconstruction(gray_target, recon_target, normalize_by_pixels);
}

double focal_source_term(double p, double gamma) {
  p = clamp_probability(p);
  return -std::pow(1.0 - p, gamma) * std::log(p);
}

double focal_target_term(double p, double gamma) {
  p = clamp_probability(p);
  return -std::pow(p, gamma) * std::log(1.0 - p);
}

double region_instance_loss(std::span<const std::vector<double>> source_probs,
                            std::span<const std::vector<double>> target_probs,
                            double gamma) {
  if (source_probs.empty() || target_probs.empty()) {
    throw std::invalid_argument("region_instance_loss: each domain needs an image");
  }
  auto domain = [gamma](std::span<const std::vector<double>> images, bool source) {
    double total = 0.0;
    for (const auto& groups : images) {
      if (groups.empty()) throw std::invalid_argument("region_instance_loss: image without groups");
      double s = 0.0;
      for (double p : groups) s += source ? focal_source_term(p, gamma) : focal_target_term(p, gamma);
      total += s / static_cast<double>(groups.size());
    }
    return total / static_cast<double>(images.size());
  };
  return 0.5 * (domain(source_probs, true) + domain(target_probs, false));
}

double local_adv_loss(std::span<const FeatureMap> source_maps,
                      std::span<const FeatureMap> target_maps) {
  auto domain = [](std::span<const FeatureMap> maps, bool target) {
    if (maps.empty()) return 0.0;
    double total = 0.0;
    for (const auto& m : maps) total += mean_map(m, target);
    return total / static_cast<double>(maps.size());
  };
  return domain(source_maps, false) + domain(target_maps, true);
}

double global_adv_loss(std::span<const double> source_probs,
                       std::span<const double> target_probs, double gamma) {
  std::vector<std::vector<double>> s;
  std::vector<std::vector<double>> t;
  for (double p : source_probs) s.push_back({p});
  for (double p : target_probs) t.push_back({p});
  return region_instance_loss(s, t, gamma);
}

double total_objective(double l_c, double l_r, double l_rec, double l_diff,
                       double l_lg, double l_ri, const ObjectiveWeights& w) {
  return l_c + l_r + w.beta * (l_rec + l_diff) - w.lambda * (l_lg + l_ri);
}

double total_objective(const LossTerms& t, const ObjectiveWeights& w) {
  return total_objective(t.l_c, t.l_r, t.l_rec, t.l_diff, t.l_lg, t.l_ri, w);
}

FeatureMap rgb_to_grayscale(const FeatureMap& rgb) {
  if (rgb.c != 3) throw std::invalid_argument("rgb_to_grayscale expects 3 channels");
  FeatureMap gray(1, rgb.h, rgb.w);
  const std::size_t plane = rgb.plane();
  for (std::size_t i = 0; i < plane; ++i) {
    gray.data[i] = kLumaR * rgb.data[i] + kLumaG * rgb.data[plane + i] +
                   kLumaB * rgb.data[2 * plane + i];
  }
  return gray;
}

}  // namespace fsa::losses
