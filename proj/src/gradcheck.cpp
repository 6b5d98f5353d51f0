#include "fsa/gradcheck.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>

namespace fsa::nn {
namespace {

using BranchValues = std::array<double, kNumBranches>;

const Tensor& select(const Objective& obj, Branch b) {
  switch (b) {
    case Branch::kLc: return obj.l_c;
    case Branch::kLr: return obj.l_r;
    case Branch::kLrec: return obj.l_rec;
    case Branch::kLdiff: return obj.l_diff;
    case Branch::kLadv1: return obj.l_adv1;
    case Branch::kLadv2: return obj.l_adv2;
    case Branch::kLadv3: return obj.l_adv3;
    case Branch::kLri: return obj.l_ri;
    case Branch::kComposite: return obj.optimized;
  }
  return obj.optimized;
}

BranchValues evaluate(const Network& net, const PreparedImage& s, const PreparedImage& t,
                      const TrainConfig& cfg) {
  const Objective obj = build_objective(net, s, t, cfg, TrainMode::kAdapted, -1.0);
  BranchValues v{};
  for (int b = 0; b < kNumBranches; ++b) v[b] = select(obj, static_cast<Branch>(b)).item();
  return v;
}

// Flattened analytic gradient of every parameter tensor, in parameters() order.
std::vector<std::vector<double>> analytic(Network& net, const PreparedImage& s,
                                          const PreparedImage& t, const TrainConfig& cfg,
                                          Branch b, double lambda) {
  net.zero_grad();
  const Objective obj = build_objective(net, s, t, cfg, TrainMode::kAdapted, lambda);
  backward(select(obj, b));
  std::vector<std::vector<double>> out;
  for (Tensor* p : net.parameters()) {
    const auto g = p->grad();
    out.emplace_back(g.begin(), g.end());
    out.back().resize(p->size(), 0.0);
  }
  return out;
}

std::vector<std::vector<double>> adversarial_grads(Network& net, const PreparedImage& s,
                                                   const PreparedImage& t, const TrainConfig& cfg,
                                                   double lambda) {
  net.zero_grad();
  const Objective obj = build_objective(net, s, t, cfg, TrainMode::kAdapted, lambda);
  const Tensor terms[] = {obj.l_adv1, obj.l_adv2, obj.l_adv3, obj.l_ri};
  const double ones[] = {1.0, 1.0, 1.0, 1.0};
  backward(weighted_sum(terms, ones));
  std::vector<std::vector<double>> out;
  for (Tensor* p : net.parameters()) {
    const auto g = p->grad();
    out.emplace_back(g.begin(), g.end());
    out.back().resize(p->size(), 0.0);
  }
  return out;
}

bool grl_sign_exact(Network& net, const PreparedImage& s, const PreparedImage& t,
                    const TrainConfig& cfg) {
  const auto plus = adversarial_grads(net, s, t, cfg, 1.0);
  const auto minus = adversarial_grads(net, s, t, cfg, -1.0);
  const auto layers = net.layers();
  for (std::size_t i = 0; i < plus.size(); ++i) {
    const std::string& name = layers[i / 2].name;
    const bool upstream = net.is_backbone(name);
    const bool classifier = name.rfind("D", 0) == 0;
    if (!upstream && !classifier) continue;
    for (std::size_t j = 0; j < plus[i].size(); ++j) {
      const double expected = upstream ? -minus[i][j] : minus[i][j];
      if (plus[i][j] != expected) return false;
    }
  }
  return true;
}

}  // namespace

std::string branch_name(Branch b) {
  switch (b) {
    case Branch::kLc: return "L_c";
    case Branch::kLr: return "L_r";
    case Branch::kLrec: return "L_rec";
    case Branch::kLdiff: return "L_diff";
    case Branch::kLadv1: return "L_adv1";
    case Branch::kLadv2: return "L_adv2";
    case Branch::kLadv3: return "L_adv3";
    case Branch::kLri: return "L_ri";
    case Branch::kComposite: return "composite";
  }
  return "?";
}

NetworkSpec small_network_spec() {
  NetworkSpec s;
  s.image_height = 32;
  s.image_width = 32;
  s.channels = {4, 6, 8};
  s.domain_hidden = 4;
  s.instance_hidden = 6;
  s.head_hidden = 8;
  return s;
}

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

GradcheckReport finite_difference_check(const GradcheckConfig& cfg) {
  synth::SceneSpec scene;
  scene.height = cfg.network.image_height;
  scene.width = cfg.network.image_width;
  scene.min_objects = 1;
  scene.max_objects = 2;
  scene.min_size = 8.0;
  scene.max_size = 12.0;
  synth::ProposalNoiseSpec noise;
  noise.redundancy = 3;
  noise.background_count = 1;
  noise.background_margin = 8.0;

  std::seed_seq seq{cfg.seed, std::uint64_t{0x9e3779b9}};
  std::array<std::uint64_t, 5> seeds{};
  seq.generate(seeds.begin(), seeds.end());
  const synth::Sample src = synth::generate_scene(scene, seeds[0]);
  const synth::Sample tgt =
      synth::apply_domain_shift(synth::generate_scene(scene, seeds[1]), synth::default_shift(), seeds[2]);
  const PreparedImage ps = prepare_image(src, synth::generate_proposals(src, noise, seeds[3]));
  const PreparedImage pt = prepare_image(tgt, synth::generate_proposals(tgt, noise, seeds[3] + 1));
  Network net(cfg.network, seeds[4]);
  return finite_difference_check(net, ps, pt, cfg);
}

GradcheckReport finite_difference_check(Network& net, const PreparedImage& source,
                                        const PreparedImage& target, const GradcheckConfig& cfg) {
  const TrainConfig& tc = cfg.train;
  std::vector<std::vector<std::vector<double>>> grads;
  for (int b = 0; b < kNumBranches; ++b) {
    grads.push_back(analytic(net, source, target, tc, static_cast<Branch>(b), -1.0));
  }
  if (cfg.inject_wrong_sign) {
    for (auto& per_branch : grads) {
      for (double& g : per_branch[0]) g = -g;
      for (double& g : per_branch[1]) g = -g;
    }
  }

  const BranchValues f0 = evaluate(net, source, target, tc);
  GradcheckReport report;
  for (int b = 0; b < kNumBranches; ++b) {
    BranchReport r;
    r.branch = static_cast<Branch>(b);
    report.branches.push_back(r);
  }

  std::mt19937_64 rng(cfg.seed ^ 0x5bd1e995ULL);
  const auto layers = net.layers();
  const auto params = net.parameters();
  for (std::size_t li = 0; li < layers.size(); ++li) {
    Tensor* w = params[2 * li];
    Tensor* bias = params[2 * li + 1];
    const std::size_t total = w->size() + bias->size();
    std::vector<std::size_t> coords(total);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (total > static_cast<std::size_t>(cfg.coords_per_layer)) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(cfg.coords_per_layer));
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t flat : coords) {
      const bool is_bias = flat >= w->size();
      const std::size_t pi = 2 * li + (is_bias ? 1 : 0);
      const std::size_t j = is_bias ? flat - w->size() : flat;
      double& x = params[pi]->mutable_values()[j];
      const double saved = x;
      x = saved + cfg.step;
      const BranchValues fp = evaluate(net, source, target, tc);
      x = saved - cfg.step;
      const BranchValues fm = evaluate(net, source, target, tc);
      x = saved;

      for (int b = 0; b < kNumBranches; ++b) {
        BranchReport& r = report.branches[static_cast<std::size_t>(b)];
        const double a = grads[static_cast<std::size_t>(b)][pi][j];
        const double n = (fp[b] - fm[b]) / (2.0 * cfg.step);
        const double floor = 1e-6 * std::max(1.0, std::abs(f0[b]));
        const double err = relative_error(a, n, floor);
        if (err >= cfg.tolerance) {
          // At a kink the one-sided slopes differ by at least the error of
          // their average against either one-sided derivative.
          const double d_plus = (fp[b] - f0[b]) / cfg.step;
          const double d_minus = (f0[b] - fm[b]) / cfg.step;
          if (std::abs(d_plus - d_minus) >= std::abs(a - n)) {
            ++r.skipped_nonsmooth;
            continue;
          }
        }
        ++r.checked;
        if (err > r.max_rel_error) {
          r.max_rel_error = err;
          r.worst_layer = layers[li].name;
        }
      }
    }
  }

  report.passed = true;
  for (auto& r : report.branches) {
    r.passed = r.max_rel_error < cfg.tolerance && r.checked > 0;
    report.passed = report.passed && r.passed;
  }
  report.grl_sign_exact = grl_sign_exact(net, source, target, tc);
  report.passed = report.passed && report.grl_sign_exact;
  net.zero_grad();
  return report;
}

}  // namespace fsa::nn
