#include "fsa/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace fsa::nn {
namespace {

Tensor scalar_zero() { return Tensor::scalar(0.0); }

Tensor fused_groups(const Network& net, const PreparedImage& img, const Tensor& rows,
                    const Tensor& context, double lambda) {
  Tensor reversed = grad_reverse(rows, lambda);
  std::vector<Tensor> fused;
  fused.reserve(img.groups.size());
  for (const auto& members : img.groups) {
    fused.push_back(concat(context, mean_rows(reversed, members)));
  }
  return net.instance_domain(stack_rows(fused));
}

double fraction_above_half(const Tensor& p, bool want_above) {
  double hits = 0.0;
  for (double v : p.values()) hits += (want_above ? v > 0.5 : v < 0.5) ? 1.0 : 0.0;
  return hits / static_cast<double>(p.size());
}

}  // namespace

void validate(const TrainConfig& cfg) {
  if (!(cfg.lr_initial > 0.0) || !(cfg.lr_after_decay > 0.0)) {
    throw std::invalid_argument("learning rates must be > 0");
  }
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) {
    throw std::invalid_argument("momentum must lie in [0, 1)");
  }
  if (cfg.iterations < 0) throw std::invalid_argument("iterations must be >= 0");
  losses::validate(cfg.weights);
}

DetectorTargets detector_targets(std::span<const BoundingBox> proposals,
                                 const synth::Annotations& ann) {
  DetectorTargets t;
  for (const auto& p : proposals) {
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t g = 0; g < ann.boxes.size(); ++g) {
      const double v = iou(p, ann.boxes[g]);
      if (v >= 0.5 && v > best_iou) {
        best = static_cast<int>(g);
        best_iou = v;
      }
    }
    if (best < 0) {
      t.classes.push_back(0);
      t.positive.push_back(0);
      t.deltas.insert(t.deltas.end(), kBoxDeltas, 0.0);
    } else {
      t.classes.push_back(ann.labels[static_cast<std::size_t>(best)]);
      t.positive.push_back(1);
      const auto d = encode_deltas(p, ann.boxes[static_cast<std::size_t>(best)]);
      t.deltas.insert(t.deltas.end(), d.begin(), d.end());
    }
  }
  return t;
}

DetectorLosses detector_losses(const Tensor& class_logits, const Tensor& box_deltas,
                               const DetectorTargets& gt) {
  if (class_logits.shape().size() != 2 || class_logits.dim(0) == 0) {
    throw std::invalid_argument("detector_losses: no proposals");
  }
  return {softmax_cross_entropy(class_logits, gt.classes),
          smooth_l1(box_deltas, gt.deltas, gt.positive)};
}

PreparedImage prepare_image(const synth::Sample& sample, const grouping::ProposalSet& proposals,
                            const ssf::ScaleSweepConfig& ssf_cfg) {
  PreparedImage img;
  img.domain = sample.domain();
  img.rgb = Tensor::constant(sample.rgb());
  img.gray = Tensor::constant(sample.gray());
  for (const auto& p : proposals.proposals) img.proposals.push_back(p.box);
  const auto grouping = grouping::cluster_proposals_or_single_group(proposals, ssf_cfg);
  for (const auto& g : grouping.groups) img.groups.push_back(g.member_indices);
  if (img.domain == synth::Domain::kSource) {
    auto t = detector_targets(img.proposals, sample.training_annotations());
    img.class_targets = std::move(t.classes);
    img.box_targets = std::move(t.deltas);
    img.positive = std::move(t.positive);
  }
  return img;
}

Objective build_objective(const Network& net, const PreparedImage& source,
                          const PreparedImage& target, const TrainConfig& cfg, TrainMode mode,
                          std::optional<double> grl_lambda) {
  if (source.domain != synth::Domain::kSource || target.domain != synth::Domain::kTarget) {
    throw std::invalid_argument("build_objective needs a (source, target) pair");
  }
  const auto& w = cfg.weights;
  const double lambda = grl_lambda.value_or(w.lambda);
  Objective obj;

  const Features fs = net.backbone(source.rgb);
  const DetectorOutput det = net.detect(fs.f3, source.proposals);
  const auto dl = detector_losses(det.logits, det.deltas,
                                  {source.class_targets, source.box_targets, source.positive});
  obj.l_c = dl.l_c;
  obj.l_r = dl.l_r;

  if (mode == TrainMode::kSourceOnly) {
    obj.l_rec = obj.l_diff = obj.l_adv1 = obj.l_adv2 = obj.l_adv3 = obj.l_ri = scalar_zero();
    const Tensor terms[] = {obj.l_c, obj.l_r};
    const double weights[] = {1.0, 1.0};
    obj.optimized = weighted_sum(terms, weights);
  } else {
    const Features ft = net.backbone(target.rgb);

    // Feature separation: private encoders on gray images, shared decoder
    // on [d, f3].
    const Tensor ds = net.encode(source.gray, true);
    const Tensor dt = net.encode(target.gray, false);
    const Tensor xs = net.reconstruct(ds, fs.f3);
    const Tensor xt = net.reconstruct(dt, ft.f3);
    obj.l_rec = add(l1_distance(source.gray, xs, cfg.normalize_reconstruction),
                    l1_distance(target.gray, xt, cfg.normalize_reconstruction));
    if (cfg.difference_mode == losses::DifferenceMode::kPerSample) {
      obj.l_diff = add(square(dot(global_avg_pool(ds), global_avg_pool(fs.f3))),
                       square(dot(global_avg_pool(dt), global_avg_pool(ft.f3))));
    } else {
      // With one sample per domain ||D^T F||_F^2 = |g(d)|^2 |g(f3)|^2.
      auto outer = [](const Tensor& a, const Tensor& b) {
        return mul(dot(a, a), dot(b, b));
      };
      obj.l_diff = add(outer(global_avg_pool(ds), global_avg_pool(fs.f3)),
                       outer(global_avg_pool(dt), global_avg_pool(ft.f3)));
    }

    // Level-wise domain classifiers behind gradient reversal.
    const DomainOutput l_s = net.local_domain(grad_reverse(fs.f1, lambda));
    const DomainOutput l_t = net.local_domain(grad_reverse(ft.f1, lambda));
    const DomainOutput m_s = net.mid_domain(grad_reverse(fs.f2, lambda));
    const DomainOutput m_t = net.mid_domain(grad_reverse(ft.f2, lambda));
    const DomainOutput g_s = net.global_domain(grad_reverse(fs.f3, lambda));
    const DomainOutput g_t = net.global_domain(grad_reverse(ft.f3, lambda));
    obj.l_adv1 = add(least_squares_mean(l_s.prob, false), least_squares_mean(l_t.prob, true));
    obj.l_adv2 = scale(add(focal_mean(m_s.prob, w.gamma, false), focal_mean(m_t.prob, w.gamma, true)), 0.5);
    obj.l_adv3 = scale(add(focal_mean(g_s.prob, w.gamma, false), focal_mean(g_t.prob, w.gamma, true)), 0.5);

    // Region-instance alignment on pooled, context-fused group features.
    auto context = [](const DomainOutput& a, const DomainOutput& b, const DomainOutput& c) {
      const Tensor parts[] = {a.context, b.context, c.context};
      return concat(parts);
    };
    const DetectorOutput det_t = net.detect(ft.f3, target.proposals);
    const Tensor p_ri_s = fused_groups(net, source, det.rows, context(l_s, m_s, g_s), lambda);
    const Tensor p_ri_t = fused_groups(net, target, det_t.rows, context(l_t, m_t, g_t), lambda);
    obj.l_ri = scale(add(focal_mean(p_ri_s, w.gamma, false), focal_mean(p_ri_t, w.gamma, true)), 0.5);

    obj.domain_accuracy = {
        0.5 * (fraction_above_half(l_s.prob, false) + fraction_above_half(l_t.prob, true)),
        0.5 * (fraction_above_half(m_s.prob, true) + fraction_above_half(m_t.prob, false)),
        0.5 * (fraction_above_half(g_s.prob, true) + fraction_above_half(g_t.prob, false)),
        0.5 * (fraction_above_half(p_ri_s, true) + fraction_above_half(p_ri_t, false))};

    const Tensor terms[] = {obj.l_c, obj.l_r, obj.l_rec, obj.l_diff,
                            obj.l_adv1, obj.l_adv2, obj.l_adv3, obj.l_ri};
    const double weights[] = {1.0, 1.0, w.beta, w.beta, 1.0, 1.0, 1.0, 1.0};
    obj.optimized = weighted_sum(terms, weights);
  }

  obj.terms = {obj.l_c.item(),    obj.l_r.item(),
               obj.l_rec.item(),  obj.l_diff.item(),
               obj.l_adv1.item() + obj.l_adv2.item() + obj.l_adv3.item(),
               obj.l_ri.item()};
  return obj;
}

Trainer::Trainer(Network& net, TrainConfig cfg, TrainMode mode)
    : net_(net), cfg_(std::move(cfg)), mode_(mode), params_(net.parameters()) {
  validate(cfg_);
  for (Tensor* p : params_) velocity_.emplace_back(p->size(), 0.0);
}

double Trainer::learning_rate(int step) const {
  const int decay = cfg_.decay_step.value_or(static_cast<int>(0.7 * cfg_.iterations));
  return step < decay ? cfg_.lr_initial : cfg_.lr_after_decay;
}

StepMetrics Trainer::step(const PreparedImage& source, const PreparedImage& target) {
  net_.zero_grad();
  StepMetrics m;
  m.step = step_;
  Objective obj;
  try {
    obj = build_objective(net_, source, target, cfg_, mode_);
  } catch (const NonFiniteError& e) {
    throw NonFiniteError(std::string("forward pass: ") + e.what());
  }
  m.terms = obj.terms;
  m.total = losses::total_objective(obj.terms, cfg_.weights);
  m.domain_accuracy = obj.domain_accuracy;
  const std::pair<const char*, double> named[] = {
      {"L_c", m.terms.l_c},     {"L_r", m.terms.l_r},   {"L_rec", m.terms.l_rec},
      {"L_diff", m.terms.l_diff}, {"L_lg", m.terms.l_lg}, {"L_ri", m.terms.l_ri}};
  for (const auto& [name, v] : named) {
    if (!std::isfinite(v)) throw NonFiniteError(std::string("loss branch ") + name + " is not finite");
  }
  backward(obj.optimized);

  const double lr = learning_rate(step_);
  const auto layers = net_.layers();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = *params_[i];
    const auto g = p.grad();
    if (g.empty()) continue;
    auto values = p.mutable_values();
    auto& v = velocity_[i];
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (!std::isfinite(g[j])) {
        throw NonFiniteError("gradient of layer " + layers[i / 2].name + " is not finite");
      }
      v[j] = cfg_.momentum * v[j] + g[j];
      values[j] -= lr * v[j];
    }
  }
  ++step_;
  return m;
}

void write_loss_header(std::ostream& os) { os << "step,L_c,L_r,L_rec,L_diff,L_lg,L_ri,total\n"; }

void write_loss_row(std::ostream& os, const StepMetrics& m) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", m.step,
                m.terms.l_c, m.terms.l_r, m.terms.l_rec, m.terms.l_diff, m.terms.l_lg, m.terms.l_ri,
                m.total);
  os << buf;
}

double proposal_match_rate(const Network& net, std::span<const PreparedImage> images,
                           std::span<const synth::Sample> samples) {
  if (images.size() != samples.size()) throw std::invalid_argument("images/samples size mismatch");
  std::size_t correct = 0;
  std::size_t total = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& ann = samples[i].evaluation_annotations();
    const Features f = net.backbone(images[i].rgb);
    const DetectorOutput out = net.detect(f.f3, images[i].proposals);
    const int classes = out.logits.dim(1);
    const auto truth = detector_targets(images[i].proposals, ann);
    for (std::size_t r = 0; r < images[i].proposals.size(); ++r) {
      const auto row = out.logits.values().subspan(r * classes, classes);
      const int pred = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      bool ok;
      if (pred == 0) {
        ok = truth.classes[r] == 0;
      } else {
        std::array<double, 4> d;
        for (int k = 0; k < kBoxDeltas; ++k) d[k] = out.deltas.values()[r * kBoxDeltas + k];
        const BoundingBox refined = apply_deltas(images[i].proposals[r], d);
        ok = false;
        for (std::size_t g = 0; g < ann.boxes.size(); ++g) {
          if (ann.labels[g] == pred && iou(refined, ann.boxes[g]) >= 0.5) ok = true;
        }
      }
      correct += ok ? 1 : 0;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

double probe_domain_accuracy(const Network& net, std::span<const PreparedImage> fit_images,
                             std::span<const PreparedImage> test_images, const ProbeConfig& cfg) {
  auto featurize = [&net](std::span<const PreparedImage> imgs, std::vector<std::vector<double>>& x,
                          std::vector<double>& y) {
    for (const auto& img : imgs) {
      const Tensor pooled = global_avg_pool(net.backbone(img.rgb).f3);
      x.emplace_back(pooled.values().begin(), pooled.values().end());
      y.push_back(img.domain == synth::Domain::kSource ? 1.0 : 0.0);
    }
  };
  std::vector<std::vector<double>> xf, xt;
  std::vector<double> yf, yt;
  featurize(fit_images, xf, yf);
  featurize(test_images, xt, yt);
  if (xf.empty() || xt.empty()) throw std::invalid_argument("probe needs fit and test images");

  const std::size_t d = xf[0].size();
  std::vector<double> mu(d, 0.0), sd(d, 0.0);
  for (const auto& r : xf) {
    for (std::size_t j = 0; j < d; ++j) mu[j] += r[j];
  }
  for (auto& m : mu) m /= static_cast<double>(xf.size());
  for (const auto& r : xf) {
    for (std::size_t j = 0; j < d; ++j) sd[j] += (r[j] - mu[j]) * (r[j] - mu[j]);
  }
  for (auto& s : sd) s = std::max(std::sqrt(s / static_cast<double>(xf.size())), 1e-8);
  auto standardize = [&](std::vector<std::vector<double>>& rows) {
    for (auto& r : rows) {
      for (std::size_t j = 0; j < d; ++j) r[j] = (r[j] - mu[j]) / sd[j];
    }
  };
  standardize(xf);
  standardize(xt);

  std::vector<double> w(d, 0.0);
  double b = 0.0;
  const double n = static_cast<double>(xf.size());
  for (int it = 0; it < cfg.iterations; ++it) {
    std::vector<double> gw(d, 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < xf.size(); ++i) {
      double z = b;
      for (std::size_t j = 0; j < d; ++j) z += w[j] * xf[i][j];
      const double p = 1.0 / (1.0 + std::exp(-z));
      const double e = p - yf[i];
      for (std::size_t j = 0; j < d; ++j) gw[j] += e * xf[i][j];
      gb += e;
    }
    for (std::size_t j = 0; j < d; ++j) w[j] -= cfg.learning_rate * (gw[j] / n + cfg.l2 * w[j]);
    b -= cfg.learning_rate * gb / n;
  }
  double correct = 0.0;
  for (std::size_t i = 0; i < xt.size(); ++i) {
    double z = b;
    for (std::size_t j = 0; j < d; ++j) z += w[j] * xt[i][j];
    correct += ((z > 0.0) == (yt[i] > 0.5)) ? 1.0 : 0.0;
  }
  return correct / static_cast<double>(xt.size());
}

}  // namespace fsa::nn
