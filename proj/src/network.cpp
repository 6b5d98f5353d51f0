#include "fsa/network.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace fsa::nn {
namespace {

class Initializer {
 public:
  Initializer(std::uint64_t seed, Network::Init mode) : rng_(seed), mode_(mode) {}

  Tensor weights(Shape shape, int fan_in) {
    std::vector<double> v(numel(shape), 0.0);
    if (mode_ == Network::Init::kRandom) {
      std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
      for (auto& x : v) x = dist(rng_);
    }
    return Tensor::parameter(std::move(shape), std::move(v));
  }

  ConvLayer conv(int in, int out, int k, int stride, int pad) {
    return {weights({out, in, k, k}, in * k * k), Tensor::parameter({out}, std::vector<double>(out, 0.0)),
            stride, pad};
  }

  AffineLayer affine(int in, int out) {
    return {weights({out, in}, in), Tensor::parameter({out}, std::vector<double>(out, 0.0))};
  }

 private:
  std::mt19937_64 rng_;
  Network::Init mode_;
};

}  // namespace

void validate(const NetworkSpec& spec) {
  if (spec.image_height % kTotalStride != 0 || spec.image_width % kTotalStride != 0) {
    throw std::invalid_argument("image size must be divisible by the total stride 8");
  }
  if (spec.image_height < kTotalStride || spec.image_width < kTotalStride) {
    throw std::invalid_argument("image is smaller than the total stride");
  }
  for (int c : spec.channels) {
    if (c < 1) throw std::invalid_argument("channel counts must be positive");
  }
  if (spec.domain_hidden < 1 || spec.instance_hidden < 1 || spec.head_hidden < 1) {
    throw std::invalid_argument("hidden widths must be positive");
  }
  if (spec.num_classes < 2) throw std::invalid_argument("need background plus one class");
}

Tensor grl_apply(const Tensor& x, const GrlParam& p) { return grad_reverse(x, p.lambda); }

CellWindow box_cells(const BoundingBox& box, int map_h, int map_w, int stride) {
  const double s = static_cast<double>(stride);
  CellWindow w{static_cast<int>(std::floor(box.y0() / s)), static_cast<int>(std::ceil(box.y1() / s)),
               static_cast<int>(std::floor(box.x0() / s)), static_cast<int>(std::ceil(box.x1() / s))};
  w.y0 = std::max(w.y0, 0);
  w.x0 = std::max(w.x0, 0);
  w.y1 = std::min(w.y1, map_h);
  w.x1 = std::min(w.x1, map_w);
  return w;
}

Tensor crop_pool(const Tensor& f3, const BoundingBox& box, int stride) {
  if (!is_valid(box)) throw std::invalid_argument("crop_pool: invalid box");
  if (f3.shape().size() != 3) throw std::invalid_argument("crop_pool: map must be (C, H, W)");
  const CellWindow w = box_cells(box, f3.dim(1), f3.dim(2), stride);
  if (w.y0 >= w.y1 || w.x0 >= w.x1) {
    throw std::invalid_argument("crop_pool: box does not intersect the feature map");
  }
  return crop_mean(f3, w.y0, w.y1, w.x0, w.x1);
}

Network::Network(const NetworkSpec& spec, std::uint64_t seed, Init init) : spec_(spec) {
  validate(spec_);
  Initializer ini(seed, init);
  const auto [c1, c2, c3] = spec_.channels;
  const int h = spec_.domain_hidden;
  // Backbone and head first so their initial values do not depend on the
  // adaptation branches.
  extractor_ = {ini.conv(3, c1, 3, 2, 1), ini.conv(c1, c2, 3, 2, 1), ini.conv(c2, c3, 3, 2, 1)};
  head_hidden_ = ini.affine(c3, spec_.head_hidden);
  head_out_ = ini.affine(spec_.head_hidden, spec_.num_classes + kBoxDeltas);
  enc_source_ = {ini.conv(1, c1, 3, 2, 1), ini.conv(c1, c2, 3, 2, 1), ini.conv(c2, c3, 3, 2, 1)};
  enc_target_ = {ini.conv(1, c1, 3, 2, 1), ini.conv(c1, c2, 3, 2, 1), ini.conv(c2, c3, 3, 2, 1)};
  decoder_ = {ini.conv(2 * c3, c2, 3, 1, 1), ini.conv(c2, c1, 3, 1, 1), ini.conv(c1, 1, 3, 1, 1)};
  d1_hidden_ = ini.conv(c1, h, 3, 1, 1);
  d1_out_ = ini.conv(h, 1, 1, 1, 0);
  d2_hidden_ = ini.affine(c2, h);
  d2_out_ = ini.affine(h, 1);
  d3_hidden_ = ini.affine(c3, h);
  d3_out_ = ini.affine(h, 1);
  ri_hidden_ = ini.affine(3 * h + c3, spec_.instance_hidden);
  ri_out_ = ini.affine(spec_.instance_hidden, 1);
}

Features Network::backbone(const Tensor& rgb) const {
  if (rgb.shape() != Shape{3, spec_.image_height, spec_.image_width}) {
    throw std::invalid_argument("backbone: expected input (3, " + std::to_string(spec_.image_height) +
                                ", " + std::to_string(spec_.image_width) + "), got " +
                                to_string(rgb.shape()));
  }
  Features f;
  f.f1 = tanh(extractor_[0](rgb));
  f.f2 = tanh(extractor_[1](f.f1));
  f.f3 = tanh(extractor_[2](f.f2));
  return f;
}

Tensor Network::encode(const Tensor& gray, bool source) const {
  if (gray.shape() != Shape{1, spec_.image_height, spec_.image_width}) {
    throw std::invalid_argument("encode: expected a (1, H, W) gray image, got " + to_string(gray.shape()));
  }
  const auto& enc = source ? enc_source_ : enc_target_;
  Tensor x = gray;
  for (const auto& layer : enc) x = tanh(layer(x));
  return x;
}

Tensor Network::reconstruct(const Tensor& d, const Tensor& f3) const {
  if (d.shape().size() != 3 || f3.shape().size() != 3 || d.dim(1) != f3.dim(1) ||
      d.dim(2) != f3.dim(2)) {
    throw std::invalid_argument("reconstruct: private and shared maps are not spatially aligned");
  }
  Tensor x = concat(d, f3);
  x = tanh(decoder_[0](upsample2x(x)));
  x = tanh(decoder_[1](upsample2x(x)));
  return decoder_[2](upsample2x(x));
}

DomainOutput Network::local_domain(const Tensor& f1) const {
  Tensor hidden = tanh(d1_hidden_(f1));
  return {sigmoid(d1_out_(hidden)), global_avg_pool(hidden)};
}

DomainOutput Network::mid_domain(const Tensor& f2) const {
  Tensor hidden = tanh(d2_hidden_(global_avg_pool(f2)));
  return {sigmoid(d2_out_(hidden)), hidden};
}

DomainOutput Network::global_domain(const Tensor& f3) const {
  Tensor hidden = tanh(d3_hidden_(global_avg_pool(f3)));
  return {sigmoid(d3_out_(hidden)), hidden};
}

Tensor Network::instance_domain(const Tensor& fused) const {
  return sigmoid(ri_out_(tanh(ri_hidden_(fused))));
}

DetectorOutput Network::detect(const Tensor& f3, std::span<const BoundingBox> boxes) const {
  if (boxes.empty()) throw std::invalid_argument("detect: no proposals");
  std::vector<Tensor> rows;
  rows.reserve(boxes.size());
  for (const auto& b : boxes) rows.push_back(crop_pool(f3, b));
  DetectorOutput out;
  out.rows = stack_rows(rows);
  Tensor raw = head_out_(tanh(head_hidden_(out.rows)));
  out.logits = slice_cols(raw, 0, spec_.num_classes);
  out.deltas = slice_cols(raw, spec_.num_classes, kBoxDeltas);
  return out;
}

std::vector<Network::NamedLayer> Network::layers() {
  std::vector<NamedLayer> out;
  auto conv = [&out](const std::string& name, ConvLayer& l) { out.push_back({name, &l.weight, &l.bias}); };
  auto aff = [&out](const std::string& name, AffineLayer& l) { out.push_back({name, &l.weight, &l.bias}); };
  for (int i = 0; i < 3; ++i) conv("F" + std::to_string(i + 1), extractor_[i]);
  aff("head_hidden", head_hidden_);
  aff("head_out", head_out_);
  for (int i = 0; i < 3; ++i) conv("E_s" + std::to_string(i + 1), enc_source_[i]);
  for (int i = 0; i < 3; ++i) conv("E_t" + std::to_string(i + 1), enc_target_[i]);
  for (int i = 0; i < 3; ++i) conv("S_D" + std::to_string(i + 1), decoder_[i]);
  conv("D1_hidden", d1_hidden_);
  conv("D1_out", d1_out_);
  aff("D2_hidden", d2_hidden_);
  aff("D2_out", d2_out_);
  aff("D3_hidden", d3_hidden_);
  aff("D3_out", d3_out_);
  aff("D_ri_hidden", ri_hidden_);
  aff("D_ri_out", ri_out_);
  return out;
}

std::vector<Tensor*> Network::parameters() {
  std::vector<Tensor*> out;
  for (auto& l : layers()) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

void Network::zero_grad() {
  for (Tensor* p : parameters()) p->zero_grad();
}

}  // namespace fsa::nn
