#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fsa/autograd.hpp"
#include "fsa/geometry.hpp"

namespace fsa::nn {

struct NetworkSpec {
  int image_height = 64;
  int image_width = 64;
  /// Output channels of the extractor stages F1, F2, F3 (strides 2, 4, 8).
  /// The private encoders use the same plan.
  std::array<int, 3> channels{8, 16, 32};
  /// Hidden width of the three level-wise domain classifiers; their hidden
  /// activations double as the context vectors f_l, f_m, f_g.
  int domain_hidden = 8;
  int instance_hidden = 16;
  int head_hidden = 32;
  /// Including background (class 0).
  int num_classes = 4;
};

inline constexpr int kTotalStride = 8;
inline constexpr int kBoxDeltas = 4;

void validate(const NetworkSpec& spec);

struct GrlParam {
  double lambda = 1.0;
};

/// Gradient reversal layer.
Tensor grl_apply(const Tensor& x, const GrlParam& p);

struct ConvLayer {
  Tensor weight;
  Tensor bias;
  int stride = 1;
  int pad = 1;

  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, pad); }
};

struct AffineLayer {
  Tensor weight;
  Tensor bias;

  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
};

struct Features {
  Tensor f1;
  Tensor f2;
  Tensor f3;
};

/// Output of a level-wise domain classifier.
struct DomainOutput {
  /// Probability of "source": (1, h, w) for the local classifier, (1) for
  /// the pooled ones.
  Tensor prob;
  /// Pooled hidden activation, used as a context vector.
  Tensor context;
};

struct DetectorOutput {
  Tensor rows;    // (m, C3) crop-pooled f3 per proposal
  Tensor logits;  // (m, num_classes)
  Tensor deltas;  // (m, 4)
};

/// Half-open f3 cell window covered by a pixel-space box, clipped to the map.
struct CellWindow {
  int y0, y1, x0, x1;
};
CellWindow box_cells(const BoundingBox& box, int map_h, int map_w, int stride);

/// Mean of f3 over the cells covered by `box` (pixel coordinates). Throws
/// std::invalid_argument when the clipped box covers no cell.
Tensor crop_pool(const Tensor& f3, const BoundingBox& box, int stride = kTotalStride);

class Network {
 public:
  enum class Init { kRandom, kZero };

  Network(const NetworkSpec& spec, std::uint64_t seed, Init init = Init::kRandom);

  const NetworkSpec& spec() const { return spec_; }

  Features backbone(const Tensor& rgb) const;
  /// Private encoder E_s (source = true) or E_t on a (1, H, W) gray image.
  Tensor encode(const Tensor& gray, bool source) const;
  /// Shared decoder on the channel concatenation [d, f3].
  Tensor reconstruct(const Tensor& d, const Tensor& f3) const;

  DomainOutput local_domain(const Tensor& f1) const;
  DomainOutput mid_domain(const Tensor& f2) const;
  DomainOutput global_domain(const Tensor& f3) const;
  /// (k, n) fused group features -> (k, 1) source probabilities.
  Tensor instance_domain(const Tensor& fused) const;

  DetectorOutput detect(const Tensor& f3, std::span<const BoundingBox> boxes) const;

  struct NamedLayer {
    std::string name;
    Tensor* weight;
    Tensor* bias;
  };
  /// Every trainable layer in a fixed order.
  std::vector<NamedLayer> layers();
  std::vector<Tensor*> parameters();
  void zero_grad();

  /// Layer groups, for selecting which parameters an update touches.
  bool is_backbone(const std::string& layer) const { return layer.rfind("F", 0) == 0; }
  bool is_head(const std::string& layer) const { return layer.rfind("head", 0) == 0; }

 private:
  NetworkSpec spec_;
  std::array<ConvLayer, 3> extractor_;
  std::array<ConvLayer, 3> enc_source_;
  std::array<ConvLayer, 3> enc_target_;
  std::array<ConvLayer, 3> decoder_;
  ConvLayer d1_hidden_;
  ConvLayer d1_out_;
  AffineLayer d2_hidden_;
  AffineLayer d2_out_;
  AffineLayer d3_hidden_;
  AffineLayer d3_out_;
  AffineLayer ri_hidden_;
  AffineLayer ri_out_;
  AffineLayer head_hidden_;
  AffineLayer head_out_;
};

}  // namespace fsa::nn
