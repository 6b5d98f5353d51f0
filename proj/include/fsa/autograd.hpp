#pragma once

// Minimal reverse-mode differentiation over a fixed set of operations.
//
// A Tensor is a handle to a graph node. Operations allocate a new node that
// records its inputs and a backward closure; `backward(root)` walks the graph
// in reverse topological order and accumulates gradients into every node
// that requires them. Parameters are persistent leaf nodes whose gradient
// buffers survive across graphs until `zero_grad` is called.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsa/feature_map.hpp"

namespace fsa::nn {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Raised when an operation produces NaN or infinity.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::string op;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor constant(const FeatureMap& map);
  static Tensor scalar(double v) { return constant({}, {v}); }
  static Tensor zeros(Shape shape) { return constant(shape, std::vector<double>(numel(shape), 0.0)); }
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }
  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  /// Empty until a backward pass has reached this node.
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  bool requires_grad() const { return node_->requires_grad; }
  double item() const;
  FeatureMap to_feature_map() const;

  void zero_grad();

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Seeds d(root)/d(root) = 1 and propagates. `root` must hold one value.
void backward(const Tensor& root);

// --- structural and arithmetic ops -----------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor square(const Tensor& a);
/// sum_i w_i * t_i over scalar tensors.
Tensor weighted_sum(std::span<const Tensor> terms, std::span<const double> weights);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);

Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);

/// Forward identity; backward multiplies the upstream gradient by -lambda.
Tensor grad_reverse(const Tensor& a, double lambda);
/// Forward identity with no gradient flow.
Tensor detach(const Tensor& a);

/// Concatenation along the leading dimension.
Tensor concat(std::span<const Tensor> parts);
Tensor concat(const Tensor& a, const Tensor& b);
/// Stacks equal-length vectors into a (rows, n) matrix.
Tensor stack_rows(std::span<const Tensor> rows);
/// Columns [start, start + count) of a (rows, n) matrix.
Tensor slice_cols(const Tensor& m, int start, int count);
/// Mean of the selected rows of a (rows, n) matrix, as a vector.
Tensor mean_rows(const Tensor& m, std::span<const std::size_t> rows);

// --- layers ----------------------------------------------------------------

/// x: (C, H, W), w: (O, C, K, K), b: (O). Zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
/// x: (n) or (rows, n), w: (o, n), b: (o).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
/// Nearest-neighbour 2x upsampling of a (C, H, W) map.
Tensor upsample2x(const Tensor& x);
/// (C, H, W) -> (C): mean over spatial positions.
Tensor global_avg_pool(const Tensor& x);
/// Mean of x[:, y0:y1, x0:x1] per channel (half-open, already clipped).
Tensor crop_mean(const Tensor& x, int y0, int y1, int x0, int x1);

// --- loss kernels (forward values match fsa::losses) ------------------------

/// Sum of |a - b|, optionally divided by the element count.
Tensor l1_distance(const Tensor& a, const Tensor& b, bool normalize = false);
/// Mean over entries of focal_source_term(p) (target = false) or
/// focal_target_term(p) (target = true). Gradient is zero where p is clamped.
Tensor focal_mean(const Tensor& p, double gamma, bool target);
/// Mean of p^2 (target = false) or (1 - p)^2 (target = true).
Tensor least_squares_mean(const Tensor& p, bool target);
/// Mean softmax cross-entropy of (rows, classes) logits against labels.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);
/// Mean over rows with mask[i] != 0 of sum_j smoothL1(pred[i][j] - target[i][j]);
/// zero when no row is selected.
Tensor smooth_l1(const Tensor& pred, std::span<const double> targets,
                 std::span<const int> mask);

}  // namespace fsa::nn
