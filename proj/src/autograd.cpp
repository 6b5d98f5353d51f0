#include "fsa/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "fsa/losses.hpp"

namespace fsa::nn {
namespace {

using NodePtr = std::shared_ptr<Node>;

Tensor make(std::string op, Shape shape, std::vector<double> value,
            std::vector<NodePtr> inputs, std::function<void(Node&)> bw) {
  for (double v : value) {
    if (!std::isfinite(v)) throw NonFiniteError("non-finite value produced by " + op);
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = std::move(op);
  n->requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                 [](const NodePtr& p) { return p->requires_grad; });
  if (n->requires_grad) {
    n->inputs = std::move(inputs);
    n->backward = std::move(bw);
  }
  return Tensor(std::move(n));
}

// Gradient buffer of input i, or nullptr when that input needs none.
double* grad_of(Node& self, std::size_t i) {
  Node& in = *self.inputs[i];
  if (!in.requires_grad) return nullptr;
  in.ensure_grad();
  return in.grad.data();
}

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                      to_string(a.shape()) + " vs " + to_string(b.shape()));
}

// Output positions o with 0 <= o * stride + offset < extent.
std::pair<int, int> valid_range(int out_extent, int in_extent, int stride, int offset) {
  int lo = 0;
  if (offset < 0) lo = (-offset + stride - 1) / stride;
  int hi = out_extent;
  const int last = in_extent - 1 - offset;
  if (last < 0) return {0, 0};
  hi = std::min(hi, last / stride + 1);
  return {lo, std::max(lo, hi)};
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  require(numel(shape) == values.size(), "constant: value count does not match shape");
  return make("constant", std::move(shape), std::move(values), {}, nullptr);
}

Tensor Tensor::constant(const FeatureMap& map) {
  return constant({map.c, map.h, map.w}, map.data);
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  t.node_->op = "parameter";
  return t;
}

double Tensor::item() const {
  require(size() == 1, "item() on a tensor with " + std::to_string(size()) + " values");
  return node_->value[0];
}

FeatureMap Tensor::to_feature_map() const {
  require(shape().size() == 3, "to_feature_map needs a (C, H, W) tensor");
  FeatureMap m(dim(0), dim(1), dim(2));
  m.data = node_->value;
  return m;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void backward(const Tensor& root) {
  require(root.size() == 1, "backward: root must be a scalar");
  if (!root.requires_grad()) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  Node* r = root.node();
  r->ensure_grad();
  r->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

// --- arithmetic ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] + b.values()[i];
  return make("add", a.shape(), std::move(v), {a.node_ptr(), b.node_ptr()}, [](Node& s) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (double* g = grad_of(s, k)) {
        for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] - b.values()[i];
  return make("sub", a.shape(), std::move(v), {a.node_ptr(), b.node_ptr()}, [](Node& s) {
    if (double* g = grad_of(s, 0)) {
      for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i];
    }
    if (double* g = grad_of(s, 1)) {
      for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] -= s.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * b.values()[i];
  return make("mul", a.shape(), std::move(v), {a.node_ptr(), b.node_ptr()}, [](Node& s) {
    const auto& av = s.inputs[0]->value;
    const auto& bv = s.inputs[1]->value;
    if (double* g = grad_of(s, 0)) {
      for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i] * bv[i];
    }
    if (double* g = grad_of(s, 1)) {
      for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, double k) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = k * a.values()[i];
  return make("scale", a.shape(), std::move(v), {a.node_ptr()}, [k](Node& s) {
    if (double* g = grad_of(s, 0)) {
      for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += k * s.grad[i];
    }
  });
}

Tensor square(const Tensor& a) { return mul(a, a); }

Tensor weighted_sum(std::span<const Tensor> terms, std::span<const double> weights) {
  require(terms.size() == weights.size() && !terms.empty(), "weighted_sum: bad arguments");
  double total = 0.0;
  std::vector<NodePtr> inputs;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    total += weights[i] * terms[i].item();
    inputs.push_back(terms[i].node_ptr());
  }
  std::vector<double> w(weights.begin(), weights.end());
  return make("weighted_sum", {}, {total}, std::move(inputs), [w](Node& s) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (double* g = grad_of(s, i)) g[0] += w[i] * s.grad[0];
    }
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  return make("sum", {}, {total}, {a.node_ptr()}, [](Node& s) {
    if (double* g = grad_of(s, 0)) {
      const std::size_t n = s.inputs[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += s.grad[0];
    }
  });
}

Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.size());
  double total = 0.0;
  for (double v : a.values()) total += v;
  return make("mean", {}, {total / n}, {a.node_ptr()}, [n](Node& s) {
    if (double* g = grad_of(s, 0)) {
      const double d = s.grad[0] / n;
      for (std::size_t i = 0; i < s.inputs[0]->value.size(); ++i) g[i] += d;
    }
  });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  require(a.size() == b.size(), "dot: length mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += a.values()[i] * b.values()[i];
  return make("dot", {}, {total}, {a.node_ptr(), b.node_ptr()}, [](Node& s) {
    const auto& av = s.inputs[0]->value;
    const auto& bv = s.inputs[1]->value;
    if (double* g = grad_of(s, 0)) {
      for (std::size_t i = 0; i < av.size(); ++i) g[i] += s.grad[0] * bv[i];
    }
    if (double* g = grad_of(s, 1)) {
      for (std::size_t i = 0; i < av.size(); ++i) g[i] += s.grad[0] * av[i];
    }
  });
}

Tensor tanh(const Tensor& a) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(a.values()[i]);
  return make("tanh", a.shape(), std::move(v), {a.node_ptr()}, [](Node& s) {
    if (double* g = grad_of(s, 0)) {
      for (std::size_t i = 0; i < s.grad.size(); ++i) {
        g[i] += s.grad[i] * (1.0 - s.value[i] * s.value[i]);
      }
    }
  });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = a.values()[i];
    v[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  return make("sigmoid", a.shape(), std::move(v), {a.node_ptr()}, [](Node& s) {
    if (double* g = grad_of(s, 0)) {
      for (std::size_t i = 0; i < s.grad.size(); ++i) {
        g[i] += s.grad[i] * s.value[i] * (1.0 - s.value[i]);
      }
    }
  });
}

Tensor grad_reverse(const Tensor& a, double lambda) {
  require(std::isfinite(lambda), "grad_reverse: lambda must be finite");
  std::vector<double> v(a.values().begin(), a.values().end());
  const double factor = -lambda;
  return make("grad_reverse", a.shape(), std::move(v), {a.node_ptr()}, [factor](Node& s) {
    if (double* g = grad_of(s, 0)) {
      for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += factor * s.grad[i];
    }
  });
}

Tensor detach(const Tensor& a) {
  return Tensor::constant(a.shape(), std::vector<double>(a.values().begin(), a.values().end()));
}

// --- structure ---------------------------------------------------------------

Tensor concat(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat: nothing to concatenate");
  Shape tail(parts[0].shape().begin() + (parts[0].shape().empty() ? 0 : 1), parts[0].shape().end());
  int lead = 0;
  std::vector<double> v;
  std::vector<NodePtr> inputs;
  for (const auto& p : parts) {
    require(!p.shape().empty(), "concat: scalars cannot be concatenated");
    require(Shape(p.shape().begin() + 1, p.shape().end()) == tail,
            "concat: trailing dimensions differ");
    lead += p.dim(0);
    v.insert(v.end(), p.values().begin(), p.values().end());
    inputs.push_back(p.node_ptr());
  }
  Shape shape{lead};
  shape.insert(shape.end(), tail.begin(), tail.end());
  return make("concat", std::move(shape), std::move(v), std::move(inputs), [](Node& s) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < s.inputs.size(); ++k) {
      const std::size_t n = s.inputs[k]->value.size();
      if (double* g = grad_of(s, k)) {
        for (std::size_t i = 0; i < n; ++i) g[i] += s.grad[offset + i];
      }
      offset += n;
    }
  });
}

Tensor concat(const Tensor& a, const Tensor& b) {
  const Tensor parts[] = {a, b};
  return concat(parts);
}

Tensor stack_rows(std::span<const Tensor> rows) {
  require(!rows.empty(), "stack_rows: no rows");
  const std::size_t n = rows[0].size();
  std::vector<double> v;
  std::vector<NodePtr> inputs;
  for (const auto& r : rows) {
    require(r.shape().size() == 1 && r.size() == n, "stack_rows: rows must be equal-length vectors");
    v.insert(v.end(), r.values().begin(), r.values().end());
    inputs.push_back(r.node_ptr());
  }
  return make("stack_rows", {static_cast<int>(rows.size()), static_cast<int>(n)}, std::move(v),
              std::move(inputs), [n](Node& s) {
                for (std::size_t k = 0; k < s.inputs.size(); ++k) {
                  if (double* g = grad_of(s, k)) {
                    for (std::size_t i = 0; i < n; ++i) g[i] += s.grad[k * n + i];
                  }
                }
              });
}

Tensor slice_cols(const Tensor& m, int start, int count) {
  require(m.shape().size() == 2, "slice_cols: expected a matrix");
  const int rows = m.dim(0);
  const int cols = m.dim(1);
  require(start >= 0 && count >= 0 && start + count <= cols, "slice_cols: out of range");
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(rows) * count);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < count; ++c) v.push_back(m.values()[static_cast<std::size_t>(r) * cols + start + c]);
  }
  return make("slice_cols", {rows, count}, std::move(v), {m.node_ptr()},
              [rows, cols, start, count](Node& s) {
                if (double* g = grad_of(s, 0)) {
                  for (int r = 0; r < rows; ++r) {
                    for (int c = 0; c < count; ++c) {
                      g[static_cast<std::size_t>(r) * cols + start + c] +=
                          s.grad[static_cast<std::size_t>(r) * count + c];
                    }
                  }
                }
              });
}

Tensor mean_rows(const Tensor& m, std::span<const std::size_t> rows) {
  require(m.shape().size() == 2, "mean_rows: expected a matrix");
  require(!rows.empty(), "mean_rows: no rows selected");
  const std::size_t cols = static_cast<std::size_t>(m.dim(1));
  std::vector<double> v(cols, 0.0);
  for (std::size_t r : rows) {
    require(r < static_cast<std::size_t>(m.dim(0)), "mean_rows: row index out of range");
    for (std::size_t c = 0; c < cols; ++c) v[c] += m.values()[r * cols + c];
  }
  const double n = static_cast<double>(rows.size());
  for (auto& x : v) x /= n;
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make("mean_rows", {static_cast<int>(cols)}, std::move(v), {m.node_ptr()},
              [idx, cols, n](Node& s) {
                if (double* g = grad_of(s, 0)) {
                  for (std::size_t r : idx) {
                    for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += s.grad[c] / n;
                  }
                }
              });
}

// --- layers ----------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  require(x.shape().size() == 3, "conv2d: input must be (C, H, W), got " + to_string(x.shape()));
  require(w.shape().size() == 4 && w.dim(2) == w.dim(3), "conv2d: weight must be (O, C, K, K)");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int O = w.dim(0), K = w.dim(2);
  require(w.dim(1) == C, "conv2d: channel mismatch " + to_string(x.shape()) + " vs " + to_string(w.shape()));
  require(b.shape() == Shape{O}, "conv2d: bias must be (O)");
  require(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  const int Ho = (H + 2 * pad - K) / stride + 1;
  const int Wo = (W + 2 * pad - K) / stride + 1;
  require(Ho >= 1 && Wo >= 1, "conv2d: output would be empty");

  const double* xv = x.values().data();
  const double* wv = w.values().data();
  std::vector<double> out(static_cast<std::size_t>(O) * Ho * Wo);
  for (int o = 0; o < O; ++o) {
    double* op = out.data() + static_cast<std::size_t>(o) * Ho * Wo;
    std::fill(op, op + static_cast<std::size_t>(Ho) * Wo, b.values()[o]);
    for (int c = 0; c < C; ++c) {
      const double* ip = xv + static_cast<std::size_t>(c) * H * W;
      for (int ky = 0; ky < K; ++ky) {
        const auto [oy0, oy1] = valid_range(Ho, H, stride, ky - pad);
        for (int kx = 0; kx < K; ++kx) {
          const double wk = wv[((static_cast<std::size_t>(o) * C + c) * K + ky) * K + kx];
          const auto [ox0, ox1] = valid_range(Wo, W, stride, kx - pad);
          for (int oy = oy0; oy < oy1; ++oy) {
            const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(oy * stride + ky - pad) * W + (kx - pad);
            double* orow = op + static_cast<std::size_t>(oy) * Wo;
            for (int ox = ox0; ox < ox1; ++ox) orow[ox] += wk * ip[base + ox * stride];
          }
        }
      }
    }
  }
  return make("conv2d", {O, Ho, Wo}, std::move(out), {x.node_ptr(), w.node_ptr(), b.node_ptr()},
              [=](Node& s) {
                const double* xv = s.inputs[0]->value.data();
                const double* wv = s.inputs[1]->value.data();
                double* gx = grad_of(s, 0);
                double* gw = grad_of(s, 1);
                double* gb = grad_of(s, 2);
                for (int o = 0; o < O; ++o) {
                  const double* go = s.grad.data() + static_cast<std::size_t>(o) * Ho * Wo;
                  if (gb) {
                    double acc = 0.0;
                    for (int i = 0; i < Ho * Wo; ++i) acc += go[i];
                    gb[o] += acc;
                  }
                  if (!gx && !gw) continue;
                  for (int c = 0; c < C; ++c) {
                    const std::size_t in_off = static_cast<std::size_t>(c) * H * W;
                    for (int ky = 0; ky < K; ++ky) {
                      const auto [oy0, oy1] = valid_range(Ho, H, stride, ky - pad);
                      for (int kx = 0; kx < K; ++kx) {
                        const std::size_t widx = ((static_cast<std::size_t>(o) * C + c) * K + ky) * K + kx;
                        const double wk = wv[widx];
                        const auto [ox0, ox1] = valid_range(Wo, W, stride, kx - pad);
                        double acc = 0.0;
                        for (int oy = oy0; oy < oy1; ++oy) {
                          const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(in_off) +
                                                      static_cast<std::ptrdiff_t>(oy * stride + ky - pad) * W + (kx - pad);
                          const double* grow = go + static_cast<std::size_t>(oy) * Wo;
                          if (gw) {
                            for (int ox = ox0; ox < ox1; ++ox) acc += grow[ox] * xv[base + ox * stride];
                          }
                          if (gx) {
                            for (int ox = ox0; ox < ox1; ++ox) gx[base + ox * stride] += wk * grow[ox];
                          }
                        }
                        if (gw) gw[widx] += acc;
                      }
                    }
                  }
                }
              });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(w.shape().size() == 2, "linear: weight must be (out, in)");
  const int out_dim = w.dim(0), in_dim = w.dim(1);
  require(b.shape() == Shape{out_dim}, "linear: bias must be (out)");
  const bool vector_in = x.shape().size() == 1;
  require(vector_in || x.shape().size() == 2, "linear: input must be a vector or matrix");
  const int rows = vector_in ? 1 : x.dim(0);
  const int cols = vector_in ? x.dim(0) : x.dim(1);
  require(cols == in_dim, "linear: input width " + std::to_string(cols) + " != " + std::to_string(in_dim));
  const double* xv = x.values().data();
  const double* wv = w.values().data();
  std::vector<double> out(static_cast<std::size_t>(rows) * out_dim);
  for (int r = 0; r < rows; ++r) {
    for (int o = 0; o < out_dim; ++o) {
      double acc = b.values()[o];
      const double* wr = wv + static_cast<std::size_t>(o) * in_dim;
      const double* xr = xv + static_cast<std::size_t>(r) * in_dim;
      for (int i = 0; i < in_dim; ++i) acc += wr[i] * xr[i];
      out[static_cast<std::size_t>(r) * out_dim + o] = acc;
    }
  }
  Shape shape = vector_in ? Shape{out_dim} : Shape{rows, out_dim};
  return make("linear", std::move(shape), std::move(out), {x.node_ptr(), w.node_ptr(), b.node_ptr()},
              [rows, in_dim, out_dim](Node& s) {
                const double* xv = s.inputs[0]->value.data();
                const double* wv = s.inputs[1]->value.data();
                double* gx = grad_of(s, 0);
                double* gw = grad_of(s, 1);
                double* gb = grad_of(s, 2);
                for (int r = 0; r < rows; ++r) {
                  for (int o = 0; o < out_dim; ++o) {
                    const double go = s.grad[static_cast<std::size_t>(r) * out_dim + o];
                    if (gb) gb[o] += go;
                    const std::size_t wo = static_cast<std::size_t>(o) * in_dim;
                    const std::size_t xo = static_cast<std::size_t>(r) * in_dim;
                    if (gw) {
                      for (int i = 0; i < in_dim; ++i) gw[wo + i] += go * xv[xo + i];
                    }
                    if (gx) {
                      for (int i = 0; i < in_dim; ++i) gx[xo + i] += go * wv[wo + i];
                    }
                  }
                }
              });
}

Tensor upsample2x(const Tensor& x) {
  require(x.shape().size() == 3, "upsample2x: input must be (C, H, W)");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int H2 = 2 * H, W2 = 2 * W;
  std::vector<double> out(static_cast<std::size_t>(C) * H2 * W2);
  for (int c = 0; c < C; ++c) {
    for (int y = 0; y < H2; ++y) {
      for (int xx = 0; xx < W2; ++xx) {
        out[(static_cast<std::size_t>(c) * H2 + y) * W2 + xx] =
            x.values()[(static_cast<std::size_t>(c) * H + y / 2) * W + xx / 2];
      }
    }
  }
  return make("upsample2x", {C, H2, W2}, std::move(out), {x.node_ptr()}, [C, H, W](Node& s) {
    if (double* g = grad_of(s, 0)) {
      const int H2 = 2 * H, W2 = 2 * W;
      for (int c = 0; c < C; ++c) {
        for (int y = 0; y < H2; ++y) {
          for (int xx = 0; xx < W2; ++xx) {
            g[(static_cast<std::size_t>(c) * H + y / 2) * W + xx / 2] +=
                s.grad[(static_cast<std::size_t>(c) * H2 + y) * W2 + xx];
          }
        }
      }
    }
  });
}

Tensor global_avg_pool(const Tensor& x) {
  require(x.shape().size() == 3, "global_avg_pool: input must be (C, H, W)");
  return crop_mean(x, 0, x.dim(1), 0, x.dim(2));
}

Tensor crop_mean(const Tensor& x, int y0, int y1, int x0, int x1) {
  require(x.shape().size() == 3, "crop_mean: input must be (C, H, W)");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  require(0 <= y0 && y0 < y1 && y1 <= H && 0 <= x0 && x0 < x1 && x1 <= W,
          "crop_mean: empty or out-of-bounds window");
  const double n = static_cast<double>((y1 - y0) * (x1 - x0));
  std::vector<double> out(static_cast<std::size_t>(C), 0.0);
  for (int c = 0; c < C; ++c) {
    double acc = 0.0;
    for (int y = y0; y < y1; ++y) {
      const double* row = x.values().data() + (static_cast<std::size_t>(c) * H + y) * W;
      for (int xx = x0; xx < x1; ++xx) acc += row[xx];
    }
    out[static_cast<std::size_t>(c)] = acc / n;
  }
  return make("crop_mean", {C}, std::move(out), {x.node_ptr()}, [=](Node& s) {
    if (double* g = grad_of(s, 0)) {
      for (int c = 0; c < C; ++c) {
        const double d = s.grad[static_cast<std::size_t>(c)] / n;
        for (int y = y0; y < y1; ++y) {
          double* row = g + (static_cast<std::size_t>(c) * H + y) * W;
          for (int xx = x0; xx < x1; ++xx) row[xx] += d;
        }
      }
    }
  });
}

// --- losses ------------------------------------------------------------------

Tensor l1_distance(const Tensor& a, const Tensor& b, bool normalize) {
  require_same_shape(a, b, "l1_distance");
  const double scale_by = normalize ? 1.0 / static_cast<double>(a.size()) : 1.0;
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += std::abs(a.values()[i] - b.values()[i]);
  return make("l1_distance", {}, {total * scale_by}, {a.node_ptr(), b.node_ptr()},
              [scale_by](Node& s) {
                const auto& av = s.inputs[0]->value;
                const auto& bv = s.inputs[1]->value;
                double* ga = grad_of(s, 0);
                double* gb = grad_of(s, 1);
                const double d = s.grad[0] * scale_by;
                for (std::size_t i = 0; i < av.size(); ++i) {
                  const double diff = av[i] - bv[i];
                  const double sg = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
                  if (ga) ga[i] += d * sg;
                  if (gb) gb[i] -= d * sg;
                }
              });
}

Tensor focal_mean(const Tensor& p, double gamma, bool target) {
  require(p.size() > 0, "focal_mean: no probabilities");
  const double n = static_cast<double>(p.size());
  double total = 0.0;
  for (double v : p.values()) {
    total += target ? losses::focal_target_term(v, gamma) : losses::focal_source_term(v, gamma);
  }
  return make(target ? "focal_target" : "focal_source", {}, {total / n}, {p.node_ptr()},
              [gamma, target, n](Node& s) {
                double* g = grad_of(s, 0);
                if (!g) return;
                const auto& pv = s.inputs[0]->value;
                for (std::size_t i = 0; i < pv.size(); ++i) {
                  const double q = pv[i];
                  if (q < losses::kProbFloor || q > losses::kProbCeil) continue;
                  double d;
                  if (!target) {
                    // d/dp [-(1-p)^g log p]
                    const double a = std::pow(1.0 - q, gamma);
                    const double da = gamma == 0.0 ? 0.0 : -gamma * std::pow(1.0 - q, gamma - 1.0);
                    d = -(da * std::log(q) + a / q);
                  } else {
                    // d/dp [-p^g log(1-p)]
                    const double a = std::pow(q, gamma);
                    const double da = gamma == 0.0 ? 0.0 : gamma * std::pow(q, gamma - 1.0);
                    d = -(da * std::log(1.0 - q) - a / (1.0 - q));
                  }
                  g[i] += s.grad[0] * d / n;
                }
              });
}

Tensor least_squares_mean(const Tensor& p, bool target) {
  require(p.size() > 0, "least_squares_mean: empty input");
  const double n = static_cast<double>(p.size());
  double total = 0.0;
  for (double v : p.values()) {
    const double e = target ? 1.0 - v : v;
    total += e * e;
  }
  return make("least_squares", {}, {total / n}, {p.node_ptr()}, [target, n](Node& s) {
    if (double* g = grad_of(s, 0)) {
      const auto& pv = s.inputs[0]->value;
      for (std::size_t i = 0; i < pv.size(); ++i) {
        const double d = target ? -2.0 * (1.0 - pv[i]) : 2.0 * pv[i];
        g[i] += s.grad[0] * d / n;
      }
    }
  });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require(logits.shape().size() == 2, "softmax_cross_entropy: logits must be (rows, classes)");
  const int rows = logits.dim(0), classes = logits.dim(1);
  require(rows >= 1, "softmax_cross_entropy: no rows");
  require(labels.size() == static_cast<std::size_t>(rows), "softmax_cross_entropy: label count mismatch");
  std::vector<double> probs(static_cast<std::size_t>(rows) * classes);
  double total = 0.0;
  for (int r = 0; r < rows; ++r) {
    require(labels[r] >= 0 && labels[r] < classes, "softmax_cross_entropy: label out of range");
    const double* l = logits.values().data() + static_cast<std::size_t>(r) * classes;
    const double m = *std::max_element(l, l + classes);
    double z = 0.0;
    for (int c = 0; c < classes; ++c) z += std::exp(l[c] - m);
    const double lse = m + std::log(z);
    for (int c = 0; c < classes; ++c) probs[static_cast<std::size_t>(r) * classes + c] = std::exp(l[c] - lse);
    total += lse - l[labels[r]];
  }
  std::vector<int> lab(labels.begin(), labels.end());
  return make("softmax_cross_entropy", {}, {total / rows}, {logits.node_ptr()},
              [probs = std::move(probs), lab = std::move(lab), rows, classes](Node& s) {
                if (double* g = grad_of(s, 0)) {
                  const double d = s.grad[0] / rows;
                  for (int r = 0; r < rows; ++r) {
                    for (int c = 0; c < classes; ++c) {
                      const std::size_t i = static_cast<std::size_t>(r) * classes + c;
                      g[i] += d * (probs[i] - (c == lab[r] ? 1.0 : 0.0));
                    }
                  }
                }
              });
}

Tensor smooth_l1(const Tensor& pred, std::span<const double> targets, std::span<const int> mask) {
  require(pred.shape().size() == 2, "smooth_l1: prediction must be (rows, n)");
  const int rows = pred.dim(0), cols = pred.dim(1);
  require(targets.size() == pred.size() && mask.size() == static_cast<std::size_t>(rows),
          "smooth_l1: target/mask size mismatch");
  int selected = 0;
  double total = 0.0;
  for (int r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    ++selected;
    for (int c = 0; c < cols; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * cols + c;
      const double x = pred.values()[i] - targets[i];
      total += std::abs(x) < 1.0 ? 0.5 * x * x : std::abs(x) - 0.5;
    }
  }
  const double n = selected > 0 ? static_cast<double>(selected) : 1.0;
  std::vector<double> t(targets.begin(), targets.end());
  std::vector<int> m(mask.begin(), mask.end());
  return make("smooth_l1", {}, {total / n}, {pred.node_ptr()},
              [t = std::move(t), m = std::move(m), rows, cols, n](Node& s) {
                if (double* g = grad_of(s, 0)) {
                  const auto& pv = s.inputs[0]->value;
                  for (int r = 0; r < rows; ++r) {
                    if (!m[r]) continue;
                    for (int c = 0; c < cols; ++c) {
                      const std::size_t i = static_cast<std::size_t>(r) * cols + c;
                      const double x = pv[i] - t[i];
                      const double d = std::abs(x) < 1.0 ? x : (x > 0.0 ? 1.0 : -1.0);
                      g[i] += s.grad[0] * d / n;
                    }
                  }
                }
              });
}

}  // namespace fsa::nn
