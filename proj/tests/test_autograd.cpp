#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "fsa/autograd.hpp"
#include "fsa/losses.hpp"
#include "test_support.hpp"

using namespace fsa;
using namespace fsa::nn;

namespace {

Tensor random_param(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor::parameter(std::move(shape), std::move(v));
}

// Worst relative error between backprop and central differences over every
// coordinate of every parameter.
double check_gradients(const std::vector<Tensor*>& params, const std::function<Tensor()>& f,
                       double h = 1e-6) {
  for (Tensor* p : params) p->zero_grad();
  backward(f());
  double worst = 0.0;
  for (Tensor* p : params) {
    const std::vector<double> analytic(p->grad().begin(), p->grad().end());
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double keep = p->values()[i];
      p->mutable_values()[i] = keep + h;
      const double up = f().item();
      p->mutable_values()[i] = keep - h;
      const double down = f().item();
      p->mutable_values()[i] = keep;
      const double numeric = (up - down) / (2 * h);
      const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-6});
      worst = std::max(worst, std::fabs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace

TEST(GradReverse, ForwardIsBitExactIdentity) {
  std::mt19937_64 rng(1);
  auto x = random_param(rng, {3, 4, 5}, -1e6, 1e6);
  for (double lambda : {0.0, 0.1, 1.0, 7.5}) {
    const auto y = grad_reverse(x, lambda);
    ASSERT_EQ(y.shape(), x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y.values()[i], x.values()[i]);
  }
}

TEST(GradReverse, BackwardScalesUpstreamByMinusLambda) {
  std::mt19937_64 rng(2);
  auto x = random_param(rng, {6});
  const auto w = Tensor::constant({6}, {1.0, -2.0, 3.0, 0.5, 0.0, -4.0});
  for (double lambda : {1.0, 0.0, 0.1}) {
    x.zero_grad();
    backward(dot(grad_reverse(x, lambda), w));
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(x.grad()[i], -lambda * w.values()[i]);
  }
}

TEST(GradReverse, NegativeLambdaIsIdentityInBothDirections) {
  std::mt19937_64 rng(3);
  auto a = random_param(rng, {5});
  auto b = Tensor::parameter({5}, std::vector<double>(a.values().begin(), a.values().end()));
  backward(sum(square(grad_reverse(a, -1.0))));
  backward(sum(square(b)));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(a.grad()[i], b.grad()[i]);
}

TEST(Detach, BlocksGradient) {
  std::mt19937_64 rng(4);
  auto x = random_param(rng, {4});
  backward(add(sum(x), sum(square(detach(x)))));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Ops, LinearWithSquaredNormMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  auto x = random_param(rng, {7});
  auto w = random_param(rng, {3, 7});
  auto b = random_param(rng, {3});
  EXPECT_LT(check_gradients({&x, &w, &b}, [&] { return sum(square(linear(x, w, b))); }), 1e-8);
}

TEST(Ops, ConvTanhPoolMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  auto x = random_param(rng, {2, 6, 5});
  auto w = random_param(rng, {3, 2, 3, 3}, -0.5, 0.5);
  auto b = random_param(rng, {3});
  auto v = Tensor::constant({3}, {0.3, -1.2, 0.8});
  for (int stride : {1, 2}) {
    const auto f = [&] { return dot(global_avg_pool(tanh(conv2d(x, w, b, stride, 1))), v); };
    EXPECT_LT(check_gradients({&x, &w, &b}, f), 1e-6) << "stride " << stride;
  }
}

TEST(Ops, StructuralOpsMatchFiniteDifferences) {
  std::mt19937_64 rng(7);
  auto m = random_param(rng, {4, 3});
  auto u = random_param(rng, {2, 3, 3});
  auto c = random_param(rng, {2});
  const std::vector<std::size_t> rows{0, 2, 3};
  const auto f = [&] {
    const Tensor pooled = mean_rows(m, rows);
    const Tensor cat = concat(pooled, c);
    const Tensor up = crop_mean(upsample2x(u), 1, 5, 0, 4);
    const Tensor stacked = stack_rows(std::vector<Tensor>{up, scale(up, -2.0)});
    return add(add(sum(mul(cat, sigmoid(cat))), mean(square(stacked))), sum(tanh(slice_cols(m, 1, 2))));
  };
  EXPECT_LT(check_gradients({&m, &u, &c}, f), 1e-6);
}

TEST(Ops, LossKernelsMatchFiniteDifferences) {
  std::mt19937_64 rng(8);
  auto p = random_param(rng, {2, 3}, 0.05, 0.95);
  auto a = random_param(rng, {10});
  auto bb = random_param(rng, {10});
  auto logits = random_param(rng, {3, 4});
  auto deltas = random_param(rng, {3, 4}, -3, 3);
  const std::vector<int> labels{2, 0, 3};
  const std::vector<double> targets{0.1, 0.2, 0.3, 0.4, 0, 0, 0, 0, -0.5, 1.5, 0.0, 2.0};
  const std::vector<int> mask{1, 0, 1};
  const auto f = [&] {
    const std::vector<Tensor> terms{focal_mean(p, 5.0, false), focal_mean(p, 2.0, true),
                                    least_squares_mean(p, true),
                                    softmax_cross_entropy(logits, labels),
                                    smooth_l1(deltas, targets, mask), l1_distance(a, bb, true)};
    const std::vector<double> w{1, 1, 1, 1, 1, 1};
    return weighted_sum(terms, w);
  };
  EXPECT_LT(check_gradients({&p, &logits, &deltas, &a, &bb}, f), 1e-6);
}

TEST(Ops, GlobalPoolEqualsWholeMapCrop) {
  std::mt19937_64 rng(9);
  const auto x = random_param(rng, {3, 5, 6});
  const auto g = global_avg_pool(x);
  const auto c = crop_mean(x, 0, 5, 0, 6);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(g.values()[i], c.values()[i], 1e-15);
}

TEST(Ops, LossKernelsAgreeWithScalarLosses) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 20; ++t) {
    const FeatureMap ps = test_util::random_map(rng, 1, 3, 3, 0.0, 1.0);
    const FeatureMap pt = test_util::random_map(rng, 1, 3, 3, 0.0, 1.0);
    const double gamma = 5.0 * u(rng);
    const std::vector<FeatureMap> s{ps}, tg{pt};
    const double ls = least_squares_mean(Tensor::constant(ps), false).item() +
                      least_squares_mean(Tensor::constant(pt), true).item();
    EXPECT_NEAR(ls, losses::local_adv_loss(s, tg), 1e-14);
    const std::vector<std::vector<double>> gs{ps.data}, gt{pt.data};
    const double focal = 0.5 * (focal_mean(Tensor::constant(ps), gamma, false).item() +
                                focal_mean(Tensor::constant(pt), gamma, true).item());
    EXPECT_NEAR(focal, losses::region_instance_loss(gs, gt, gamma), 1e-14);
    const std::vector<FeatureMap> xs{ps}, rs{pt}, none;
    EXPECT_NEAR(l1_distance(Tensor::constant(ps), Tensor::constant(pt)).item(),
                losses::reconstruction_loss(xs, rs, none, none), 1e-14);
  }
}

TEST(Ops, FocalGradientIsZeroWhereClamped) {
  auto p = Tensor::parameter({2}, {0.0, 1.0});
  backward(add(focal_mean(p, 5.0, false), focal_mean(p, 5.0, true)));
  EXPECT_EQ(p.grad()[0], 0.0);
  EXPECT_EQ(p.grad()[1], 0.0);
}

TEST(Ops, NonFiniteValuesAreReported) {
  const auto big = Tensor::constant({1}, {1e200});
  EXPECT_THROW(square(square(big)), NonFiniteError);
  EXPECT_THROW(Tensor::constant({1}, {NAN}).item(), NonFiniteError);
}

TEST(Ops, ShapeErrors) {
  EXPECT_THROW(add(Tensor::zeros({2}), Tensor::zeros({3})), std::invalid_argument);
  EXPECT_THROW(linear(Tensor::zeros({3}), Tensor::zeros({2, 4}), Tensor::zeros({2})), std::invalid_argument);
  EXPECT_THROW(backward(Tensor::zeros({2})), std::invalid_argument);
}
