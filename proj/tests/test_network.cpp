#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "fsa/gradcheck.hpp"
#include "fsa/network.hpp"
#include "test_support.hpp"

using namespace fsa;
using namespace fsa::nn;

namespace {

NetworkSpec spec32() {
  NetworkSpec s;
  s.image_height = 32;
  s.image_width = 32;
  return s;
}

Tensor random_image(std::uint64_t seed, int c, int h, int w) {
  std::mt19937_64 rng(seed);
  return Tensor::constant(test_util::random_map(rng, c, h, w, 0.0, 1.0));
}

}  // namespace

TEST(Network, FeatureShapes) {
  const Network net(spec32(), 1);
  const auto f = net.backbone(random_image(1, 3, 32, 32));
  EXPECT_EQ(f.f1.shape(), (Shape{8, 16, 16}));
  EXPECT_EQ(f.f2.shape(), (Shape{16, 8, 8}));
  EXPECT_EQ(f.f3.shape(), (Shape{32, 4, 4}));
  const auto d = net.encode(random_image(2, 1, 32, 32), true);
  EXPECT_EQ(d.shape(), f.f3.shape());
  EXPECT_EQ(net.reconstruct(d, f.f3).shape(), (Shape{1, 32, 32}));
  EXPECT_EQ(net.local_domain(f.f1).prob.shape(), (Shape{1, 16, 16}));
  EXPECT_EQ(net.mid_domain(f.f2).context.size(), 8u);
  EXPECT_EQ(net.global_domain(f.f3).prob.size(), 1u);
}

TEST(Network, ZeroWeightsGiveZeroFeaturesAndConstantReconstruction) {
  const Network net(spec32(), 0, Network::Init::kZero);
  const auto f = net.backbone(random_image(3, 3, 32, 32));
  for (double v : f.f3.values()) EXPECT_EQ(v, 0.0);
  const auto r = net.reconstruct(net.encode(random_image(4, 1, 32, 32), false), f.f3);
  for (double v : r.values()) EXPECT_EQ(v, 0.0);
  const auto local = net.local_domain(f.f1);
  for (double p : local.prob.values()) EXPECT_EQ(p, 0.5);
}

TEST(Network, RejectsMismatchedInputs) {
  const Network net(spec32(), 1);
  EXPECT_THROW(net.backbone(random_image(1, 3, 16, 32)), std::invalid_argument);
  EXPECT_THROW(net.encode(random_image(1, 3, 32, 32), true), std::invalid_argument);
  EXPECT_THROW(net.reconstruct(Tensor::zeros({32, 4, 4}), Tensor::zeros({32, 2, 2})), std::invalid_argument);
  const std::vector<BoundingBox> none;
  EXPECT_THROW(net.detect(Tensor::zeros({32, 4, 4}), none), std::invalid_argument);
  NetworkSpec bad = spec32();
  bad.image_width = 36;
  EXPECT_THROW(Network(bad, 0), std::invalid_argument);
}

TEST(Network, SeedDeterminesInitialization) {
  Network a(spec32(), 7), b(spec32(), 7), c(spec32(), 8);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_TRUE(std::equal(pa[i]->values().begin(), pa[i]->values().end(), pb[i]->values().begin()));
    differs = differs || !std::equal(pa[i]->values().begin(), pa[i]->values().end(), pc[i]->values().begin());
  }
  EXPECT_TRUE(differs);
}

TEST(Network, LayerNamesAreUniqueAndGrouped) {
  Network net(spec32(), 0);
  std::set<std::string> names;
  int backbone = 0, head = 0;
  for (const auto& l : net.layers()) {
    EXPECT_TRUE(names.insert(l.name).second) << l.name;
    backbone += net.is_backbone(l.name);
    head += net.is_head(l.name);
  }
  EXPECT_EQ(backbone, 3);
  EXPECT_EQ(head, 2);
}

TEST(CropPool, WholeImageEqualsGlobalPool) {
  const auto f3 = random_image(5, 6, 4, 4);
  const auto a = crop_pool(f3, {16, 16, 32, 32});
  const auto b = global_avg_pool(f3);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(a.values()[i], b.values()[i], 1e-15);
}

TEST(CropPool, ConstantMap) {
  const auto f3 = Tensor::constant({2, 4, 4}, std::vector<double>(32, 0.25));
  const auto pooled = crop_pool(f3, {10, 20, 6, 9});
  for (double v : pooled.values()) EXPECT_EQ(v, 0.25);
}

TEST(CropPool, MatchesBruteForceOverCoveredCells) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> pos(-8, 40), size(1, 30);
  const FeatureMap m = test_util::random_map(rng, 3, 4, 4);
  const auto f3 = Tensor::constant(m);
  for (int t = 0; t < 200; ++t) {
    const BoundingBox box{pos(rng), pos(rng), size(rng), size(rng)};
    // Cells whose 8x8 pixel footprint overlaps the box interior.
    std::vector<double> acc(3, 0.0);
    int count = 0;
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 4; ++x) {
        if (8.0 * (y + 1) <= box.y0() || 8.0 * y >= box.y1() || 8.0 * (x + 1) <= box.x0() || 8.0 * x >= box.x1()) continue;
        for (int c = 0; c < 3; ++c) acc[static_cast<std::size_t>(c)] += m.at(c, y, x);
        ++count;
      }
    }
    if (count == 0) {
      EXPECT_THROW(crop_pool(f3, box), std::invalid_argument);
      continue;
    }
    const auto v = crop_pool(f3, box);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(v.values()[c], acc[c] / count, 1e-12);
  }
}

TEST(Network, LearnsToReconstructAConstantImage) {
  // The toy optimizer (momentum SGD, step drop at 70%) on the per-pixel L1
  // reconstruction loss. The residual left after 500 steps is the decoder
  // still cancelling the spatial variation of the 4x4 shared features.
  Network net(spec32(), 0);
  const auto gray = Tensor::constant({1, 32, 32}, std::vector<double>(32 * 32, 0.5));
  const auto rgb = Tensor::constant({3, 32, 32}, std::vector<double>(3 * 32 * 32, 0.5));
  const auto params = net.parameters();
  std::vector<std::vector<double>> velocity;
  for (Tensor* p : params) velocity.emplace_back(p->size(), 0.0);
  double first = 0.0, loss = 0.0;
  for (int step = 0; step < 500; ++step) {
    net.zero_grad();
    const Tensor l = l1_distance(net.reconstruct(net.encode(gray, true), net.backbone(rgb).f3), gray, true);
    loss = l.item();
    if (step == 0) first = loss;
    backward(l);
    const double lr = step < 350 ? 0.02 : 0.002;
    for (std::size_t k = 0; k < params.size(); ++k) {
      if (params[k]->grad().empty()) continue;
      for (std::size_t i = 0; i < params[k]->size(); ++i) {
        velocity[k][i] = 0.9 * velocity[k][i] + params[k]->grad()[i];
        params[k]->mutable_values()[i] -= lr * velocity[k][i];
      }
    }
  }
  EXPECT_GT(first, 0.1);
  EXPECT_LT(loss, 2.5e-3);
}

TEST(Gradcheck, AllBranchesPass) {
  GradcheckConfig cfg;
  cfg.seed = 0;
  const auto r = finite_difference_check(cfg);
  ASSERT_EQ(r.branches.size(), static_cast<std::size_t>(kNumBranches));
  for (const auto& b : r.branches) {
    EXPECT_TRUE(b.passed) << branch_name(b.branch) << " " << b.max_rel_error << " at " << b.worst_layer;
    EXPECT_GT(b.checked, 0);
  }
  EXPECT_TRUE(r.grl_sign_exact);
  EXPECT_TRUE(r.passed);
}

TEST(Gradcheck, WrongSignIsDetected) {
  GradcheckConfig cfg;
  cfg.seed = 0;
  cfg.inject_wrong_sign = true;
  const auto r = finite_difference_check(cfg);
  EXPECT_FALSE(r.passed);
}

TEST(Gradcheck, RelativeErrorUsesTheFloor) {
  EXPECT_EQ(relative_error(1.0, 1.0, 1e-6), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0, 1e-6), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(1e-9, 0.0, 1e-6), 1e-3);
}
