#include <gtest/gtest.h>

#include <cmath>

#include "fsa/losses.hpp"
#include "fsa/synth.hpp"

using namespace fsa;
using namespace fsa::synth;

TEST(Scene, SameSeedSameSample) {
  const SceneSpec spec;
  EXPECT_EQ(generate_scene(spec, 42), generate_scene(spec, 42));
  EXPECT_FALSE(generate_scene(spec, 42) == generate_scene(spec, 43));
}

TEST(Scene, ObjectCountRange) {
  SceneSpec spec;
  spec.min_objects = spec.max_objects = 1;
  for (std::uint64_t s = 0; s < 50; ++s) EXPECT_EQ(generate_scene(spec, s).object_count(), 1u);
  spec.min_objects = 1;
  spec.max_objects = 3;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto n = generate_scene(spec, s).object_count();
    EXPECT_GE(n, 1u);
    EXPECT_LE(n, 3u);
  }
}

TEST(Scene, ClassFrequenciesAreUniform) {
  SceneSpec spec;
  spec.min_objects = spec.max_objects = 1;
  int counts[kNumShapeKinds] = {};
  for (std::uint64_t s = 0; s < 1000; ++s) ++counts[generate_scene(spec, s).evaluation_annotations().labels[0] - 1];
  for (int c : counts) EXPECT_NEAR(c / 1000.0, 1.0 / 3.0, 0.05);
}

TEST(Scene, BoxesBoundObjectPixelsAndDoNotOverlap) {
  const SceneSpec spec;
  for (std::uint64_t s = 0; s < 30; ++s) {
    const auto sample = generate_scene(spec, s);
    const auto& ann = sample.evaluation_annotations();
    ASSERT_EQ(ann.boxes.size(), ann.labels.size());
    for (std::size_t i = 0; i < ann.boxes.size(); ++i) {
      const auto& b = ann.boxes[i];
      EXPECT_GE(b.x0(), 0.0);
      EXPECT_GE(b.y0(), 0.0);
      EXPECT_LE(b.x1(), spec.width);
      EXPECT_LE(b.y1(), spec.height);
      for (std::size_t j = i + 1; j < ann.boxes.size(); ++j) EXPECT_EQ(iou(b, ann.boxes[j]), 0.0);
    }
  }
}

TEST(Scene, InvalidSpec) {
  SceneSpec spec;
  spec.min_objects = 0;
  EXPECT_THROW(generate_scene(spec, 0), std::invalid_argument);
  spec = SceneSpec{};
  spec.height = 16;
  EXPECT_THROW(generate_scene(spec, 0), std::invalid_argument);
  spec = SceneSpec{};
  spec.max_objects = 40;
  spec.min_objects = 40;
  spec.max_retries = 5;
  EXPECT_THROW(generate_scene(spec, 0), GenerationError);
}

TEST(Shift, IdentityShiftKeepsPixels) {
  const auto s = generate_scene(SceneSpec{}, 3);
  const auto t = apply_domain_shift(s, DomainShiftSpec{}, 0);
  EXPECT_EQ(t.rgb(), s.rgb());
  EXPECT_EQ(t.domain(), Domain::kTarget);
  EXPECT_EQ(t.evaluation_annotations().boxes, s.evaluation_annotations().boxes);
}

TEST(Shift, FogBlendsTowardsWhite) {
  const auto s = generate_scene(SceneSpec{}, 4);
  DomainShiftSpec full;
  full.fog_alpha = 1.0;
  const auto white = apply_domain_shift(s, full, 0);
  for (double v : white.rgb().data) EXPECT_EQ(v, 1.0);
  DomainShiftSpec half;
  half.fog_alpha = 0.5;
  const auto t = apply_domain_shift(s, half, 0);
  for (std::size_t i = 0; i < s.rgb().size(); ++i) EXPECT_DOUBLE_EQ(t.rgb().data[i], 0.5 * s.rgb().data[i] + 0.5);
  half.fog_alpha = 1.5;
  EXPECT_THROW(apply_domain_shift(s, half, 0), std::invalid_argument);
}

TEST(Shift, OutputStaysInUnitRangeAndIsSeeded) {
  const auto s = generate_scene(SceneSpec{}, 5);
  DomainShiftSpec strong = default_shift();
  strong.noise_std = 0.5;
  const auto a = apply_domain_shift(s, strong, 1);
  for (double v : a.rgb().data) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_EQ(a, apply_domain_shift(s, strong, 1));
  EXPECT_FALSE(a == apply_domain_shift(s, strong, 2));
}

TEST(Sample, GrayIsLuma) {
  const auto s = apply_domain_shift(generate_scene(SceneSpec{}, 6), default_shift(), 1);
  const auto& rgb = s.rgb();
  for (int y = 0; y < rgb.h; y += 7) {
    for (int x = 0; x < rgb.w; x += 5) {
      const double expected = losses::kLumaR * rgb.at(0, y, x) + losses::kLumaG * rgb.at(1, y, x) +
                              losses::kLumaB * rgb.at(2, y, x);
      EXPECT_NEAR(s.gray().at(0, y, x), expected, 1e-15);
    }
  }
}

TEST(Proposals, ZeroJitterCopiesGroundTruth) {
  const auto s = generate_scene(SceneSpec{}, 7);
  ProposalNoiseSpec noise;
  noise.jitter_std = 0.0;
  noise.background_count = 0;
  const auto set = generate_proposals(s, noise, 1);
  const auto& gt = s.evaluation_annotations().boxes;
  ASSERT_EQ(set.proposals.size(), gt.size() * static_cast<std::size_t>(noise.redundancy));
  for (std::size_t i = 0; i < set.proposals.size(); ++i) {
    EXPECT_EQ(set.proposals[i].box, gt[i / static_cast<std::size_t>(noise.redundancy)]);
  }
}

TEST(Proposals, JitterIsCenteredOnTheObject) {
  SceneSpec spec;
  spec.min_objects = spec.max_objects = 1;
  const auto s = generate_scene(spec, 8);
  ProposalNoiseSpec noise;
  noise.redundancy = 2000;
  noise.background_count = 0;
  const auto set = generate_proposals(s, noise, 2);
  const auto gt = s.evaluation_annotations().boxes[0];
  double mx = 0, my = 0;
  for (const auto& p : set.proposals) {
    mx += p.box.bx - gt.bx;
    my += p.box.by - gt.by;
    EXPECT_GE(p.box.w, gt.w * (1 - noise.size_jitter) - 1e-12);
    EXPECT_LE(p.box.w, gt.w * (1 + noise.size_jitter) + 1e-12);
  }
  const double n = static_cast<double>(set.proposals.size());
  const double bound = 3.0 * noise.jitter_std / std::sqrt(n);
  EXPECT_LT(std::fabs(mx / n), bound);
  EXPECT_LT(std::fabs(my / n), bound);
}

TEST(Proposals, BackgroundKeepsItsMargin) {
  ProposalNoiseSpec noise;
  noise.background_count = 5;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = generate_scene(SceneSpec{}, seed);
    const auto set = generate_proposals(s, noise, seed);
    const auto& gt = s.evaluation_annotations().boxes;
    const std::size_t first_bg = gt.size() * static_cast<std::size_t>(noise.redundancy);
    ASSERT_EQ(set.proposals.size(), first_bg + 5);
    for (std::size_t i = first_bg; i < set.proposals.size(); ++i) {
      for (const auto& b : gt) EXPECT_GE(distance(set.proposals[i].box.center(), b.center()), noise.background_margin);
    }
  }
}

TEST(Proposals, ImpossibleMarginThrows) {
  const auto s = generate_scene(SceneSpec{}, 9);
  ProposalNoiseSpec noise;
  noise.background_margin = 1000.0;
  noise.max_retries = 10;
  EXPECT_THROW(generate_proposals(s, noise, 0), GenerationError);
}

TEST(Proposals, MatchingFindsTheirObjects) {
  const auto s = generate_scene(SceneSpec{}, 10);
  ProposalNoiseSpec noise;
  noise.jitter_std = 0.0;
  const auto set = generate_proposals(s, noise, 0);
  const auto m = match_proposals(set, s.evaluation_annotations());
  const std::size_t objects = s.object_count();
  for (std::size_t i = 0; i < objects * static_cast<std::size_t>(noise.redundancy); ++i) {
    EXPECT_EQ(m[i], static_cast<int>(i / static_cast<std::size_t>(noise.redundancy)));
  }
}
