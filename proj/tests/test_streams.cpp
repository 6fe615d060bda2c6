#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "slr/streams.hpp"

namespace {

using namespace slr;

// Dyadic pixel coordinates keep every difference and prefix sum exact.
Tensor dyadic_sequence(std::size_t frames, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> px(0, 1024 * 64 - 1);
  std::uniform_int_distribution<int> conf(0, 64);
  Tensor x({3, frames, kSkeletonNodes});
  const std::size_t plane = frames * kSkeletonNodes;
  for (std::size_t i = 0; i < 2 * plane; ++i) x[i] = px(rng) / 64.0;
  for (std::size_t i = 0; i < plane; ++i) x[2 * plane + i] = conf(rng) / 64.0;
  return x;
}

Tensor root_trajectory(const Tensor& x, const SkeletonLayout& l) {
  const std::size_t T = x.dim(1), N = x.dim(2);
  Tensor r({2, T});
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t t = 0; t < T; ++t) r[c * T + t] = x[(c * T + t) * N + l.root_index];
  return r;
}

Tensor first_frame(const Tensor& x) {
  const std::size_t T = x.dim(1), N = x.dim(2);
  Tensor f({3, N});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t n = 0; n < N; ++n) f[c * N + n] = x[(c * T) * N + n];
  return f;
}

void expect_xy_equal(const Tensor& a, const Tensor& b) {
  const std::size_t plane = a.dim(1) * a.dim(2);
  for (std::size_t i = 0; i < 2 * plane; ++i) ASSERT_EQ(a[i], b[i]) << "flat index " << i;
}

TEST(Bone, RootRowIsZero) {
  const auto l = default_layout();
  const Tensor b = to_bone(dyadic_sequence(5, 1), l);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < 5; ++t) EXPECT_EQ(b.at({c, t, l.root_index}), 0.0);
}

TEST(Bone, TranslationInvariant) {
  const auto l = default_layout();
  const Tensor x = dyadic_sequence(6, 2);
  Tensor shifted = x;
  const std::size_t plane = 6 * kSkeletonNodes;
  for (std::size_t i = 0; i < plane; ++i) {
    shifted[i] += 37.5;
    shifted[plane + i] -= 12.25;
  }
  EXPECT_EQ(max_abs_diff(to_bone(x, l), to_bone(shifted, l)), 0.0);
}

TEST(Bone, ConfidenceIsWeakerEndpoint) {
  const auto l = default_layout();
  const Tensor x = dyadic_sequence(3, 3);
  const Tensor b = to_bone(x, l);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t k = 0; k < kSkeletonNodes; ++k) {
      if (k == l.root_index) continue;
      EXPECT_EQ(b.at({2, t, k}), std::min(x.at({2, t, k}), x.at({2, t, *l.bone_parent[k]})));
    }
}

TEST(Bone, TreePrefixSumReconstructsJointsExactly) {
  const auto l = default_layout();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor x = dyadic_sequence(40, seed);
    expect_xy_equal(oracle::joints_from_bones(to_bone(x, l), root_trajectory(x, l), l), x);
  }
}

TEST(Motion, StaticSequenceIsZero) {
  Tensor x({3, 7, kSkeletonNodes});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < 7; ++t)
      for (std::size_t k = 0; k < kSkeletonNodes; ++k) x.at({c, t, k}) = static_cast<double>(c * 100 + k);
  EXPECT_EQ(max_abs(to_motion(x)), 0.0);
}

TEST(Motion, LinearMotionIsConstantWithZeroFinalFrame) {
  const std::size_t T = 9;
  Tensor x({3, T, kSkeletonNodes});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t k = 0; k < kSkeletonNodes; ++k) x.at({c, t, k}) = static_cast<double>(t) * (1.5 + c);
  const Tensor m = to_motion(x);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t k = 0; k < kSkeletonNodes; ++k) EXPECT_EQ(m.at({c, t, k}), t + 1 < T ? 1.5 + c : 0.0);
}

TEST(Motion, PrefixSumFromFirstFrameReconstructsExactly) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor x = dyadic_sequence(50, seed + 100);
    EXPECT_EQ(max_abs_diff(oracle::from_motion(to_motion(x), first_frame(x)), x), 0.0);
  }
}

TEST(Motion, SingleFrameIsZero) {
  EXPECT_EQ(max_abs(to_motion(dyadic_sequence(1, 4))), 0.0);
}

TEST(DeriveStream, KindsComposeAsDocumented) {
  const auto l = default_layout();
  const Tensor x = dyadic_sequence(12, 5);
  EXPECT_EQ(max_abs_diff(derive_stream(x, StreamKind::Joint, l), x), 0.0);
  EXPECT_EQ(max_abs_diff(derive_stream(x, StreamKind::Bone, l), to_bone(x, l)), 0.0);
  EXPECT_EQ(max_abs_diff(derive_stream(x, StreamKind::JointMotion, l), to_motion(x)), 0.0);
  EXPECT_EQ(max_abs_diff(derive_stream(x, StreamKind::BoneMotion, l), to_motion(to_bone(x, l))), 0.0);
}

TEST(DeriveStream, BoneAndMotionCommuteOnCoordinates) {
  // Confidence uses min(), which does not commute with differencing; x and y do.
  const auto l = default_layout();
  std::mt19937_64 rng(6);
  const Tensor x = Tensor::uniform({3, 30, kSkeletonNodes}, 0.0, 800.0, rng);
  const Tensor a = to_motion(to_bone(x, l)), b = to_bone(to_motion(x), l);
  const std::size_t plane = 30 * kSkeletonNodes;
  for (std::size_t i = 0; i < 2 * plane; ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
}

TEST(DeriveStream, BoneMotionOfStaticSequenceIsZero) {
  Tensor x = dyadic_sequence(1, 7);
  x = temporal_resample(x, 10);
  EXPECT_EQ(max_abs(derive_stream(x, StreamKind::BoneMotion, default_layout())), 0.0);
}

TEST(StreamKindNames, RoundTrip) {
  for (auto k : {StreamKind::Joint, StreamKind::Bone, StreamKind::JointMotion, StreamKind::BoneMotion})
    EXPECT_EQ(parse_stream_kind(to_string(k)), k);
  EXPECT_THROW(parse_stream_kind("velocity"), ValidationError);
}

TEST(Resample, IdentityAtCanonicalLength) {
  const Tensor x = dyadic_sequence(150, 8);
  EXPECT_EQ(max_abs_diff(temporal_resample(x), x), 0.0);
}

TEST(Resample, SingleFrameRepeats) {
  const Tensor x = dyadic_sequence(1, 9);
  const Tensor y = temporal_resample(x);
  ASSERT_EQ(y.dim(1), 150u);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < 150; ++t)
      for (std::size_t k = 0; k < kSkeletonNodes; ++k) EXPECT_EQ(y.at({c, t, k}), x.at({c, 0, k}));
}

TEST(Resample, MatchesIndexFormula) {
  for (std::size_t T : {300u, 7u, 149u, 151u, 1000u}) {
    const Tensor x = dyadic_sequence(T, T);
    const Tensor y = temporal_resample(x);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 150; ++i)
        for (std::size_t k = 0; k < kSkeletonNodes; ++k) ASSERT_EQ(y.at({c, i, k}), x.at({c, i * T / 150, k})) << T;
  }
  const Tensor x = dyadic_sequence(300, 1);
  EXPECT_EQ(temporal_resample(x).at({0, 3, 0}), x.at({0, 6, 0}));
}

TEST(Crop, CenterWindowIsFramesFifteenToOneThirtyFive) {
  const Tensor x = dyadic_sequence(150, 10);
  std::mt19937_64 rng(0);
  const Tensor y = crop_window(x, CropMode::Center, 120, rng);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < 120; ++t)
      for (std::size_t k = 0; k < kSkeletonNodes; ++k) ASSERT_EQ(y.at({c, t, k}), x.at({c, t + 15, k}));
}

TEST(Crop, FullLengthIsIdentityInBothModes) {
  const Tensor x = dyadic_sequence(150, 11);
  std::mt19937_64 rng(1);
  EXPECT_EQ(max_abs_diff(crop_window(x, CropMode::Center, 150, rng), x), 0.0);
  EXPECT_EQ(max_abs_diff(crop_window(x, CropMode::Random, 150, rng), x), 0.0);
}

TEST(Crop, RandomStartStaysWithinBoundsOverManyDraws) {
  std::mt19937_64 rng(12);
  std::size_t lo = 1000, hi = 0;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t s = crop_start(150, 120, CropMode::Random, rng);
    lo = std::min(lo, s);
    hi = std::max(hi, s);
    ASSERT_LE(s, 30u);
  }
  EXPECT_EQ(lo, 0u);
  EXPECT_EQ(hi, 30u);
}

TEST(Crop, RandomWindowIsContiguousSlice) {
  // Frame t carries value t, so a contiguous window reads start, start+1, ...
  Tensor x({3, 150, kSkeletonNodes});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < 150; ++t)
      for (std::size_t k = 0; k < kSkeletonNodes; ++k) x.at({c, t, k}) = static_cast<double>(t);
  std::mt19937_64 rng(13);
  for (int i = 0; i < 200; ++i) {
    const Tensor y = crop_window(x, CropMode::Random, 120, rng);
    const double start = y.at({0, 0, 0});
    for (std::size_t t = 0; t < 120; ++t) ASSERT_EQ(y.at({2, t, 26}), start + t);
  }
}

TEST(Crop, RejectsOversizedWindow) {
  std::mt19937_64 rng(0);
  EXPECT_THROW(crop_window(dyadic_sequence(100, 0), CropMode::Center, 120, rng), ShapeError);
}

TEST(Augment, CenteringZeroesCoordinateMeans) {
  const auto l = default_layout();
  std::mt19937_64 rng(14);
  AugmentConfig cfg;
  cfg.train = false;
  const Tensor y = augment(dyadic_sequence(120, 14), cfg, l, rng);
  const std::size_t plane = 120 * kSkeletonNodes;
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += y[c * plane + i];
    EXPECT_NEAR(s / plane, 0.0, 1e-9);
  }
}

TEST(Augment, EvalModeLeavesConfidenceAndShapeAlone) {
  const auto l = default_layout();
  std::mt19937_64 rng(15);
  const Tensor x = dyadic_sequence(120, 15);
  AugmentConfig cfg;
  cfg.train = false;
  const Tensor y = augment(x, cfg, l, rng);
  const std::size_t plane = 120 * kSkeletonNodes;
  for (std::size_t i = 0; i < plane; ++i) EXPECT_EQ(y[2 * plane + i], x[2 * plane + i]);
}

TEST(Augment, NoiseIsBoundedByTwentyWithoutFlip) {
  const auto l = default_layout();
  std::mt19937_64 rng(16);
  AugmentConfig cfg;
  cfg.flip = FlipPolicy::Never;
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = dyadic_sequence(120, 200 + trial);
    const Tensor base = center(x);
    const Tensor y = augment(x, cfg, l, rng);
    const std::size_t plane = 120 * kSkeletonNodes;
    for (std::size_t i = 0; i < 2 * plane; ++i) worst = std::max(worst, std::abs(y[i] - base[i]));
    for (std::size_t i = 0; i < plane; ++i) ASSERT_EQ(y[2 * plane + i], x[2 * plane + i]);
  }
  EXPECT_LE(worst, 20.0);
  EXPECT_GT(worst, 19.0);
}

TEST(Augment, ForcedDoubleFlipIsBitExactIdentity) {
  const auto l = default_layout();
  std::mt19937_64 rng(17);
  AugmentConfig cfg;
  cfg.noise_max = 0.0;
  cfg.flip = FlipPolicy::Always;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 data_rng(seed);
    const Tensor x = Tensor::uniform({3, 120, kSkeletonNodes}, -300.0, 300.0, data_rng);
    const Tensor once = augment(x, cfg, l, rng);
    const Tensor twice = augment(once, cfg, l, rng);
    cfg.flip = FlipPolicy::Never;
    const Tensor none = augment(x, cfg, l, rng);
    cfg.flip = FlipPolicy::Always;
    // Centering a centered sequence may move values by an ulp-scale mean; mirror itself is exact.
    EXPECT_EQ(max_abs_diff(mirror(mirror(x, l), l), x), 0.0);
    EXPECT_LE(max_abs_diff(twice, none), 1e-12);
  }
}

TEST(Augment, FlipFrequencyNearHalf) {
  const auto l = default_layout();
  std::mt19937_64 rng(18);
  AugmentConfig cfg;
  cfg.noise_max = 0.0;
  Tensor x({3, 2, kSkeletonNodes});
  x.at({0, 0, l.index_of("left_elbow")}) = 100.0;
  int flips = 0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    const Tensor y = augment(x, cfg, l, rng);
    flips += y.at({0, 0, l.index_of("right_elbow")}) < -50.0 ? 1 : 0;
  }
  EXPECT_NEAR(flips / static_cast<double>(n), 0.5, 3.0 * std::sqrt(0.25 / n) * 1.5);
}

TEST(Mirror, NegatesXAndSwapsSides) {
  const auto l = default_layout();
  const Tensor x = dyadic_sequence(4, 19);
  const Tensor y = mirror(x, l);
  const std::size_t le = l.index_of("left_index_tip"), re = l.index_of("right_index_tip");
  for (std::size_t t = 0; t < 4; ++t) {
    EXPECT_EQ(y.at({0, t, le}), -x.at({0, t, re}));
    EXPECT_EQ(y.at({1, t, le}), x.at({1, t, re}));
    EXPECT_EQ(y.at({2, t, re}), x.at({2, t, le}));
  }
}

TEST(Pipeline, ProducesCropLengthAndIsDeterministicPerRngStream) {
  const auto l = default_layout();
  const Tensor raw = dyadic_sequence(83, 20);
  InputPipeline p;
  p.stream = StreamKind::BoneMotion;
  auto r1 = sample_rng(5, 3, 1), r2 = sample_rng(5, 3, 1), r3 = sample_rng(5, 3, 2);
  const Tensor a = prepare_input(raw, p, true, l, r1), b = prepare_input(raw, p, true, l, r2), c = prepare_input(raw, p, true, l, r3);
  EXPECT_EQ(a.shape(), (Shape{3, 120, kSkeletonNodes}));
  EXPECT_EQ(max_abs_diff(a, b), 0.0);
  EXPECT_GT(max_abs_diff(a, c), 0.0);
}

TEST(Pipeline, EvalModeIgnoresRng) {
  const auto l = default_layout();
  const Tensor raw = dyadic_sequence(150, 21);
  InputPipeline p;
  std::mt19937_64 r1(1), r2(2);
  EXPECT_EQ(max_abs_diff(prepare_input(raw, p, false, l, r1), prepare_input(raw, p, false, l, r2)), 0.0);
}

}  // namespace
