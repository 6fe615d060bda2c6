#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "slr/autodiff.hpp"
#include "slr/gradcheck.hpp"
#include "slr/kernels.hpp"

namespace {

using namespace slr;

Tensor rnd(Shape s, std::mt19937_64& rng) { return Tensor::normal(std::move(s), 0.0, 1.0, rng); }

TEST(Tensor, ShapeAndStorageAgree) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(shape_size(t.shape()), t.size());
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  EXPECT_THROW(Tensor({2, 0}), ShapeError);
  EXPECT_THROW(t.reshaped({5, 5}), ShapeError);
}

TEST(Tensor, FiniteCheckFlagsNanAndInf) {
  Tensor t({3});
  EXPECT_TRUE(t.all_finite());
  t[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(t.all_finite());
  t[1] = -std::numeric_limits<double>::infinity();
  EXPECT_FALSE(t.all_finite());
  EXPECT_THROW(require_finite(t, "t"), NonFiniteError);
}

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  std::mt19937_64 rng(1);
  const Tensor b = rnd({3, 4}, rng);
  EXPECT_EQ(max_abs_diff(matmul(Tensor::identity(3), b), b), 0.0);
}

TEST(Matmul, HandComputedProduct) {
  const Tensor a({2, 2}, {1, 2, 3, 4});
  const Tensor b({2, 1}, {0, 1});
  const Tensor c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c[0], 2.0);
  EXPECT_EQ(c[1], 4.0);
}

TEST(Matmul, MatchesTripleLoop) {
  std::mt19937_64 rng(2);
  const Tensor a = rnd({7, 5}, rng), b = rnd({5, 4}, rng);
  EXPECT_LE(max_abs_diff(matmul(a, b), oracle::matmul(a, b)), 1e-12);
}

TEST(Matmul, RejectsInnerExtentMismatch) {
  EXPECT_THROW(matmul(Tensor({2, 3}), Tensor({4, 2})), ShapeError);
}

TEST(Contract, AllOnesCountsContractedExtent) {
  const Tensor y = contract("cstn,smn->cstm", Tensor::ones({2, 2, 3, 4}), Tensor::ones({2, 4, 4}));
  ASSERT_EQ(y.shape(), (Shape{2, 2, 3, 4}));
  for (double v : y.data()) EXPECT_EQ(v, 4.0);
}

TEST(Contract, ShapeLaw) {
  const Tensor y = contract("ce,ctn->etn", Tensor::ones({8, 6}), Tensor::ones({8, 5, 27}));
  EXPECT_EQ(y.shape(), (Shape{6, 5, 27}));
}

TEST(Contract, RejectsMalformedSpecs) {
  const Tensor a({2, 3}), b({3, 4});
  EXPECT_THROW(contract("ab,bc", a, b), ValidationError);
  EXPECT_THROW(contract("ab,bc->aZ", a, b), ValidationError);
  EXPECT_THROW(contract("ab,bc->ad", a, b), ValidationError);
  EXPECT_THROW(contract("abc,bc->ac", a, b), ShapeError);
  EXPECT_THROW(contract("ab,ac->bc", a, b), ShapeError);
}

// Random specs over rank <= 5 operands, extents <= 8, including transposed
// outputs, batch letters, letters summed out of a single operand and outer products.
TEST(Contract, MatchesNestedLoopOracle) {
  const std::vector<std::string> specs = {
      "ij,jk->ik",          "ij,kj->ki",          "bij,bjk->bik",       "bcti,bctj->bij",   "bcstj,bsij->bcsti",
      "bctm,cmn->bctn",     "bctm,mn->bctn",      "ce,bctn->betn",      "ce,betn->bctn",    "abcde,edcba->",
      "abcd,dc->ab",        "ab,cd->abcd",        "abc->cba",           "abcde->eb",        "ijk,ik->kj",
      "bc,kc->bk",          "abcd,bd->acb",       "xyz,zy->yx",         "aij,ajk,akl->il",  "sij->ij"};
  std::mt19937_64 rng(3);
  for (const auto& spec : specs) {
    for (int trial = 0; trial < 10; ++trial) {
      std::map<char, std::size_t> ext;
      std::uniform_int_distribution<std::size_t> pick(1, 5);
      for (char c : spec)
        if (c >= 'a' && c <= 'z' && !ext.count(c)) ext[c] = pick(rng);
      const std::string lhs = spec.substr(0, spec.find("->"));
      std::vector<Tensor> ops;
      std::string term;
      for (char c : lhs + ",") {
        if (c == ',') {
          Shape s;
          for (char t : term) s.push_back(ext[t]);
          ops.push_back(rnd(s, rng));
          term.clear();
        } else {
          term += c;
        }
      }
      std::vector<const Tensor*> ptrs;
      for (const auto& o : ops) ptrs.push_back(&o);
      EXPECT_LE(max_abs_diff(contract(spec, ptrs), oracle::einsum(spec, ptrs)), 1e-10) << spec;
    }
  }
}

TEST(TemporalConv, DeltaKernelIsIdentity) {
  std::mt19937_64 rng(4);
  const Tensor x = rnd({3, 6, 5}, rng);
  Tensor w({3, 3, 1});
  for (std::size_t c = 0; c < 3; ++c) w[c * 3 + c] = 1.0;
  EXPECT_EQ(max_abs_diff(temporal_conv(x, w, nullptr, 1, 0), x), 0.0);
}

TEST(TemporalConv, StridedLengthLaw) {
  const Tensor y = temporal_conv(Tensor({2, 120, 3}), Tensor({2, 2, 5}), nullptr, 2, 2);
  EXPECT_EQ(y.dim(1), 60u);
}

TEST(TemporalConv, LengthLawHoldsAcrossKernelsAndStrides) {
  for (std::size_t t = 1; t <= 20; ++t)
    for (std::size_t k : {1, 3, 5, 7, 9})
      for (int s : {1, 2})
        for (std::size_t p : {std::size_t{0}, (k - 1) / 2}) {
          if (t + 2 * p < k) continue;
          const Tensor y = temporal_conv(Tensor({1, t, 2}), Tensor({1, 1, k}), nullptr, s, static_cast<int>(p));
          EXPECT_EQ(y.dim(1), (t + 2 * p - k) / static_cast<std::size_t>(s) + 1);
        }
}

TEST(TemporalConv, MatchesQuadrupleLoop) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = 2 * (trial % 4) + 1, stride = 1 + trial % 2;
    const Tensor x = rnd({2, 3, 9, 4}, rng), w = rnd({5, 3, k}, rng), b = rnd({5}, rng);
    const Tensor y = temporal_conv(x, w, &b, static_cast<int>(stride), static_cast<int>((k - 1) / 2));
    EXPECT_LE(max_abs_diff(y, oracle::conv(x, w, &b, stride, (k - 1) / 2)), 1e-10);
  }
}

TEST(TemporalConv, RejectsEvenKernelAndZeroStride) {
  EXPECT_THROW(temporal_conv(Tensor({1, 5, 2}), Tensor({1, 1, 4}), nullptr, 1, 0), ShapeError);
  EXPECT_THROW(temporal_conv(Tensor({1, 5, 2}), Tensor({1, 1, 3}), nullptr, 0, 1), ShapeError);
}

TEST(BatchNorm, TrainModeStandardizesEachChannel) {
  std::mt19937_64 rng(6);
  Tensor x = rnd({4, 3, 5, 6}, rng);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 3.0 * x[i] + 7.0;
  BatchNormState st(3);
  const Tensor y = batchnorm(x, Tensor::ones({3}), Tensor::zeros({3}), st, NormMode::Train);
  const auto [mean, var] = oracle::bn_stats(y);
  const auto [mean_x, var_x] = oracle::bn_stats(x);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_NEAR(mean[c], 0.0, 1e-12);
    // eps keeps the normalized variance just below one.
    EXPECT_NEAR(var[c], var_x[c] / (var_x[c] + st.eps), 1e-12);
  }
}

TEST(BatchNorm, EvalWithUnitStatisticsIsNearIdentity) {
  std::mt19937_64 rng(7);
  const Tensor x = rnd({2, 3, 4, 5}, rng);
  BatchNormState st(3);
  const Tensor y = batchnorm(x, Tensor::ones({3}), Tensor::zeros({3}), st, NormMode::Eval);
  EXPECT_LE(max_abs_diff(y, x * (1.0 / std::sqrt(1.0 + st.eps))), 1e-15);
  EXPECT_LE(max_abs_diff(y, x), 1e-5 * x.max_abs());
}

TEST(BatchNorm, MatchesTwoPassOracleAndUpdatesRunningStats) {
  std::mt19937_64 rng(8);
  const Tensor x = rnd({3, 4, 5, 2}, rng), scale = rnd({4}, rng), shift = rnd({4}, rng);
  BatchNormState st(4);
  const Tensor y = batchnorm(x, scale, shift, st, NormMode::Train);
  const auto [mean, var] = oracle::bn_stats(x);
  oracle::Norm ref{scale, shift, Tensor({4}, mean), Tensor({4}, var), st.eps};
  EXPECT_LE(max_abs_diff(y, oracle::bn_eval(x, ref)), 1e-10);
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_NEAR(st.running_mean[c], 0.1 * mean[c], 1e-12);
    EXPECT_NEAR(st.running_var[c], 0.9 + 0.1 * var[c], 1e-12);
  }
}

TEST(BatchNorm, ZeroVarianceChannelStaysFinite) {
  BatchNormState st(2);
  const Tensor y = batchnorm(Tensor::ones({2, 2, 3, 3}), Tensor::ones({2}), Tensor::zeros({2}), st, NormMode::Train);
  EXPECT_TRUE(y.all_finite());
  EXPECT_EQ(y.max_abs(), 0.0);
}

TEST(LayerNorm, ConstantInputYieldsShift) {
  const Tensor shift({3}, {0.5, -1.0, 2.0});
  const Tensor y = layernorm(Tensor({2, 3, 4, 5}, 7.0), 1, Tensor::ones({3}), shift);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], shift[(i / 20) % 3], 1e-6);
}

TEST(LayerNorm, StandardizesEachPosition) {
  std::mt19937_64 rng(9);
  const Tensor x = rnd({2, 6, 3, 4}, rng);
  const Tensor y = layernorm(x, 1, Tensor::ones({6}), Tensor::zeros({6}));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 12; ++i) {
      double m = 0.0, v = 0.0;
      for (std::size_t c = 0; c < 6; ++c) m += y[(b * 6 + c) * 12 + i];
      m /= 6.0;
      for (std::size_t c = 0; c < 6; ++c) v += std::pow(y[(b * 6 + c) * 12 + i] - m, 2);
      EXPECT_NEAR(m, 0.0, 1e-12);
      EXPECT_NEAR(v / 6.0, 1.0, 1e-4);
    }
}

TEST(LayerNorm, MatchesOracle) {
  std::mt19937_64 rng(10);
  const Tensor x = rnd({2, 5, 3, 4}, rng), s = rnd({5}, rng), h = rnd({5}, rng);
  EXPECT_LE(max_abs_diff(layernorm(x, 1, s, h), oracle::ln_channels(x, s, h)), 1e-10);
}

TEST(Pointwise, TanhRangeAndZero) {
  const Tensor x({5}, {0.0, 1e3, -1e3, 0.5, -20.0});
  const Tensor y = pointwise(Pointwise::Tanh, x);
  EXPECT_EQ(y[0], 0.0);
  std::mt19937_64 rng(11);
  const Tensor r = pointwise(Pointwise::Tanh, rnd({1000}, rng) * 5.0);
  for (double v : r.data()) EXPECT_TRUE(v > -1.0 && v < 1.0);
}

TEST(Pointwise, SoftmaxOfConstantIsUniform) {
  const Tensor y = pointwise(Pointwise::Softmax, Tensor({4}, 3.0));
  for (double v : y.data()) EXPECT_NEAR(v, 0.25, 1e-15);
}

TEST(Pointwise, SoftmaxIsStableForLargeLogits) {
  const Tensor y = pointwise(Pointwise::Softmax, Tensor({2}, {1000.0, 0.0}));
  EXPECT_NEAR(y[0], 1.0, 1e-12);
  EXPECT_NEAR(y[1], 0.0, 1e-12);
  EXPECT_TRUE(pointwise(Pointwise::LogSoftmax, Tensor({2}, {1000.0, 0.0})).all_finite());
}

TEST(Pointwise, SoftmaxRowsSumToOneAndIgnoreShifts) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = rnd({3, 7, 4}, rng) * 10.0;
    const std::size_t axis = static_cast<std::size_t>(trial % 3);
    const Tensor y = pointwise(Pointwise::Softmax, x, axis);
    Tensor shifted = x;
    for (auto& v : shifted.storage()) v += 123.25;
    EXPECT_LE(max_abs_diff(pointwise(Pointwise::Softmax, shifted, axis), y), 1e-12);
    const Tensor sums = contract(axis == 0 ? "abc->bc" : axis == 1 ? "abc->ac" : "abc->ab", y);
    for (double s : sums.data()) EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(GradCheck, QuadraticHasExactGradient) {
  Param p("p", Tensor::ones({6}));
  Param* ps[] = {&p};
  const auto report = grad_check(ps, [&](Tape& t) {
    Var v = t.param(p);
    return ad::sum(ad::mul(v, v));
  });
  for (double g : p.grad.data()) EXPECT_DOUBLE_EQ(g, 2.0);
  EXPECT_LE(report.max_rel_error, 1e-9);
  EXPECT_TRUE(report.pass);
}

TEST(GradCheck, PassIffWithinTolerance) {
  Param p("p", Tensor::ones({3}));
  Param* ps[] = {&p};
  // A gradient scaled by 1.01 through a custom op must be caught.
  auto loss = [&](Tape& t) {
    Var v = t.param(p);
    Var w = t.record("bad", v.value(), {v}, [v](Tape& tt, std::size_t self) { tt.accumulate(v.id(), tt.grad(self) * 1.01); });
    return ad::sum(ad::mul(w, w));
  };
  const auto report = grad_check(ps, loss);
  EXPECT_FALSE(report.pass);
  EXPECT_NEAR(report.max_rel_error, 0.01, 1e-3);
  GradCheckOptions loose;
  loose.tolerance = 0.02;
  EXPECT_TRUE(grad_check(ps, loss, loose).pass);
}

TEST(GradCheck, RelativeErrorUsesFloorDenominator) {
  EXPECT_DOUBLE_EQ(relative_error(0.0, 1e-10), 1e-10 / 1e-8);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
}

}  // namespace
