#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "slr/autodiff.hpp"
#include "slr/gradcheck.hpp"
#include "slr/model.hpp"

namespace {

using namespace slr;

Tensor rnd(Shape s, std::mt19937_64& rng, double scale = 1.0) { return Tensor::normal(std::move(s), 0.0, scale, rng); }

// A fixed random projection turns any output into a scalar with a dense gradient.
Var project(Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ad::sum(ad::mul(y, y.tape().constant(Tensor::normal(y.shape(), 0.0, 1.0, rng))));
}

void expect_passes(std::vector<Param*> params, const LossBuilder& loss) {
  const auto report = grad_check(params, loss);
  EXPECT_TRUE(report.pass) << "worst " << report.worst_param << " rel " << report.max_rel_error;
}

TEST(Backward, LinearLossGradientIsInput) {
  std::mt19937_64 rng(1);
  Param w("w", rnd({3, 4}, rng));
  const Tensor x = rnd({4, 2}, rng);
  Tape t;
  t.backward(ad::sum(ad::matmul(t.param(w), t.constant(x))));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(w.grad[i * 4 + k], x[k * 2] + x[k * 2 + 1], 1e-14);
}

TEST(Backward, TanhSlopeAtZeroIsOne) {
  Param p("p", Tensor::zeros({1}));
  Tape t;
  t.backward(ad::sum(ad::tanh(t.param(p))));
  EXPECT_DOUBLE_EQ(p.grad[0], 1.0);
}

TEST(Backward, RequiresARecordedLoss) {
  Tape t;
  Var c = t.constant(Tensor::scalar(1.0));
  EXPECT_THROW(t.backward(Var{}), Error);
  EXPECT_THROW(t.backward(c), Error);
  Param p("p", Tensor::ones({2}));
  Var l = ad::sum(t.param(p));
  t.backward(l);
  EXPECT_THROW(t.backward(l), Error);
}

TEST(Backward, GradientsAccumulateAcrossPasses) {
  Param p("p", Tensor::ones({2}));
  for (int i = 0; i < 2; ++i) {
    Tape t;
    t.backward(ad::sum(ad::scale(t.param(p), 3.0)));
  }
  EXPECT_EQ(p.grad[0], 6.0);
}

TEST(Tape, NonFiniteValueNamesTheOp) {
  Param p("p", Tensor({1}, {std::numeric_limits<double>::max()}));
  Tape t;
  Tape::Scope s(t, "outer");
  try {
    ad::scale(t.param(p), 10.0);
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("outer/scale"), std::string::npos) << e.what();
  }
}

TEST(KernelGradients, Elementwise) {
  std::mt19937_64 rng(2);
  Param a("a", rnd({3, 4}, rng)), b("b", rnd({3, 4}, rng)), v("v", rnd({4}, rng));
  expect_passes({&a, &b}, [&](Tape& t) { return project(ad::add(ad::mul(t.param(a), t.param(b)), t.param(a)), 1); });
  expect_passes({&a}, [&](Tape& t) { return project(ad::tanh(ad::scale(t.param(a), 0.7)), 2); });
  expect_passes({&a, &v}, [&](Tape& t) { return project(ad::scale_axis(t.param(a), t.param(v), 1), 3); });
  expect_passes({&a, &v}, [&](Tape& t) { return project(ad::add_bias(t.param(a), t.param(v), 1), 4); });
  expect_passes({&a}, [&](Tape& t) { return project(ad::relu(t.param(a)), 5); });
}

TEST(KernelGradients, SoftmaxFamily) {
  std::mt19937_64 rng(3);
  Param z("z", rnd({3, 5}, rng));
  expect_passes({&z}, [&](Tape& t) { return project(ad::softmax(t.param(z), 1), 6); });
  expect_passes({&z}, [&](Tape& t) { return project(ad::log_softmax(t.param(z), 0), 7); });
  expect_passes({&z}, [&](Tape& t) { return ad::cross_entropy(t.param(z), {0, 4, 2}); });
}

TEST(KernelGradients, Contractions) {
  std::mt19937_64 rng(4);
  Param q("q", rnd({2, 3, 2, 4, 5}, rng)), k("k", rnd({2, 3, 2, 4, 5}, rng));
  expect_passes({&q, &k}, [&](Tape& t) { return project(ad::contract("bcsti,bcstj->bsij", t.param(q), t.param(k)), 8); });
  Param x("x", rnd({2, 3, 4, 5}, rng)), P("P", rnd({3, 5, 5}, rng)), u("u", rnd({3, 2}, rng));
  expect_passes({&x, &P}, [&](Tape& t) { return project(ad::contract("bctm,cmn->bctn", t.param(x), t.param(P)), 9); });
  expect_passes({&x, &u}, [&](Tape& t) { return project(ad::contract("ce,bctn->betn", t.param(u), t.param(x)), 10); });
  Param a("a", rnd({4, 3}, rng)), b("b", rnd({3, 2}, rng)), c("c", rnd({2, 5}, rng));
  expect_passes({&a, &b, &c}, [&](Tape& t) { return project(ad::contract("ij,jk,kl->il", {t.param(a), t.param(b), t.param(c)}), 11); });
}

TEST(KernelGradients, TemporalConvolution) {
  std::mt19937_64 rng(5);
  Param x("x", rnd({2, 3, 9, 4}, rng)), w("w", rnd({4, 3, 5}, rng)), bias("bias", rnd({4}, rng));
  for (int stride : {1, 2}) {
    expect_passes({&x, &w, &bias}, [&](Tape& t) {
      return project(ad::temporal_conv(t.param(x), t.param(w), t.param(bias), stride, 2), 12 + stride);
    });
  }
}

TEST(KernelGradients, Normalization) {
  std::mt19937_64 rng(6);
  Param x("x", rnd({3, 4, 5, 2}, rng)), s("s", rnd({4}, rng)), h("h", rnd({4}, rng));
  BatchNormState st(4);
  st.running_mean = rnd({4}, rng, 0.3);
  // Train mode: the loss sees batch statistics, so x's gradient includes the
  // mean/variance paths. Running-stat updates do not affect the loss.
  expect_passes({&x, &s, &h}, [&](Tape& t) { return project(ad::batchnorm(t.param(x), t.param(s), t.param(h), st, NormMode::Train), 15); });
  expect_passes({&x, &s, &h}, [&](Tape& t) { return project(ad::batchnorm(t.param(x), t.param(s), t.param(h), st, NormMode::Eval), 16); });
  expect_passes({&x, &s, &h}, [&](Tape& t) { return project(ad::layernorm(t.param(x), 1, t.param(s), t.param(h)), 17); });
}

TEST(KernelGradients, ShapeOps) {
  std::mt19937_64 rng(7);
  Param x("x", rnd({2, 6, 8, 3}, rng));
  expect_passes({&x}, [&](Tape& t) { return project(ad::slice_channels(t.param(x), 2, 5), 18); });
  expect_passes({&x}, [&](Tape& t) {
    Var v = t.param(x);
    return project(ad::concat_channels({ad::slice_channels(v, 3, 6), ad::slice_channels(v, 0, 3)}), 19);
  });
  expect_passes({&x}, [&](Tape& t) { return project(ad::subsample_time(t.param(x), 2), 20); });
  expect_passes({&x}, [&](Tape& t) { return project(ad::global_avg_pool(t.param(x)), 21); });
  expect_passes({&x}, [&](Tape& t) { return project(ad::reshape(t.param(x), {2, 3, 2, 8, 3}), 22); });
}

TEST(KernelGradients, SingleGraphCorrelationLayer) {
  ModelConfig cfg = ModelConfig::miniature(5);
  cfg.num_blocks = 1;
  cfg.block_channels = {8};
  Model m(cfg, 3);
  m.randomize(4);
  std::mt19937_64 rng(5);
  const Tensor x = rnd({2, 3, 6, 27}, rng);
  const auto& gc = m.blocks()[0].gc;
  std::vector<Param*> params{gc.linear, gc.norm.scale, gc.norm.shift, gc.query_w, gc.query_b, gc.key_w, gc.key_b, gc.alpha};
  expect_passes(params, [&](Tape& t) { return project(graph_correlation_forward(t.constant(x), gc, NormMode::Eval), 23); });
}

TEST(ActivationPinning, ReplayedPatternCountsFlipsAndFixesMasks) {
  Param p("p", Tensor({3}, {-1.0, 0.5, 2.0}));
  Tape::ActivationPattern pattern;
  {
    Tape t;
    t.capture_activations(&pattern);
    ad::relu(t.param(p));
  }
  ASSERT_EQ(pattern.size(), 1u);
  EXPECT_EQ(pattern[0], (std::vector<unsigned char>{0, 1, 1}));
  p.value[0] = 1.0;  // crosses the kink
  Tape t;
  t.replay_activations(&pattern);
  Var y = ad::relu(t.param(p));
  EXPECT_EQ(t.activation_flips(), 1u);
  EXPECT_EQ(y.value()[0], 0.0);
  EXPECT_EQ(y.value()[2], 2.0);
}

}  // namespace
