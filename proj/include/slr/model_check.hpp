#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "slr/gradcheck.hpp"
#include "slr/model.hpp"

namespace slr {

/// Gradient check of a whole model at a randomized point: eval-mode batch
/// statistics, a [batch, 3, frames, N] standard-normal input and labels
/// {1, 3, 5, ...} mod num_classes. Every quantity derives from `seed`.
struct ModelGradCheck {
  ModelConfig config = ModelConfig::miniature(5);
  std::uint64_t seed = 0;
  std::size_t batch = 2;
  std::size_t frames = 8;
  /// Non-zero corrupts the backward pass (see ForwardOptions::grad_fault).
  double grad_fault = 0.0;
};

inline GradCheckReport check_model_gradients(const ModelGradCheck& setup, GradCheckOptions opt = {}) {
  Model model(setup.config, setup.seed + 2);
  model.randomize(setup.seed + 3);
  std::mt19937_64 rng(setup.seed + 5);
  const Tensor x = Tensor::normal({setup.batch, setup.config.in_channels, setup.frames, setup.config.num_nodes}, 0.0, 1.0, rng);
  std::vector<std::size_t> labels;
  for (std::size_t b = 0; b < setup.batch; ++b) labels.push_back((2 * b + 1) % setup.config.num_classes);
  ForwardOptions fwd;
  fwd.mode = NormMode::Eval;
  fwd.grad_fault = setup.grad_fault;
  opt.seed = setup.seed;
  auto params = model.store().list();
  return grad_check(params, [&](Tape& t) { return ad::cross_entropy(model.forward(t, x, fwd), labels); }, opt);
}

}  // namespace slr
