#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "slr/autodiff.hpp"

namespace slr {

struct GradCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  /// Coordinates sampled per parameter; parameters at or below this size are checked fully.
  std::size_t coords_per_param = 32;
  std::uint64_t seed = 0;
  /// Evaluate perturbed losses on the base point's relu pattern, so a
  /// perturbation that crosses a kink still differences the same linear piece.
  bool pin_activations = true;
};

struct ParamGradCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  /// Coordinates whose perturbation flipped at least one relu sign.
  std::size_t kink_crossings = 0;
};

struct GradCheckReport {
  std::vector<ParamGradCheck> params;
  double max_rel_error = 0.0;
  std::string worst_param;
  double tolerance = 0.0;
  std::size_t kink_crossings = 0;
  bool pass = false;
};

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

/// Builds the scalar loss on the given tape from the current parameter values.
using LossBuilder = std::function<Var(Tape&)>;

/// Compares reverse-mode gradients with central differences
/// (f(p+eps) - f(p-eps)) / (2 eps). `loss` must be deterministic in the parameters.
inline GradCheckReport grad_check(std::span<Param* const> params, const LossBuilder& loss,
                                  const GradCheckOptions& opt = {}) {
  for (Param* p : params) p->zero_grad();
  Tape::ActivationPattern pattern;
  {
    Tape tape;
    tape.capture_activations(&pattern);
    Var l = loss(tape);
    tape.backward(l);
  }
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Param* p : params) analytic.push_back(p->grad);

  bool crossed = false;
  auto eval = [&]() {
    Tape tape;
    tape.set_grad_enabled(false);
    if (opt.pin_activations) tape.replay_activations(&pattern);
    const double v = loss(tape).value().item();
    crossed = crossed || tape.activation_flips() > 0;
    return v;
  };

  std::mt19937_64 rng(opt.seed);
  GradCheckReport report;
  report.tolerance = opt.tolerance;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param& p = *params[k];
    std::vector<std::size_t> coords(p.value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > opt.coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opt.coords_per_param);
    }
    ParamGradCheck pc{p.name, 0.0, coords.size()};
    for (std::size_t c : coords) {
      crossed = false;
      const double saved = p.value[c];
      p.value[c] = saved + opt.epsilon;
      const double up = eval();
      p.value[c] = saved - opt.epsilon;
      const double down = eval();
      p.value[c] = saved;
      const double numeric = (up - down) / (2.0 * opt.epsilon);
      pc.max_rel_error = std::max(pc.max_rel_error, relative_error(analytic[k][c], numeric));
      pc.kink_crossings += crossed;
    }
    report.kink_crossings += pc.kink_crossings;
    if (pc.max_rel_error >= report.max_rel_error) {
      report.max_rel_error = pc.max_rel_error;
      report.worst_param = p.name;
    }
    report.params.push_back(std::move(pc));
  }
  report.pass = report.max_rel_error <= opt.tolerance;
  return report;
}

}  // namespace slr
