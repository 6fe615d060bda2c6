#pragma once

// Random small instances of every spatial/temporal module, evaluated through
// the library and through the loop oracles. Each case returns the max abs gap.

#include <algorithm>
#include <random>
#include <string>

#include "oracles.hpp"
#include "slr/model.hpp"

namespace cases {

using namespace slr;

struct Extents {
  std::size_t batch, c_in, c_out, frames, nodes;
};

inline Extents draw_extents(std::mt19937_64& rng, std::size_t c_out_multiple = 2) {
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  Extents e{pick(1, 2), pick(1, 8), 0, pick(1, 4), pick(2, 8)};
  e.c_out = c_out_multiple * pick(1, 8 / c_out_multiple);
  return e;
}

inline Param& random_param(ParamStore& store, const std::string& name, Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  return store.add(name, Tensor::normal(std::move(shape), 0.0, scale, rng), true);
}

inline NormParams random_norm(ParamStore& store, const std::string& name, std::size_t c, std::mt19937_64& rng) {
  NormParams n;
  n.scale = &random_param(store, name + ".scale", {c}, rng, 0.5);
  n.shift = &random_param(store, name + ".shift", {c}, rng, 0.5);
  n.state = &store.add_norm(name, c);
  n.state->running_mean = Tensor::normal({c}, 0.0, 0.3, rng);
  n.state->running_var = Tensor::uniform({c}, 0.5, 1.5, rng);
  return n;
}

inline oracle::Norm to_oracle(const NormParams& n) {
  return {n.scale->value, n.shift->value, n.state->running_mean, n.state->running_var, n.state->eps};
}

inline Tensor input(const Extents& e, std::mt19937_64& rng) {
  return Tensor::normal({e.batch, e.c_in, e.frames, e.nodes}, 0.0, 1.0, rng);
}

inline double graph_correlation_gap(std::uint64_t seed, double* adjacency_gap = nullptr) {
  std::mt19937_64 rng(seed);
  const Extents e = draw_extents(rng, 2);
  ParamStore store;
  GraphCorrelationParams p;
  p.subsets = 2;
  p.linear = &random_param(store, "linear", {e.c_out, e.c_in, 1}, rng);
  p.norm = random_norm(store, "bn", e.c_out, rng);
  p.query_w = &random_param(store, "qw", {e.c_out, e.c_out, 1}, rng);
  p.query_b = &random_param(store, "qb", {e.c_out}, rng);
  p.key_w = &random_param(store, "kw", {e.c_out, e.c_out, 1}, rng);
  p.key_b = &random_param(store, "kb", {e.c_out}, rng);
  p.alpha = &random_param(store, "alpha", {2}, rng);
  const Tensor x = input(e, rng);
  Tape t;
  Tensor a_lib, a_ref;
  const Tensor y = graph_correlation_forward(t.constant(x), p, NormMode::Eval, &a_lib).value();
  const oracle::GraphCorrelation o{p.linear->value, to_oracle(p.norm), p.query_w->value, p.query_b->value,
                                   p.key_w->value,  p.key_b->value,    p.alpha->value};
  const Tensor ref = oracle::graph_correlation(x, o, 2, &a_ref);
  if (adjacency_gap) *adjacency_gap = max_abs_diff(a_lib, a_ref);
  return max_abs_diff(y, ref);
}

inline double super_node_gap(std::uint64_t seed, double* similarity_gap = nullptr) {
  std::mt19937_64 rng(seed);
  const Extents e = draw_extents(rng, 1);
  const std::size_t E = 2;
  ParamStore store;
  SuperNodeParams p;
  p.ln_scale = &random_param(store, "ln.scale", {e.c_in}, rng);
  p.ln_shift = &random_param(store, "ln.shift", {e.c_in}, rng);
  p.linear_w = &random_param(store, "lw", {e.c_in, e.c_in, 1}, rng);
  p.linear_b = &random_param(store, "lb", {e.c_in}, rng);
  p.u = &random_param(store, "u", {e.c_in, E}, rng);
  p.beta = &random_param(store, "beta", {E}, rng);
  p.out_w = &random_param(store, "ow", {e.c_out, e.c_in, 1}, rng);
  p.out_b = &random_param(store, "ob", {e.c_out}, rng);
  const Tensor x = input(e, rng);
  Tape t;
  Tensor s_lib, s_ref;
  const Tensor y = super_node_forward(t.constant(x), p, &s_lib).value();
  const oracle::SuperNode o{p.ln_scale->value, p.ln_shift->value, p.linear_w->value, p.linear_b->value,
                            p.u->value,        p.beta->value,     p.out_w->value,    p.out_b->value};
  const Tensor ref = oracle::super_node(x, o, &s_ref);
  if (similarity_gap) *similarity_gap = max_abs_diff(s_lib, s_ref);
  return max_abs_diff(y, ref);
}

inline double dynamic_aggregation_gap(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Extents e = draw_extents(rng, 1);
  e.c_in = e.c_out;
  const Tensor x = input(e, rng);
  const Tensor P = Tensor::normal({e.c_out, e.nodes, e.nodes}, 0.0, 1.0, rng);
  Tape t;
  return max_abs_diff(dynamic_aggregation_forward(t.constant(x), t.constant(P)).value(), oracle::dynamic_aggregation(x, P));
}

inline double ptcn_gap(std::uint64_t seed, std::size_t stride) {
  std::mt19937_64 rng(seed);
  Extents e = draw_extents(rng, 2);
  e.c_in = e.c_out;
  e.frames = std::uniform_int_distribution<std::size_t>(1, 8)(rng);
  const std::size_t width = e.c_out / 2;
  ParamStore store;
  PtcnParams p;
  std::vector<oracle::PtcnBranch> ref_branches;
  for (std::size_t k : {5u, 7u}) {
    PtcnBranch br;
    br.kernel = k;
    br.weight = &random_param(store, "w" + std::to_string(k), {width, width, k}, rng);
    br.norm = random_norm(store, "bn" + std::to_string(k), width, rng);
    p.branches.push_back(br);
    ref_branches.push_back({br.weight->value, to_oracle(br.norm)});
  }
  const Tensor x = input(e, rng);
  Tape t;
  const Tensor y = ptcn_forward(t.constant(x), p, stride, NormMode::Eval).value();
  return max_abs_diff(y, oracle::ptcn(x, ref_branches, stride));
}

inline double gcn_gap(std::uint64_t seed, bool learnable) {
  std::mt19937_64 rng(seed);
  const Extents e = draw_extents(rng, 1);
  ParamStore store;
  Param& w = random_param(store, "w", {e.c_out, e.c_in, 1}, rng);
  const Tensor x = input(e, rng);
  Tape t;
  Tensor y;
  Tensor a;
  if (learnable) {
    Param& g = random_param(store, "graph", {e.nodes, e.nodes}, rng);
    a = g.value;
    y = learnable_graph_baseline_forward(t.constant(x), t.param(w), t.param(g)).value();
  } else {
    // A random symmetric normalized graph stands in for D^-1/2 (A+I) D^-1/2.
    Tensor adj({e.nodes, e.nodes});
    for (std::size_t i = 0; i < e.nodes; ++i)
      for (std::size_t j = i + 1; j < e.nodes; ++j) adj[i * e.nodes + j] = adj[j * e.nodes + i] = (rng() & 1) ? 1.0 : 0.0;
    a = normalized_adjacency(adj);
    y = gcn_baseline_forward(t.constant(x), t.param(w), t.constant(a)).value();
  }
  return max_abs_diff(y, oracle::gcn(x, w.value, a));
}

/// Max gap over every module family for one seed.
inline double worst_module_gap(std::uint64_t seed) {
  double adj = 0.0, sim = 0.0;
  double worst = std::max({graph_correlation_gap(seed, &adj), super_node_gap(seed, &sim), dynamic_aggregation_gap(seed),
                           ptcn_gap(seed, 1), ptcn_gap(seed, 2), gcn_gap(seed, false), gcn_gap(seed, true)});
  return std::max({worst, adj, sim});
}

}  // namespace cases
