#pragma once

// The recognition network: r blocks of
//   (graph correlation + super node transform) -> dynamic graph aggregation
//   -> stacked parallel temporal convolutions,
// then global average pooling and a linear classifier.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slr/autodiff.hpp"
#include "slr/error.hpp"
#include "slr/skeleton.hpp"
#include "slr/tensor.hpp"

namespace slr {

enum class SpatialMode { GraphCorrelation, GcnBaseline, LearnableGraphBaseline };

inline std::string to_string(SpatialMode m) {
  switch (m) {
    case SpatialMode::GraphCorrelation: return "graph_correlation";
    case SpatialMode::GcnBaseline: return "gcn_baseline";
    case SpatialMode::LearnableGraphBaseline: return "learnable_graph_baseline";
  }
  return "graph_correlation";
}

inline SpatialMode parse_spatial_mode(const std::string& s) {
  if (s == "graph_correlation") return SpatialMode::GraphCorrelation;
  if (s == "gcn_baseline") return SpatialMode::GcnBaseline;
  if (s == "learnable_graph_baseline") return SpatialMode::LearnableGraphBaseline;
  throw ValidationError("unknown spatial_mode '" + s + "'");
}

struct ModelConfig {
  std::size_t num_blocks = 4;
  std::vector<std::size_t> block_channels{64, 128, 256, 512};
  std::size_t num_subsets = 8;
  std::size_t num_super_nodes = 6;
  std::vector<std::size_t> ptcn_kernels{5, 7};
  std::size_t ptcn_per_block = 3;
  std::size_t num_nodes = kSkeletonNodes;
  std::size_t in_channels = 3;
  std::size_t num_classes = 2000;
  SpatialMode spatial_mode = SpatialMode::GraphCorrelation;
  // Ablation switches; a disabled module is replaced by zero (super node),
  // identity (dynamic aggregation) or a parameter-free stride-2 subsample (PTCN stack).
  bool use_super_node = true;
  bool use_dynamic_aggregation = true;
  bool use_ptcn = true;

  /// 2 blocks, channels [8,16], S=2, E=2.
  static ModelConfig miniature(std::size_t classes = 5) {
    ModelConfig c;
    c.num_blocks = 2;
    c.block_channels = {8, 16};
    c.num_subsets = 2;
    c.num_super_nodes = 2;
    c.num_classes = classes;
    return c;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ValidationError("model config: " + m); };
    if (num_blocks != block_channels.size()) fail("num_blocks must equal len(block_channels)");
    if (num_blocks == 0) fail("need at least one block");
    if (num_subsets == 0 || num_super_nodes == 0) fail("num_subsets and num_super_nodes must be positive");
    if (ptcn_kernels.empty()) fail("ptcn_kernels must not be empty");
    if (ptcn_per_block == 0) fail("ptcn_per_block must be positive");
    if (num_nodes == 0 || in_channels == 0 || num_classes == 0) fail("num_nodes, in_channels, num_classes must be positive");
    for (auto k : ptcn_kernels)
      if (k % 2 == 0) fail("temporal kernels must be odd, got " + std::to_string(k));
    for (auto c : block_channels) {
      if (c == 0) fail("block channels must be positive");
      if (c % num_subsets) fail("block channels " + std::to_string(c) + " not divisible by num_subsets");
      if (c % ptcn_kernels.size()) fail("block channels " + std::to_string(c) + " not divisible by len(ptcn_kernels)");
    }
  }

  nlohmann::json to_json() const {
    return {{"num_blocks", num_blocks},
            {"block_channels", block_channels},
            {"num_subsets", num_subsets},
            {"num_super_nodes", num_super_nodes},
            {"ptcn_kernels", ptcn_kernels},
            {"ptcn_per_block", ptcn_per_block},
            {"num_nodes", num_nodes},
            {"in_channels", in_channels},
            {"num_classes", num_classes},
            {"spatial_mode", to_string(spatial_mode)},
            {"use_super_node", use_super_node},
            {"use_dynamic_aggregation", use_dynamic_aggregation},
            {"use_ptcn", use_ptcn}};
  }

  /// Fields absent from `j` keep the values already in `base`.
  static ModelConfig from_json(const nlohmann::json& j, ModelConfig base) {
    try {
      const bool blocks_given = j.contains("num_blocks");
      if (j.contains("block_channels")) base.block_channels = j["block_channels"].get<std::vector<std::size_t>>();
      base.num_blocks = blocks_given ? j["num_blocks"].get<std::size_t>() : base.block_channels.size();
      if (j.contains("num_subsets")) base.num_subsets = j["num_subsets"].get<std::size_t>();
      if (j.contains("num_super_nodes")) base.num_super_nodes = j["num_super_nodes"].get<std::size_t>();
      if (j.contains("ptcn_kernels")) base.ptcn_kernels = j["ptcn_kernels"].get<std::vector<std::size_t>>();
      if (j.contains("ptcn_per_block")) base.ptcn_per_block = j["ptcn_per_block"].get<std::size_t>();
      if (j.contains("num_nodes")) base.num_nodes = j["num_nodes"].get<std::size_t>();
      if (j.contains("in_channels")) base.in_channels = j["in_channels"].get<std::size_t>();
      if (j.contains("num_classes")) base.num_classes = j["num_classes"].get<std::size_t>();
      if (j.contains("spatial_mode")) base.spatial_mode = parse_spatial_mode(j["spatial_mode"].get<std::string>());
      if (j.contains("use_super_node")) base.use_super_node = j["use_super_node"].get<bool>();
      if (j.contains("use_dynamic_aggregation")) base.use_dynamic_aggregation = j["use_dynamic_aggregation"].get<bool>();
      if (j.contains("use_ptcn")) base.use_ptcn = j["use_ptcn"].get<bool>();
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("model config JSON: ") + e.what());
    }
    base.validate();
    return base;
  }

  static ModelConfig from_json(const nlohmann::json& j);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline ModelConfig ModelConfig::from_json(const nlohmann::json& j) { return from_json(j, ModelConfig{}); }

/// Named parameters and normalization buffers. Entries have stable addresses.
class ParamStore {
 public:
  Param& add(const std::string& name, Tensor value, bool decay) {
    auto [it, inserted] = params_.try_emplace(name, name, std::move(value), decay);
    if (!inserted) throw ValidationError("duplicate parameter name '" + name + "'");
    return it->second;
  }

  BatchNormState& add_norm(const std::string& name, std::size_t channels) {
    auto [it, inserted] = norms_.try_emplace(name, channels);
    if (!inserted) throw ValidationError("duplicate normalization buffer '" + name + "'");
    return it->second;
  }

  Param& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ValidationError("unknown parameter '" + name + "'");
    return it->second;
  }
  const Param& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ValidationError("unknown parameter '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  std::map<std::string, Param>& params() { return params_; }
  const std::map<std::string, Param>& params() const { return params_; }
  std::map<std::string, BatchNormState>& norms() { return norms_; }
  const std::map<std::string, BatchNormState>& norms() const { return norms_; }

  /// All parameters in name order.
  std::vector<Param*> list() {
    std::vector<Param*> out;
    for (auto& [_, p] : params_) out.push_back(&p);
    return out;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, p] : params_) p.zero_grad();
  }

 private:
  std::map<std::string, Param> params_;
  std::map<std::string, BatchNormState> norms_;
};

struct NormParams {
  Param* scale = nullptr;
  Param* shift = nullptr;
  BatchNormState* state = nullptr;
};

struct GraphCorrelationParams {
  Param* linear = nullptr;  // [C_out, C_in, 1]
  NormParams norm;
  Param* query_w = nullptr;  // [C_out, C_out, 1]
  Param* query_b = nullptr;
  Param* key_w = nullptr;
  Param* key_b = nullptr;
  Param* alpha = nullptr;  // [S]
  std::size_t subsets = 1;
};

struct SuperNodeParams {
  Param* ln_scale = nullptr;  // [C_in]
  Param* ln_shift = nullptr;
  Param* linear_w = nullptr;  // [C_in, C_in, 1]
  Param* linear_b = nullptr;
  Param* u = nullptr;     // [C_in, E]
  Param* beta = nullptr;  // [E]
  Param* out_w = nullptr;  // [C_out, C_in, 1]
  Param* out_b = nullptr;
};

/// Y = relu(W X A); A is either the fixed normalized adjacency or a trained graph.
struct GraphBaselineParams {
  Param* weight = nullptr;  // [C_out, C_in, 1]
  Param* graph = nullptr;   // [N, N] when learnable
  Tensor fixed_graph;       // normalized adjacency otherwise
};

struct PtcnBranch {
  Param* weight = nullptr;  // [C/L, C/L, K]
  NormParams norm;
  std::size_t kernel = 1;
};

struct PtcnParams {
  std::vector<PtcnBranch> branches;
};

struct BlockParams {
  std::size_t c_in = 0, c_out = 0;
  SpatialMode spatial = SpatialMode::GraphCorrelation;
  GraphCorrelationParams gc;
  GraphBaselineParams baseline;
  std::optional<SuperNodeParams> super_node;
  Param* dyn_graph = nullptr;  // P: [C_out, N, N]
  std::vector<PtcnParams> ptcn;
  Param* residual_w = nullptr;  // [C_out, C_in, 1], temporal stride 2
  NormParams residual_norm;
};

/// Spatial graphs captured during a forward pass, one entry per block.
struct ForwardTrace {
  std::vector<Tensor> adjacency;   // graph correlation: [B, S, N, N] after tanh
  std::vector<Tensor> similarity;  // super node: [B, E, T, N] after tanh
};

struct ForwardOptions {
  NormMode mode = NormMode::Eval;
  ForwardTrace* trace = nullptr;
  /// Test hook: non-zero scales the gradient through the pooled features by
  /// (1 + grad_fault) without changing the forward value.
  double grad_fault = 0.0;
};

inline Var bind(Tape& tape, Param* p) { return p ? tape.param(*p) : Var{}; }

inline Var batchnorm(Var x, const NormParams& n, NormMode mode) {
  Tape& t = x.tape();
  return ad::batchnorm(x, t.param(*n.scale), t.param(*n.shift), *n.state, mode);
}

/// Dynamic per-sample graphs: A[b,s] = tanh(alpha[s] * mean_{c,t} q[b,c,s,t,i] k[b,c,s,t,j]),
/// out[b,c,s,t,i] = sum_j xhat[b,c,s,t,j] A[b,s,i,j].
inline Var graph_correlation_forward(Var x, const GraphCorrelationParams& p, NormMode mode, Tensor* adjacency = nullptr) {
  Tape& t = x.tape();
  Tape::Scope scope(t, "gc");
  const std::size_t batch = x.shape()[0], frames = x.shape()[2], nodes = x.shape()[3];
  const std::size_t c_out = p.linear->value.dim(0), s = p.subsets;
  if (c_out % s) throw ValidationError("graph correlation: C_out not divisible by S");
  const std::size_t c_mid = c_out / s;
  Var xh = batchnorm(ad::temporal_conv(x, t.param(*p.linear), Var{}, 1, 0), p.norm, mode);
  Var q = ad::temporal_conv(xh, t.param(*p.query_w), bind(t, p.query_b), 1, 0);
  Var k = ad::temporal_conv(xh, t.param(*p.key_w), bind(t, p.key_b), 1, 0);
  const Shape split{batch, c_mid, s, frames, nodes};
  Var a = ad::contract("bcsti,bcstj->bsij", ad::reshape(q, split), ad::reshape(k, split));
  a = ad::scale(a, 1.0 / static_cast<double>(c_mid * frames));
  a = ad::tanh(ad::scale_axis(a, t.param(*p.alpha), 1));
  if (adjacency) *adjacency = a.value();
  Var out = ad::contract("bcstj,bsij->bcsti", ad::reshape(xh, split), a);
  return ad::reshape(out, {batch, c_out, frames, nodes});
}

/// Virtual nodes u exchange messages with every joint:
/// A[b,e,t,n] = tanh(beta[e] * sum_c u[c,e] x'[b,c,t,n]), y = sum_e u[c,e] A[b,e,t,n].
inline Var super_node_forward(Var x, const SuperNodeParams& p, Tensor* similarity = nullptr) {
  Tape& t = x.tape();
  Tape::Scope scope(t, "sn");
  Var ln = ad::layernorm(x, 1, t.param(*p.ln_scale), t.param(*p.ln_shift));
  Var xp = ad::temporal_conv(ln, t.param(*p.linear_w), bind(t, p.linear_b), 1, 0);
  Var u = t.param(*p.u);
  Var a = ad::contract("ce,bctn->betn", u, xp);
  a = ad::tanh(ad::scale_axis(a, t.param(*p.beta), 1));
  if (similarity) *similarity = a.value();
  Var y = ad::contract("ce,betn->bctn", u, a);
  return ad::temporal_conv(y, t.param(*p.out_w), bind(t, p.out_b), 1, 0);
}

/// y[b,c,t,n] = x[b,c,t,n] + sum_m x[b,c,t,m] P[c,m,n].
inline Var dynamic_aggregation_forward(Var x, Var graph) {
  Tape::Scope scope(x.tape(), "dyn");
  return ad::add(x, ad::contract("bctm,cmn->bctn", x, graph));
}

/// Y = relu(W X A) applied at every frame.
inline Var gcn_baseline_forward(Var x, Var weight, Var graph) {
  Tape::Scope scope(x.tape(), "gcn");
  Var wx = ad::temporal_conv(x, weight, Var{}, 1, 0);
  return ad::relu(ad::contract("bctm,mn->bctn", wx, graph));
}

inline Var learnable_graph_baseline_forward(Var x, Var weight, Var learned_graph) {
  return gcn_baseline_forward(x, weight, learned_graph);
}

/// Channel-split temporal convolutions with per-branch kernels, each followed by
/// batch norm; branches are concatenated, then identity residual (stride 1) and relu.
inline Var ptcn_forward(Var x, const PtcnParams& p, std::size_t stride, NormMode mode) {
  Tape& t = x.tape();
  const std::size_t channels = x.shape()[1], branches = p.branches.size();
  if (channels % branches) throw ValidationError("ptcn: channels not divisible by branch count");
  const std::size_t width = channels / branches;
  std::vector<Var> parts;
  for (std::size_t l = 0; l < branches; ++l) {
    const auto& br = p.branches[l];
    Var xs = branches == 1 ? x : ad::slice_channels(x, l * width, (l + 1) * width);
    Var c = ad::temporal_conv(xs, t.param(*br.weight), Var{}, static_cast<int>(stride),
                              static_cast<int>((br.kernel - 1) / 2));
    parts.push_back(batchnorm(c, br.norm, mode));
  }
  Var out = branches == 1 ? parts[0] : ad::concat_channels(parts);
  if (stride == 1 && out.shape() == x.shape()) out = ad::add(out, x);
  return ad::relu(out);
}

inline Var block_forward(Var x, const BlockParams& p, const ModelConfig& cfg, NormMode mode, std::size_t block_index,
                         ForwardTrace* trace = nullptr) {
  Tape& t = x.tape();
  Tape::Scope scope(t, "block" + std::to_string(block_index));
  Var spatial;
  if (p.spatial == SpatialMode::GraphCorrelation) {
    Tensor adjacency;
    spatial = graph_correlation_forward(x, p.gc, mode, trace ? &adjacency : nullptr);
    if (trace) trace->adjacency.push_back(std::move(adjacency));
  } else if (p.spatial == SpatialMode::GcnBaseline) {
    spatial = gcn_baseline_forward(x, t.param(*p.baseline.weight), t.constant(p.baseline.fixed_graph, "A_norm"));
  } else {
    spatial = learnable_graph_baseline_forward(x, t.param(*p.baseline.weight), t.param(*p.baseline.graph));
  }
  if (p.super_node) {
    Tensor similarity;
    spatial = ad::add(spatial, super_node_forward(x, *p.super_node, trace ? &similarity : nullptr));
    if (trace) trace->similarity.push_back(std::move(similarity));
  }
  Var h = p.dyn_graph ? dynamic_aggregation_forward(spatial, t.param(*p.dyn_graph)) : spatial;
  h = ad::relu(h);
  if (cfg.use_ptcn) {
    for (std::size_t i = 0; i < p.ptcn.size(); ++i) {
      Tape::Scope ps(t, "ptcn" + std::to_string(i));
      h = ptcn_forward(h, p.ptcn[i], i + 1 == p.ptcn.size() ? 2 : 1, mode);
    }
  } else {
    h = ad::subsample_time(h, 2);
  }
  Var res;
  {
    Tape::Scope rs(t, "res");
    res = batchnorm(ad::temporal_conv(x, t.param(*p.residual_w), Var{}, 2, 0), p.residual_norm, mode);
  }
  return ad::relu(ad::add(h, res));
}

namespace detail {

inline Var scaled_gradient(Var x, double factor) {
  return x.tape().record("grad_fault", x.value(), {x}, [x, factor](Tape& t, std::size_t self) {
    t.accumulate(x.id(), t.grad(self) * factor);
  });
}

}  // namespace detail

/// One top-|weight| entry of a summarized N x N graph.
struct GraphEdge {
  std::size_t from = 0, to = 0;
  double weight = 0.0;
};

/// The ceil(fraction * N^2) entries of `graph` ([N,N], or [S,N,N] averaged over S)
/// with the largest |weight|, sorted descending.
inline std::vector<GraphEdge> top_edges(const Tensor& graph, double fraction = 0.05) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ValidationError("top_edges: fraction must lie in (0, 1]");
  Tensor g = graph;
  if (graph.rank() == 3) {
    g = contract("sij->ij", graph) * (1.0 / static_cast<double>(graph.dim(0)));
  } else if (graph.rank() != 2) {
    throw ShapeError("top_edges: expected [N,N] or [S,N,N], got " + shape_str(graph.shape()));
  }
  const std::size_t n = g.dim(0);
  if (g.dim(1) != n) throw ShapeError("top_edges: graph must be square");
  std::vector<GraphEdge> edges;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) edges.push_back({i, j, g[i * n + j]});
  std::stable_sort(edges.begin(), edges.end(),
                   [](const GraphEdge& a, const GraphEdge& b) { return std::abs(a.weight) > std::abs(b.weight); });
  const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n * n) - 1e-9));
  edges.resize(std::min(std::max<std::size_t>(keep, 1), edges.size()));
  return edges;
}

class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed, const SkeletonLayout& layout = default_layout()) : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (layout.node_count != cfg_.num_nodes) throw ValidationError("model num_nodes does not match skeleton layout");
    std::mt19937_64 rng(seed);
    const Tensor a_norm = normalized_adjacency(physical_adjacency(layout));
    std::size_t c_in = cfg_.in_channels;
    for (std::size_t b = 0; b < cfg_.num_blocks; ++b) {
      blocks_.push_back(make_block(b, c_in, cfg_.block_channels[b], a_norm, rng));
      c_in = cfg_.block_channels[b];
    }
    const double bound = 0.1 / std::sqrt(static_cast<double>(c_in));
    head_w_ = &store_.add("head.weight", Tensor::uniform({cfg_.num_classes, c_in}, -bound, bound, rng), true);
    head_b_ = &store_.add("head.bias", Tensor::zeros({cfg_.num_classes}), false);
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  const std::vector<BlockParams>& blocks() const { return blocks_; }

  /// x: [B, C_in, T, N] -> logits [B, num_classes].
  Var forward(Tape& tape, const Tensor& x, const ForwardOptions& opt = {}) {
    if (x.rank() != 4 || x.dim(1) != cfg_.in_channels || x.dim(3) != cfg_.num_nodes) {
      throw ShapeError("model input must be [B, " + std::to_string(cfg_.in_channels) + ", T, " +
                       std::to_string(cfg_.num_nodes) + "], got " + shape_str(x.shape()));
    }
    Var h = tape.constant(x);
    for (std::size_t b = 0; b < blocks_.size(); ++b) h = block_forward(h, blocks_[b], cfg_, opt.mode, b, opt.trace);
    Tape::Scope scope(tape, "head");
    Var pooled = ad::global_avg_pool(h);
    if (opt.grad_fault != 0.0) pooled = detail::scaled_gradient(pooled, 1.0 + opt.grad_fault);
    Var logits = ad::contract("bc,kc->bk", pooled, tape.param(*head_w_));
    return ad::add_bias(logits, tape.param(*head_b_), 1);
  }

  /// Per-module parameter totals keyed "block<i>.<module>" and "head".
  std::map<std::string, std::size_t> param_breakdown() const {
    std::map<std::string, std::size_t> out;
    for (const auto& [name, p] : store_.params()) {
      const auto first = name.find('.');
      const auto second = name.find('.', first + 1);
      const std::string key = name.rfind("head", 0) == 0 ? "head" : name.substr(0, second);
      out[key] += p.value.size();
    }
    return out;
  }

  std::size_t param_count() const { return store_.count(); }

  /// Moves every parameter and normalization buffer off its initial value
  /// (P away from zero, gates away from one) so all gradient paths are exercised.
  void randomize(std::uint64_t seed, double spread = 0.2) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> jitter(-spread, spread);
    for (auto& [_, p] : store_.params())
      for (auto& v : p.value.storage()) v += jitter(rng);
    std::uniform_real_distribution<double> mean(-0.3, 0.3), var(0.5, 1.5);
    for (auto& [_, n] : store_.norms()) {
      for (auto& v : n.running_mean.storage()) v = mean(rng);
      for (auto& v : n.running_var.storage()) v = var(rng);
    }
  }

 private:
  static double fan_bound(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

  Param* conv(const std::string& name, std::size_t c_out, std::size_t c_in, std::size_t k, std::mt19937_64& rng) {
    const double b = fan_bound(c_in * k);
    return &store_.add(name, Tensor::uniform({c_out, c_in, k}, -b, b, rng), true);
  }
  Param* bias(const std::string& name, std::size_t c_out, std::size_t fan_in, std::mt19937_64& rng) {
    const double b = fan_bound(fan_in);
    return &store_.add(name, Tensor::uniform({c_out}, -b, b, rng), false);
  }
  NormParams norm(const std::string& name, std::size_t c) {
    NormParams n;
    n.scale = &store_.add(name + ".scale", Tensor::ones({c}), false);
    n.shift = &store_.add(name + ".shift", Tensor::zeros({c}), false);
    n.state = &store_.add_norm(name, c);
    return n;
  }

  BlockParams make_block(std::size_t index, std::size_t c_in, std::size_t c_out, const Tensor& a_norm, std::mt19937_64& rng) {
    const std::string pre = "block" + std::to_string(index) + ".";
    const std::size_t n = cfg_.num_nodes;
    BlockParams p;
    p.c_in = c_in;
    p.c_out = c_out;
    p.spatial = cfg_.spatial_mode;
    if (cfg_.spatial_mode == SpatialMode::GraphCorrelation) {
      auto& g = p.gc;
      g.subsets = cfg_.num_subsets;
      g.linear = conv(pre + "gc.linear.weight", c_out, c_in, 1, rng);
      g.norm = norm(pre + "gc.bn", c_out);
      g.query_w = conv(pre + "gc.query.weight", c_out, c_out, 1, rng);
      g.query_b = bias(pre + "gc.query.bias", c_out, c_out, rng);
      g.key_w = conv(pre + "gc.key.weight", c_out, c_out, 1, rng);
      g.key_b = bias(pre + "gc.key.bias", c_out, c_out, rng);
      g.alpha = &store_.add(pre + "gc.alpha", Tensor::ones({cfg_.num_subsets}), false);
    } else {
      p.baseline.weight = conv(pre + "gcn.weight", c_out, c_in, 1, rng);
      if (cfg_.spatial_mode == SpatialMode::LearnableGraphBaseline) {
        p.baseline.graph = &store_.add(pre + "gcn.graph", a_norm, true);
      } else {
        p.baseline.fixed_graph = a_norm;
      }
    }
    if (cfg_.use_super_node) {
      SuperNodeParams s;
      const std::size_t e = cfg_.num_super_nodes;
      s.ln_scale = &store_.add(pre + "sn.ln.scale", Tensor::ones({c_in}), false);
      s.ln_shift = &store_.add(pre + "sn.ln.shift", Tensor::zeros({c_in}), false);
      s.linear_w = conv(pre + "sn.linear.weight", c_in, c_in, 1, rng);
      s.linear_b = bias(pre + "sn.linear.bias", c_in, c_in, rng);
      const double ub = fan_bound(c_in);
      s.u = &store_.add(pre + "sn.u", Tensor::uniform({c_in, e}, -ub, ub, rng), true);
      s.beta = &store_.add(pre + "sn.beta", Tensor::ones({e}), false);
      s.out_w = conv(pre + "sn.out.weight", c_out, c_in, 1, rng);
      s.out_b = bias(pre + "sn.out.bias", c_out, c_in, rng);
      p.super_node = s;
    }
    if (cfg_.use_dynamic_aggregation) p.dyn_graph = &store_.add(pre + "dyn.P", Tensor::zeros({c_out, n, n}), true);
    if (cfg_.use_ptcn) {
      const std::size_t width = c_out / cfg_.ptcn_kernels.size();
      for (std::size_t i = 0; i < cfg_.ptcn_per_block; ++i) {
        PtcnParams tp;
        for (std::size_t l = 0; l < cfg_.ptcn_kernels.size(); ++l) {
          const std::string bp = pre + "ptcn" + std::to_string(i) + ".branch" + std::to_string(l);
          PtcnBranch br;
          br.kernel = cfg_.ptcn_kernels[l];
          br.weight = conv(bp + ".weight", width, width, br.kernel, rng);
          br.norm = norm(bp + ".bn", width);
          tp.branches.push_back(br);
        }
        p.ptcn.push_back(std::move(tp));
      }
    }
    p.residual_w = conv(pre + "res.weight", c_out, c_in, 1, rng);
    p.residual_norm = norm(pre + "res.bn", c_out);
    return p;
  }

  ModelConfig cfg_;
  ParamStore store_;
  std::vector<BlockParams> blocks_;
  Param* head_w_ = nullptr;
  Param* head_b_ = nullptr;
};

}  // namespace slr
