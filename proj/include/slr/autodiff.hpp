#pragma once

// Reverse-mode differentiation over a recorded operation tape.
//
// A Tape owns every intermediate value of one forward pass. Ops append a node
// holding the output value plus a closure that pushes the node's gradient back
// to its inputs. Tape::backward walks the nodes in reverse. Param leaves
// borrow the parameter's value and accumulate straight into Param::grad.
// A tape is single-threaded and single-use.

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "slr/error.hpp"
#include "slr/kernels.hpp"
#include "slr/tensor.hpp"

namespace slr {

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const {
    if (!tape_) throw Error("use of an unbound Var");
    return *tape_;
  }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf holding data that receives no gradient.
  Var constant(Tensor value, std::string label = "input") {
    require_finite(value, label);
    Node n;
    n.label = std::move(label);
    n.owned = std::move(value);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  /// Leaf that borrows `p.value`; backward adds into `p.grad`.
  Var param(Param& p) {
    require_finite(p.value, "parameter " + p.name);
    Node n;
    n.label = p.name;
    n.borrowed = &p.value;
    n.param = &p;
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  /// Appends an op output. `fn` is kept only if some input needs a gradient.
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(op, std::move(value), std::vector<Var>(inputs), std::move(fn));
  }

  Var record(std::string_view op, Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
    Node n;
    n.label = scope_.empty() ? std::string(op) : scope_ + "/" + std::string(op);
    require_finite(value, n.label);
    for (const Var& v : inputs) {
      if (&v.tape() != this) throw Error("op '" + n.label + "' mixes vars from different tapes");
      n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
    }
    n.owned = std::move(value);
    if (n.requires_grad && grad_enabled_) n.fn = std::move(fn);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.borrowed ? *n.borrowed : n.owned;
  }
  const Tensor& grad(std::size_t id) const { return nodes_.at(id).grad; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const std::string& label(std::size_t id) const { return nodes_.at(id).label; }
  std::size_t size() const { return nodes_.size(); }

  /// Adds `g` into the gradient of node `id` (no-op for constants).
  void accumulate(std::size_t id, const Tensor& g) {
    Node& n = nodes_.at(id);
    if (!n.requires_grad) return;
    if (n.param) {
      n.param->grad += g;
      return;
    }
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }
  void accumulate(std::size_t id, Tensor&& g) {
    Node& n = nodes_.at(id);
    if (!n.requires_grad) return;
    if (n.param) {
      n.param->grad += g;
      return;
    }
    if (!n.has_grad) {
      n.grad = std::move(g);
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  /// Propagates d(loss)/d(node) to every Param reachable from `loss`.
  void backward(Var loss) {
    if (!loss.valid() || &loss.tape() != this || loss.id() >= nodes_.size()) {
      throw Error("backward: loss was not recorded on this tape");
    }
    if (consumed_) throw Error("backward: tape already consumed by a previous backward pass");
    if (!grad_enabled_) throw Error("backward: tape was recorded with gradients disabled");
    if (value(loss.id()).size() != 1) throw ShapeError("backward: loss must be a scalar");
    if (!nodes_[loss.id()].requires_grad) throw Error("backward: loss does not depend on any parameter");
    consumed_ = true;
    accumulate(loss.id(), Tensor::ones(value(loss.id()).shape()));
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad || !n.fn) continue;
      n.fn(*this, i);
      n.grad = Tensor();
      n.has_grad = false;
    }
  }

  /// When disabled, ops keep values only (inference).
  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

  /// ReLU activation pattern, one mask per relu op in recording order.
  using ActivationPattern = std::vector<std::vector<unsigned char>>;

  /// Records every relu mask of this tape into `sink`.
  void capture_activations(ActivationPattern* sink) { capture_ = sink; }

  /// Replays `pattern` instead of recomputing relu masks, pinning the forward
  /// pass to one linear piece. Counts positions where the live sign disagrees.
  void replay_activations(const ActivationPattern* pattern) {
    replay_ = pattern;
    replay_index_ = 0;
    replay_flips_ = 0;
  }
  std::size_t activation_flips() const { return replay_flips_; }

  /// Mask for the next relu op given its input.
  std::vector<unsigned char> relu_mask(const Tensor& x) {
    std::vector<unsigned char> mask(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) mask[i] = x[i] > 0.0;
    if (replay_) {
      if (replay_index_ >= replay_->size() || (*replay_)[replay_index_].size() != mask.size()) {
        throw Error("replay_activations: pattern does not match the recorded relu ops");
      }
      const auto& fixed = (*replay_)[replay_index_++];
      for (std::size_t i = 0; i < mask.size(); ++i) replay_flips_ += fixed[i] != mask[i];
      mask = fixed;
    }
    if (capture_) capture_->push_back(mask);
    return mask;
  }

  /// RAII name prefix for op labels, used in non-finite diagnostics.
  class Scope {
   public:
    Scope(Tape& t, std::string_view name) : tape_(t), saved_(t.scope_) {
      tape_.scope_ = saved_.empty() ? std::string(name) : saved_ + "." + std::string(name);
    }
    ~Scope() { tape_.scope_ = saved_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape& tape_;
    std::string saved_;
  };

 private:
  struct Node {
    std::string label;
    Tensor owned;
    const Tensor* borrowed = nullptr;
    Param* param = nullptr;
    bool requires_grad = false;
    bool has_grad = false;
    Tensor grad;
    BackwardFn fn;
  };

  std::vector<Node> nodes_;
  std::string scope_;
  bool consumed_ = false;
  bool grad_enabled_ = true;
  ActivationPattern* capture_ = nullptr;
  const ActivationPattern* replay_ = nullptr;
  std::size_t replay_index_ = 0;
  std::size_t replay_flips_ = 0;
};

inline const Tensor& Var::value() const { return tape().value(id_); }

/// Differentiable ops. Each records its output and a backward closure.
namespace ad {

inline Var add(Var a, Var b) {
  a.value().require_same_shape(b.value(), "add");
  return a.tape().record("add", a.value() + b.value(), {a, b}, [a, b](Tape& t, std::size_t self) {
    t.accumulate(a.id(), t.grad(self));
    t.accumulate(b.id(), t.grad(self));
  });
}

inline Var sum(Var a) {
  return a.tape().record("sum", Tensor::scalar(a.value().sum()), {a}, [a](Tape& t, std::size_t self) {
    t.accumulate(a.id(), Tensor(t.value(a.id()).shape(), t.grad(self).item()));
  });
}

inline Var scale(Var a, double s) {
  return a.tape().record("scale", a.value() * s, {a}, [a, s](Tape& t, std::size_t self) {
    t.accumulate(a.id(), t.grad(self) * s);
  });
}

/// Elementwise product of equal-shape tensors.
inline Var mul(Var a, Var b) {
  a.value().require_same_shape(b.value(), "mul");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  return a.tape().record("mul", std::move(y), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(a.id())) {
      Tensor ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= t.value(b.id())[i];
      t.accumulate(a.id(), std::move(ga));
    }
    if (t.requires_grad(b.id())) {
      Tensor gb = g;
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= t.value(a.id())[i];
      t.accumulate(b.id(), std::move(gb));
    }
  });
}

/// y[..., k, ...] = x[..., k, ...] * v[k] along `axis`.
inline Var scale_axis(Var x, Var v, std::size_t axis) {
  std::size_t outer, len, inner;
  detail::axis_extents(x.value(), axis, outer, len, inner);
  if (v.value().size() != len) throw ShapeError("scale_axis: vector length does not match axis extent");
  Tensor y = x.value();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < len; ++k)
      for (std::size_t i = 0; i < inner; ++i) y[(o * len + k) * inner + i] *= v.value()[k];
  return x.tape().record("scale_axis", std::move(y), {x, v}, [x, v, axis, outer, len, inner](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(x.id());
    const Tensor& vv = t.value(v.id());
    if (t.requires_grad(x.id())) {
      Tensor gx = g;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < len; ++k)
          for (std::size_t i = 0; i < inner; ++i) gx[(o * len + k) * inner + i] *= vv[k];
      t.accumulate(x.id(), std::move(gx));
    }
    if (t.requires_grad(v.id())) {
      Tensor gv(vv.shape());
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < len; ++k)
          for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t at = (o * len + k) * inner + i;
            gv[k] += g[at] * xv[at];
          }
      t.accumulate(v.id(), std::move(gv));
    }
  });
}

/// y = x + b broadcast along `axis` (b has that axis' extent).
inline Var add_bias(Var x, Var b, std::size_t axis) {
  std::size_t outer, len, inner;
  detail::axis_extents(x.value(), axis, outer, len, inner);
  if (b.value().size() != len) throw ShapeError("add_bias: bias length does not match axis extent");
  Tensor y = x.value();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < len; ++k)
      for (std::size_t i = 0; i < inner; ++i) y[(o * len + k) * inner + i] += b.value()[k];
  return x.tape().record("add_bias", std::move(y), {x, b}, [x, b, outer, len, inner](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    t.accumulate(x.id(), g);
    if (t.requires_grad(b.id())) {
      Tensor gb(t.value(b.id()).shape());
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < len; ++k)
          for (std::size_t i = 0; i < inner; ++i) gb[k] += g[(o * len + k) * inner + i];
      t.accumulate(b.id(), std::move(gb));
    }
  });
}

inline Var tanh(Var x) {
  return x.tape().record("tanh", slr::tanh(x.value()), {x}, [x](Tape& t, std::size_t self) {
    const Tensor& y = t.value(self);
    Tensor g = t.grad(self);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 - y[i] * y[i];
    t.accumulate(x.id(), std::move(g));
  });
}

inline Var relu(Var x) {
  auto mask = std::make_shared<const std::vector<unsigned char>>(x.tape().relu_mask(x.value()));
  Tensor y = x.value();
  for (std::size_t i = 0; i < y.size(); ++i)
    if (!(*mask)[i]) y[i] = 0.0;
  return x.tape().record("relu", std::move(y), {x}, [x, mask](Tape& t, std::size_t self) {
    Tensor g = t.grad(self);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!(*mask)[i]) g[i] = 0.0;
    t.accumulate(x.id(), std::move(g));
  });
}

inline Var softmax(Var x, std::size_t axis) {
  return x.tape().record("softmax", slr::softmax(x.value(), axis), {x}, [x, axis](Tape& t, std::size_t self) {
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad(self);
    std::size_t outer, len, inner;
    detail::axis_extents(y, axis, outer, len, inner);
    Tensor gx(y.shape());
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * len * inner + i;
        double dot = 0.0;
        for (std::size_t j = 0; j < len; ++j) dot += g[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) gx[base + j * inner] = y[base + j * inner] * (g[base + j * inner] - dot);
      }
    t.accumulate(x.id(), std::move(gx));
  });
}

inline Var log_softmax(Var x, std::size_t axis) {
  return x.tape().record("log_softmax", slr::log_softmax(x.value(), axis), {x}, [x, axis](Tape& t, std::size_t self) {
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad(self);
    std::size_t outer, len, inner;
    detail::axis_extents(y, axis, outer, len, inner);
    Tensor gx(y.shape());
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * len * inner + i;
        double gs = 0.0;
        for (std::size_t j = 0; j < len; ++j) gs += g[base + j * inner];
        for (std::size_t j = 0; j < len; ++j)
          gx[base + j * inner] = g[base + j * inner] - std::exp(y[base + j * inner]) * gs;
      }
    t.accumulate(x.id(), std::move(gx));
  });
}

inline Var reshape(Var x, Shape shape) {
  return x.tape().record("reshape", x.value().reshaped(std::move(shape)), {x}, [x](Tape& t, std::size_t self) {
    t.accumulate(x.id(), t.grad(self).reshaped(t.value(x.id()).shape()));
  });
}

/// Generalized contraction; the gradient of operand k is itself a contraction
/// of the output gradient with the remaining operands.
inline Var contract(std::string_view spec_text, const std::vector<Var>& inputs) {
  auto spec = ContractSpec::parse(spec_text);
  std::vector<const Tensor*> values;
  for (const Var& v : inputs) values.push_back(&v.value());
  Tensor y = slr::contract(spec, values);
  return inputs.at(0).tape().record("contract", std::move(y), inputs, [spec, inputs](Tape& t, std::size_t self) {
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      if (!t.requires_grad(inputs[k].id())) continue;
      // Indices of operand k that neither the output nor the other operands
      // carry were summed out; their gradient is a broadcast.
      std::string carried = spec.output;
      for (std::size_t j = 0; j < inputs.size(); ++j)
        if (j != k) carried += spec.inputs[j];
      const std::string& own = spec.inputs[k];
      std::string reduced;
      for (char c : own)
        if (carried.find(c) != std::string::npos) reduced += c;

      ContractSpec back;
      back.inputs.push_back(spec.output);
      std::vector<const Tensor*> ops{&t.grad(self)};
      for (std::size_t j = 0; j < inputs.size(); ++j) {
        if (j == k) continue;
        back.inputs.push_back(spec.inputs[j]);
        ops.push_back(&t.value(inputs[j].id()));
      }
      back.output = reduced;
      Tensor g = slr::contract(back, ops);
      if (reduced == own) {
        t.accumulate(inputs[k].id(), std::move(g));
        continue;
      }
      const Tensor& xv = t.value(inputs[k].id());
      Tensor full(xv.shape());
      const auto strides = row_major_strides(g.shape());
      std::vector<std::size_t> map(own.size(), 0);
      std::vector<bool> kept(own.size(), false);
      for (std::size_t a = 0; a < own.size(); ++a) {
        auto p = reduced.find(own[a]);
        if (p != std::string::npos) {
          map[a] = strides[p];
          kept[a] = true;
        }
      }
      std::vector<std::size_t> idx(own.size(), 0);
      for (std::size_t flat = 0; flat < full.size(); ++flat) {
        std::size_t src = 0;
        for (std::size_t a = 0; a < own.size(); ++a)
          if (kept[a]) src += idx[a] * map[a];
        full[flat] = g[src];
        for (std::size_t a = own.size(); a-- > 0;) {
          if (++idx[a] < xv.shape()[a]) break;
          idx[a] = 0;
        }
      }
      t.accumulate(inputs[k].id(), std::move(full));
    }
  });
}

inline Var contract(std::string_view spec, Var a, Var b) { return contract(spec, std::vector<Var>{a, b}); }

inline Var matmul(Var a, Var b) { return contract("ik,kj->ij", a, b); }

/// Temporal convolution; pass an invalid Var for `bias` to omit it.
inline Var temporal_conv(Var x, Var w, Var bias, int stride, int padding) {
  const bool has_bias = bias.valid();
  Tensor y = slr::temporal_conv(x.value(), w.value(), has_bias ? &bias.value() : nullptr, stride, padding);
  std::vector<Var> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return x.tape().record("temporal_conv", std::move(y), inputs,
                         [x, w, bias, has_bias, stride, padding](Tape& t, std::size_t self) {
                           const Tensor& xv = t.value(x.id());
                           const Tensor& wv = t.value(w.id());
                           Tensor gx, gw, gb;
                           const bool need_x = t.requires_grad(x.id());
                           const bool need_w = t.requires_grad(w.id());
                           const bool need_b = has_bias && t.requires_grad(bias.id());
                           if (need_x) gx = Tensor(xv.shape());
                           if (need_w) gw = Tensor(wv.shape());
                           if (need_b) gb = Tensor(t.value(bias.id()).shape());
                           slr::temporal_conv_backward(xv, wv, stride, padding, t.grad(self), need_x ? &gx : nullptr,
                                                       need_w ? &gw : nullptr, need_b ? &gb : nullptr);
                           if (need_x) t.accumulate(x.id(), std::move(gx));
                           if (need_w) t.accumulate(w.id(), std::move(gw));
                           if (need_b) t.accumulate(bias.id(), std::move(gb));
                         });
}

inline Var batchnorm(Var x, Var scale, Var shift, BatchNormState& state, NormMode mode) {
  auto cache = std::make_shared<NormCache>();
  Tensor y = slr::batchnorm(x.value(), scale.value(), shift.value(), state, mode, cache.get());
  return x.tape().record("batchnorm", std::move(y), {x, scale, shift}, [x, scale, shift, cache](Tape& t, std::size_t self) {
    Tensor gx, gs, gb;
    const bool nx = t.requires_grad(x.id()), ns = t.requires_grad(scale.id()), nb = t.requires_grad(shift.id());
    if (nx) gx = Tensor(t.value(x.id()).shape());
    if (ns) gs = Tensor(t.value(scale.id()).shape());
    if (nb) gb = Tensor(t.value(shift.id()).shape());
    slr::batchnorm_backward(t.grad(self), t.value(x.id()), t.value(scale.id()), *cache, nx ? &gx : nullptr,
                            ns ? &gs : nullptr, nb ? &gb : nullptr);
    if (nx) t.accumulate(x.id(), std::move(gx));
    if (ns) t.accumulate(scale.id(), std::move(gs));
    if (nb) t.accumulate(shift.id(), std::move(gb));
  });
}

inline Var layernorm(Var x, std::size_t axis, Var scale, Var shift, double eps = 1e-5) {
  auto cache = std::make_shared<NormCache>();
  Tensor y = slr::layernorm(x.value(), axis, scale.value(), shift.value(), eps, cache.get());
  return x.tape().record("layernorm", std::move(y), {x, scale, shift},
                         [x, scale, shift, axis, cache](Tape& t, std::size_t self) {
                           Tensor gx, gs, gb;
                           const bool nx = t.requires_grad(x.id()), ns = t.requires_grad(scale.id()),
                                      nb = t.requires_grad(shift.id());
                           if (nx) gx = Tensor(t.value(x.id()).shape());
                           if (ns) gs = Tensor(t.value(scale.id()).shape());
                           if (nb) gb = Tensor(t.value(shift.id()).shape());
                           slr::layernorm_backward(t.grad(self), axis, t.value(scale.id()), *cache, nx ? &gx : nullptr,
                                                   ns ? &gs : nullptr, nb ? &gb : nullptr);
                           if (nx) t.accumulate(x.id(), std::move(gx));
                           if (ns) t.accumulate(scale.id(), std::move(gs));
                           if (nb) t.accumulate(shift.id(), std::move(gb));
                         });
}

/// Channels [begin, end) of x[B, C, ...].
inline Var slice_channels(Var x, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  const std::size_t batch = xv.dim(0), channels = xv.dim(1), inner = xv.size() / (batch * channels);
  if (begin >= end || end > channels) throw ShapeError("slice_channels: bad range");
  Shape shape = xv.shape();
  shape[1] = end - begin;
  Tensor y(shape);
  for (std::size_t b = 0; b < batch; ++b)
    std::copy_n(xv.raw() + (b * channels + begin) * inner, (end - begin) * inner, y.raw() + b * (end - begin) * inner);
  return x.tape().record("slice_channels", std::move(y), {x},
                         [x, begin, end, batch, channels, inner](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           Tensor gx(t.value(x.id()).shape());
                           for (std::size_t b = 0; b < batch; ++b)
                             std::copy_n(g.raw() + b * (end - begin) * inner, (end - begin) * inner,
                                         gx.raw() + (b * channels + begin) * inner);
                           t.accumulate(x.id(), std::move(gx));
                         });
}

/// Concatenates x_i[B, C_i, ...] along the channel axis, in order.
inline Var concat_channels(const std::vector<Var>& parts) {
  const Tensor& first = parts.at(0).value();
  const std::size_t batch = first.dim(0);
  const std::size_t inner = first.size() / (batch * first.dim(1));
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    if (v.rank() != first.rank() || v.dim(0) != batch || v.size() / (batch * v.dim(1)) != inner) {
      throw ShapeError("concat_channels: incompatible parts");
    }
    offsets.push_back(total);
    total += v.dim(1);
  }
  Shape shape = first.shape();
  shape[1] = total;
  Tensor y(shape);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    const std::size_t c = v.dim(1);
    for (std::size_t b = 0; b < batch; ++b)
      std::copy_n(v.raw() + b * c * inner, c * inner, y.raw() + (b * total + offsets[k]) * inner);
  }
  return parts[0].tape().record("concat_channels", std::move(y), parts,
                                [parts, offsets, total, batch, inner](Tape& t, std::size_t self) {
                                  const Tensor& g = t.grad(self);
                                  for (std::size_t k = 0; k < parts.size(); ++k) {
                                    if (!t.requires_grad(parts[k].id())) continue;
                                    Tensor gp(t.value(parts[k].id()).shape());
                                    const std::size_t c = gp.dim(1);
                                    for (std::size_t b = 0; b < batch; ++b)
                                      std::copy_n(g.raw() + (b * total + offsets[k]) * inner, c * inner,
                                                  gp.raw() + b * c * inner);
                                    t.accumulate(parts[k].id(), std::move(gp));
                                  }
                                });
}

/// Every `stride`-th frame of x[B, C, T, N], starting at frame 0.
inline Var subsample_time(Var x, std::size_t stride) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4 || stride < 1) throw ShapeError("subsample_time: expects [B,C,T,N] and stride >= 1");
  const std::size_t bc = xv.dim(0) * xv.dim(1), t_in = xv.dim(2), nodes = xv.dim(3);
  const std::size_t t_out = (t_in - 1) / stride + 1;
  Tensor y({xv.dim(0), xv.dim(1), t_out, nodes});
  for (std::size_t i = 0; i < bc; ++i)
    for (std::size_t t = 0; t < t_out; ++t)
      std::copy_n(xv.raw() + (i * t_in + t * stride) * nodes, nodes, y.raw() + (i * t_out + t) * nodes);
  return x.tape().record("subsample_time", std::move(y), {x}, [x, stride, bc, t_in, t_out, nodes](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor gx(t.value(x.id()).shape());
    for (std::size_t i = 0; i < bc; ++i)
      for (std::size_t tt = 0; tt < t_out; ++tt)
        std::copy_n(g.raw() + (i * t_out + tt) * nodes, nodes, gx.raw() + (i * t_in + tt * stride) * nodes);
    t.accumulate(x.id(), std::move(gx));
  });
}

/// Mean of x[B, C, ...] over every axis after the channel axis -> [B, C].
inline Var global_avg_pool(Var x) {
  const Tensor& xv = x.value();
  const std::size_t batch = xv.dim(0), channels = xv.dim(1), inner = xv.size() / (batch * channels);
  Tensor y({batch, channels});
  for (std::size_t i = 0; i < batch * channels; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < inner; ++j) s += xv[i * inner + j];
    y[i] = s / static_cast<double>(inner);
  }
  return x.tape().record("global_avg_pool", std::move(y), {x}, [x, inner](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor gx(t.value(x.id()).shape());
    for (std::size_t i = 0; i < g.size(); ++i)
      for (std::size_t j = 0; j < inner; ++j) gx[i * inner + j] = g[i] / static_cast<double>(inner);
    t.accumulate(x.id(), std::move(gx));
  });
}

/// Mean over the batch of -log_softmax(logits)[label].
inline Var cross_entropy(Var logits, const std::vector<std::size_t>& labels) {
  const Tensor& z = logits.value();
  if (z.rank() != 2 || z.dim(0) != labels.size()) throw ShapeError("cross_entropy: logits must be [B, K] with B labels");
  const std::size_t batch = z.dim(0), classes = z.dim(1);
  for (auto l : labels)
    if (l >= classes) throw ValidationError("cross_entropy: label " + std::to_string(l) + " >= class count");
  Tensor logp = slr::log_softmax(z, 1);
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) loss -= logp[b * classes + labels[b]];
  loss /= static_cast<double>(batch);
  return logits.tape().record("cross_entropy", Tensor::scalar(loss), {logits},
                              [logits, labels, logp, batch, classes](Tape& t, std::size_t self) {
                                const double g = t.grad(self).item() / static_cast<double>(batch);
                                Tensor gz(logp.shape());
                                for (std::size_t b = 0; b < batch; ++b)
                                  for (std::size_t k = 0; k < classes; ++k)
                                    gz[b * classes + k] = g * (std::exp(logp[b * classes + k]) - (k == labels[b] ? 1.0 : 0.0));
                                t.accumulate(logits.id(), std::move(gz));
                              });
}

}  // namespace ad
}  // namespace slr
