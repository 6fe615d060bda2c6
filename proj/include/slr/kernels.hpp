#pragma once

// Numeric kernels: pure functions of their inputs. Each differentiable kernel
// has a matching *_backward that maps an output gradient to input gradients.

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "slr/error.hpp"
#include "slr/tensor.hpp"

namespace slr {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

/// out.shape[i] = in.shape[perm[i]].
inline Tensor permute(const Tensor& in, const std::vector<std::size_t>& perm) {
  const std::size_t r = in.rank();
  if (perm.size() != r) throw ShapeError("permute: permutation rank mismatch");
  bool identity = true;
  for (std::size_t i = 0; i < r; ++i) identity = identity && perm[i] == i;
  if (identity) return in;

  const auto src_strides = row_major_strides(in.shape());
  Shape out_shape(r);
  std::vector<std::size_t> stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in.shape()[perm[i]];
    stride[i] = src_strides[perm[i]];
  }
  Tensor out(out_shape);
  const double* src = in.raw();
  double* dst = out.raw();
  const std::size_t inner = out_shape[r - 1];
  const std::size_t inner_stride = stride[r - 1];
  const std::size_t outer = out.size() / inner;
  std::vector<std::size_t> idx(r, 0);
  std::size_t soff = 0;
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < inner; ++j) *dst++ = src[soff + j * inner_stride];
    for (std::size_t ax = r - 1; ax-- > 0;) {
      if (++idx[ax] < out_shape[ax]) {
        soff += stride[ax];
        break;
      }
      soff -= stride[ax] * (out_shape[ax] - 1);
      idx[ax] = 0;
    }
  }
  return out;
}

inline void validate_term(std::string_view term, const std::string& where) {
  for (std::size_t i = 0; i < term.size(); ++i) {
    if (term[i] < 'a' || term[i] > 'z') {
      throw ValidationError("contract: invalid index character '" + std::string(1, term[i]) + "' in " + where);
    }
    if (term.find(term[i], i + 1) != std::string_view::npos) {
      throw ValidationError("contract: repeated index '" + std::string(1, term[i]) + "' in " + where);
    }
  }
}

/// Permutes and sums a single operand from `in_spec` to `out_spec`.
/// Every output letter must appear in the input; others are summed out.
inline Tensor reduce_permute(const std::string& in_spec, const Tensor& x, const std::string& out_spec) {
  if (in_spec == out_spec) return x;
  std::vector<std::size_t> perm;
  Shape kept_shape;
  for (char c : out_spec) {
    auto p = in_spec.find(c);
    if (p == std::string::npos) throw ValidationError(std::string("contract: output index '") + c + "' missing from operand");
    perm.push_back(p);
    kept_shape.push_back(x.shape()[p]);
  }
  std::size_t reduced = 1;
  for (std::size_t i = 0; i < in_spec.size(); ++i) {
    if (out_spec.find(in_spec[i]) == std::string::npos) {
      perm.push_back(i);
      reduced *= x.shape()[i];
    }
  }
  Tensor p = permute(x, perm);
  if (reduced == 1) return std::move(p).reshaped(kept_shape);
  Tensor out(kept_shape);
  const double* src = p.raw();
  for (std::size_t i = 0; i < out.size(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < reduced; ++j) acc += src[i * reduced + j];
    out[i] = acc;
  }
  return out;
}

/// Letters fused into one GEMM dimension and their combined extent.
struct GemmGroup {
  std::string letters;
  std::size_t extent = 1;
};

/// Shape and element strides of one GEMM operand block.
struct StridedView {
  std::size_t rows, cols, row_stride, col_stride;
};

using ColMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;

enum class BlockLayout { Row, Col, General };

inline BlockLayout layout_of(const StridedView& v) {
  if (v.cols == 1 || v.col_stride == 1) return BlockLayout::Row;
  if (v.rows == 1 || v.row_stride == 1) return BlockLayout::Col;
  return BlockLayout::General;
}

/// Unit-inner-stride Eigen map of a Row or Col block.
template <BlockLayout L, class Scalar>
auto block_map(Scalar* p, const StridedView& v) {
  constexpr bool is_const = std::is_const_v<Scalar>;
  const auto r = static_cast<Eigen::Index>(v.rows), c = static_cast<Eigen::Index>(v.cols);
  if constexpr (L == BlockLayout::Col) {
    using M = std::conditional_t<is_const, const ColMat, ColMat>;
    const auto outer = static_cast<Eigen::Index>(v.cols == 1 ? v.rows : v.col_stride);
    return Eigen::Map<M, 0, Eigen::OuterStride<>>(p, r, c, Eigen::OuterStride<>(outer));
  } else {
    using M = std::conditional_t<is_const, const RowMat, RowMat>;
    const auto outer = static_cast<Eigen::Index>(v.rows == 1 ? v.cols : v.row_stride);
    return Eigen::Map<M, 0, Eigen::OuterStride<>>(p, r, c, Eigen::OuterStride<>(outer));
  }
}

inline void gather_block(const double* p, const StridedView& v, AlignedBuffer& buf) {
  buf.resize(v.rows * v.cols);
  for (std::size_t i = 0; i < v.rows; ++i)
    for (std::size_t j = 0; j < v.cols; ++j) buf[i * v.cols + j] = p[i * v.row_stride + j * v.col_stride];
}

/// Odometer over the loop letters of a contraction, tracking one offset per tensor.
struct LoopOdometer {
  std::vector<std::size_t> extent, stride_a, stride_b, stride_o, idx;
  std::size_t off_a = 0, off_b = 0, off_o = 0;

  void advance() {
    for (std::size_t ax = extent.size(); ax-- > 0;) {
      off_a += stride_a[ax];
      off_b += stride_b[ax];
      off_o += stride_o[ax];
      if (++idx[ax] < extent[ax]) return;
      off_a -= stride_a[ax] * extent[ax];
      off_b -= stride_b[ax] * extent[ax];
      off_o -= stride_o[ax] * extent[ax];
      idx[ax] = 0;
    }
  }
};

template <BlockLayout LA, BlockLayout LB, BlockLayout LO>
void gemm_loop(const double* pa, const StridedView& va, const double* pb, const StridedView& vb, double* po,
               const StridedView& vo, LoopOdometer odo, std::size_t iterations, bool general_a, bool general_b,
               bool general_o) {
  AlignedBuffer buf_a, buf_b, buf_o;
  const StridedView dense_a{va.rows, va.cols, va.cols, 1}, dense_b{vb.rows, vb.cols, vb.cols, 1};
  const StridedView dense_o{vo.rows, vo.cols, vo.cols, 1};
  for (std::size_t it = 0; it < iterations; ++it, odo.advance()) {
    const double* a = pa + odo.off_a;
    const double* b = pb + odo.off_b;
    StridedView ua = va, ub = vb;
    if (general_a) {
      gather_block(a, va, buf_a);
      a = buf_a.data();
      ua = dense_a;
    }
    if (general_b) {
      gather_block(b, vb, buf_b);
      b = buf_b.data();
      ub = dense_b;
    }
    if (general_o) {
      buf_o.assign(vo.rows * vo.cols, 0.0);
      block_map<LO>(buf_o.data(), dense_o).noalias() += block_map<LA>(a, ua) * block_map<LB>(b, ub);
      double* o = po + odo.off_o;
      for (std::size_t i = 0; i < vo.rows; ++i)
        for (std::size_t j = 0; j < vo.cols; ++j) o[i * vo.row_stride + j * vo.col_stride] += buf_o[i * vo.cols + j];
    } else {
      block_map<LO>(po + odo.off_o, vo).noalias() += block_map<LA>(a, ua) * block_map<LB>(b, ub);
    }
  }
}

template <class F>
void dispatch_layout(BlockLayout l, F&& f) {
  if (l == BlockLayout::Col) {
    f(std::integral_constant<BlockLayout, BlockLayout::Col>{});
  } else {
    f(std::integral_constant<BlockLayout, BlockLayout::Row>{});
  }
}

/// Two-operand contraction as a loop of strided GEMMs. Letter groups that are
/// consecutive and dense in every tensor holding them become the M, K and N
/// dimensions; remaining letters are looped over, so operands are never permuted.
inline Tensor contract_pair(const std::string& sa, const Tensor& a, const std::string& sb, const Tensor& b,
                            const std::string& so) {
  auto in = [](const std::string& s, char c) { return s.find(c) != std::string::npos; };

  // Letters owned by one operand only are summed out before the GEMM.
  std::string sa2, sb2;
  for (char c : sa) if (in(sb, c) || in(so, c)) sa2 += c;
  for (char c : sb) if (in(sa, c) || in(so, c)) sb2 += c;
  Tensor a_reduced, b_reduced;
  const Tensor* ap = &a;
  const Tensor* bp = &b;
  if (sa2 != sa) ap = &(a_reduced = reduce_permute(sa, a, sa2));
  if (sb2 != sb) bp = &(b_reduced = reduce_permute(sb, b, sb2));

  using Strides = std::array<std::size_t, 26>;
  Strides ext{}, st_a{}, st_b{}, st_o{};
  const auto strides_a = row_major_strides(ap->shape()), strides_b = row_major_strides(bp->shape());
  for (std::size_t i = 0; i < sa2.size(); ++i) {
    ext[sa2[i] - 'a'] = ap->shape()[i];
    st_a[sa2[i] - 'a'] = strides_a[i];
  }
  for (std::size_t i = 0; i < sb2.size(); ++i) {
    ext[sb2[i] - 'a'] = bp->shape()[i];
    st_b[sb2[i] - 'a'] = strides_b[i];
  }
  Shape out_shape;
  for (char c : so) out_shape.push_back(ext[c - 'a']);
  Tensor out(out_shape);
  const auto strides_o = row_major_strides(out_shape);
  for (std::size_t i = 0; i < so.size(); ++i) st_o[so[i] - 'a'] = strides_o[i];

  std::string free_a, free_b, contracted;
  for (char c : sa2) {
    if (!in(sb2, c)) free_a += c;
    else if (!in(so, c)) contracted += c;
  }
  for (char c : sb2) if (!in(sa2, c)) free_b += c;

  struct Holder {
    const std::string* spec;
    const Strides* strides;
  };
  // Largest run of `letters` (in the first holder's order) that is consecutive,
  // identically ordered and dense in every holder.
  auto fuse = [&](const std::string& letters, Holder first, Holder second) {
    GemmGroup best;
    std::string ordered;
    for (char c : *first.spec) if (in(letters, c)) ordered += c;
    for (std::size_t i = 0; i < ordered.size(); ++i) {
      for (std::size_t j = i + 1; j <= ordered.size(); ++j) {
        const std::string run = ordered.substr(i, j - i);
        bool ok = true;
        for (const Holder& h : {first, second}) {
          if (h.spec->find(run) == std::string::npos) ok = false;
          for (std::size_t q = 0; ok && q + 1 < run.size(); ++q)
            ok = (*h.strides)[run[q] - 'a'] == (*h.strides)[run[q + 1] - 'a'] * ext[run[q + 1] - 'a'];
        }
        if (!ok) break;
        std::size_t e = 1;
        for (char c : run) e *= ext[c - 'a'];
        if (e > best.extent || best.letters.empty()) best = {run, e};
      }
    }
    return best;
  };
  const GemmGroup gm = fuse(free_a, {&sa2, &st_a}, {&so, &st_o});
  const GemmGroup gn = fuse(free_b, {&sb2, &st_b}, {&so, &st_o});
  const GemmGroup gk = fuse(contracted, {&sa2, &st_a}, {&sb2, &st_b});
  auto inner = [](const GemmGroup& g, const Strides& st) -> std::size_t {
    return g.letters.empty() ? 0 : st[g.letters.back() - 'a'];
  };

  LoopOdometer odo;
  std::size_t iterations = 1;
  for (char c : so + contracted) {
    if (in(gm.letters, c) || in(gn.letters, c) || in(gk.letters, c)) continue;
    odo.extent.push_back(ext[c - 'a']);
    odo.stride_a.push_back(st_a[c - 'a']);
    odo.stride_b.push_back(st_b[c - 'a']);
    odo.stride_o.push_back(st_o[c - 'a']);
    iterations *= ext[c - 'a'];
  }
  odo.idx.assign(odo.extent.size(), 0);

  const StridedView va{gm.extent, gk.extent, inner(gm, st_a), inner(gk, st_a)};
  const StridedView vb{gk.extent, gn.extent, inner(gk, st_b), inner(gn, st_b)};
  const StridedView vo{gm.extent, gn.extent, inner(gm, st_o), inner(gn, st_o)};
  const BlockLayout la = layout_of(va), lb = layout_of(vb), lo = layout_of(vo);
  dispatch_layout(la, [&](auto A) {
    dispatch_layout(lb, [&](auto B) {
      dispatch_layout(lo, [&](auto O) {
        gemm_loop<A.value, B.value, O.value>(ap->raw(), va, bp->raw(), vb, out.raw(), vo, odo, iterations,
                                             la == BlockLayout::General, lb == BlockLayout::General,
                                             lo == BlockLayout::General);
      });
    });
  });
  return out;
}

}  // namespace detail

/// Parsed index-notation string such as "bcsti,bcstj->bsij".
struct ContractSpec {
  std::vector<std::string> inputs;
  std::string output;

  static ContractSpec parse(std::string_view text) {
    std::string s;
    for (char c : text) if (c != ' ') s += c;
    const auto arrow = s.find("->");
    if (arrow == std::string::npos) throw ValidationError("contract: spec '" + std::string(text) + "' lacks '->'");
    ContractSpec spec;
    spec.output = s.substr(arrow + 2);
    std::string lhs = s.substr(0, arrow);
    std::size_t start = 0;
    while (true) {
      auto comma = lhs.find(',', start);
      spec.inputs.push_back(lhs.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    for (auto& term : spec.inputs) detail::validate_term(term, "'" + std::string(text) + "'");
    detail::validate_term(spec.output, "'" + std::string(text) + "'");
    for (char c : spec.output) {
      bool found = std::any_of(spec.inputs.begin(), spec.inputs.end(),
                               [c](const std::string& t) { return t.find(c) != std::string::npos; });
      if (!found) throw ValidationError(std::string("contract: output index '") + c + "' appears in no input");
    }
    return spec;
  }

  std::string str() const {
    std::string s;
    for (std::size_t i = 0; i < inputs.size(); ++i) s += (i ? "," : "") + inputs[i];
    return s + "->" + output;
  }
};

/// Sum of products over indices absent from the output (einsum semantics,
/// without repeated indices inside one operand).
inline Tensor contract(const ContractSpec& spec, const std::vector<const Tensor*>& inputs) {
  if (inputs.size() != spec.inputs.size() || inputs.empty()) {
    throw ValidationError("contract: spec '" + spec.str() + "' expects " + std::to_string(spec.inputs.size()) +
                          " operands, got " + std::to_string(inputs.size()));
  }
  std::vector<std::size_t> extent(26, 0);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& term = spec.inputs[i];
    if (term.size() != inputs[i]->rank()) {
      throw ShapeError("contract: term '" + term + "' has rank " + std::to_string(term.size()) + " but operand is " +
                       shape_str(inputs[i]->shape()));
    }
    for (std::size_t a = 0; a < term.size(); ++a) {
      auto& e = extent[term[a] - 'a'];
      if (e != 0 && e != inputs[i]->shape()[a]) {
        throw ShapeError(std::string("contract: extent mismatch for index '") + term[a] + "' in '" + spec.str() + "'");
      }
      e = inputs[i]->shape()[a];
    }
  }

  if (inputs.size() == 1) return detail::reduce_permute(spec.inputs[0], *inputs[0], spec.output);

  std::string cur_spec = spec.inputs[0];
  Tensor cur;
  const Tensor* lhs = inputs[0];
  for (std::size_t k = 1; k < inputs.size(); ++k) {
    std::string needed = spec.output;
    for (std::size_t j = k + 1; j < inputs.size(); ++j) needed += spec.inputs[j];
    std::string next_spec;
    if (k + 1 == inputs.size()) {
      next_spec = spec.output;
    } else {
      for (char c : cur_spec + spec.inputs[k]) {
        if (needed.find(c) != std::string::npos && next_spec.find(c) == std::string::npos) next_spec += c;
      }
    }
    cur = detail::contract_pair(cur_spec, *lhs, spec.inputs[k], *inputs[k], next_spec);
    lhs = &cur;
    cur_spec = next_spec;
  }
  return cur;
}

inline Tensor contract(std::string_view spec, const std::vector<const Tensor*>& inputs) {
  return contract(ContractSpec::parse(spec), inputs);
}

inline Tensor contract(std::string_view spec, const Tensor& a) { return contract(spec, std::vector<const Tensor*>{&a}); }
inline Tensor contract(std::string_view spec, const Tensor& a, const Tensor& b) {
  return contract(spec, std::vector<const Tensor*>{&a, &b});
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out({a.dim(0), b.dim(1)});
  detail::MapMat(out.raw(), a.dim(0), b.dim(1)).noalias() =
      detail::CMapMat(a.raw(), a.dim(0), a.dim(1)) * detail::CMapMat(b.raw(), b.dim(0), b.dim(1));
  return out;
}

// ---------------------------------------------------------------------------
// Temporal convolution over [B, C, T, N] (or [C, T, N]); kernel runs along T,
// independently for every node n.

struct TemporalConvGeometry {
  std::size_t batch, c_in, c_out, t_in, t_out, nodes, kernel;
  std::size_t stride, padding;
  bool batched;
};

inline std::size_t temporal_conv_length(std::size_t t, std::size_t k, std::size_t stride, std::size_t padding) {
  if (t + 2 * padding < k) throw ShapeError("temporal_conv: kernel longer than padded sequence");
  return (t + 2 * padding - k) / stride + 1;
}

inline TemporalConvGeometry temporal_conv_geometry(const Tensor& x, const Tensor& w, int stride, int padding) {
  if (stride < 1) throw ShapeError("temporal_conv: stride must be >= 1, got " + std::to_string(stride));
  if (padding < 0) throw ShapeError("temporal_conv: padding must be >= 0");
  if (w.rank() != 3) throw ShapeError("temporal_conv: weight must be [C_out, C_in, K], got " + shape_str(w.shape()));
  if (w.dim(2) % 2 == 0) throw ShapeError("temporal_conv: kernel size must be odd, got " + std::to_string(w.dim(2)));
  TemporalConvGeometry g{};
  if (x.rank() == 3) {
    g.batched = false;
    g.batch = 1;
    g.c_in = x.dim(0);
    g.t_in = x.dim(1);
    g.nodes = x.dim(2);
  } else if (x.rank() == 4) {
    g.batched = true;
    g.batch = x.dim(0);
    g.c_in = x.dim(1);
    g.t_in = x.dim(2);
    g.nodes = x.dim(3);
  } else {
    throw ShapeError("temporal_conv: input must be [C,T,N] or [B,C,T,N], got " + shape_str(x.shape()));
  }
  if (w.dim(1) != g.c_in) {
    throw ShapeError("temporal_conv: weight expects " + std::to_string(w.dim(1)) + " input channels, got " +
                     std::to_string(g.c_in));
  }
  g.c_out = w.dim(0);
  g.kernel = w.dim(2);
  g.stride = static_cast<std::size_t>(stride);
  g.padding = static_cast<std::size_t>(padding);
  g.t_out = temporal_conv_length(g.t_in, g.kernel, g.stride, g.padding);
  return g;
}

namespace detail {

inline bool is_pointwise(const TemporalConvGeometry& g) { return g.kernel == 1 && g.stride == 1 && g.padding == 0; }

// cols[i*K + k, t*N + n] = x[i, t*stride + k - padding, n], zero outside [0, T).
inline void im2col(const double* xb, const TemporalConvGeometry& g, double* cols) {
  const std::size_t out_cols = g.t_out * g.nodes;
  for (std::size_t i = 0; i < g.c_in; ++i) {
    for (std::size_t k = 0; k < g.kernel; ++k) {
      double* dst = cols + (i * g.kernel + k) * out_cols;
      for (std::size_t t = 0; t < g.t_out; ++t) {
        const auto src = static_cast<std::ptrdiff_t>(t * g.stride + k) - static_cast<std::ptrdiff_t>(g.padding);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(g.t_in)) {
          std::fill_n(dst + t * g.nodes, g.nodes, 0.0);
        } else {
          std::copy_n(xb + (i * g.t_in + static_cast<std::size_t>(src)) * g.nodes, g.nodes, dst + t * g.nodes);
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates cols back into gx.
inline void col2im_add(const double* cols, const TemporalConvGeometry& g, double* gxb) {
  const std::size_t out_cols = g.t_out * g.nodes;
  for (std::size_t i = 0; i < g.c_in; ++i) {
    for (std::size_t k = 0; k < g.kernel; ++k) {
      const double* src_row = cols + (i * g.kernel + k) * out_cols;
      for (std::size_t t = 0; t < g.t_out; ++t) {
        const auto src = static_cast<std::ptrdiff_t>(t * g.stride + k) - static_cast<std::ptrdiff_t>(g.padding);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(g.t_in)) continue;
        double* dst = gxb + (i * g.t_in + static_cast<std::size_t>(src)) * g.nodes;
        const double* from = src_row + t * g.nodes;
        for (std::size_t n = 0; n < g.nodes; ++n) dst[n] += from[n];
      }
    }
  }
}

}  // namespace detail

/// y[b,o,t,n] = bias[o] + sum_{i,k} w[o,i,k] * x[b,i,t*stride+k-padding,n].
/// Row-major w[C_out, C_in, K] is used directly as the [C_out, C_in*K] im2col weight.
inline Tensor temporal_conv(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int padding) {
  const auto g = temporal_conv_geometry(x, w, stride, padding);
  if (bias && (bias->rank() != 1 || bias->dim(0) != g.c_out)) throw ShapeError("temporal_conv: bias must be [C_out]");
  Tensor y = g.batched ? Tensor({g.batch, g.c_out, g.t_out, g.nodes}) : Tensor({g.c_out, g.t_out, g.nodes});
  const std::size_t in_cols = g.t_in * g.nodes, out_cols = g.t_out * g.nodes, depth = g.c_in * g.kernel;
  const bool pointwise = detail::is_pointwise(g);
  AlignedBuffer cols(pointwise ? 0 : depth * out_cols);
  detail::CMapMat wm(w.raw(), static_cast<Eigen::Index>(g.c_out), static_cast<Eigen::Index>(depth));
  for (std::size_t b = 0; b < g.batch; ++b) {
    const double* xb = x.raw() + b * g.c_in * in_cols;
    if (!pointwise) detail::im2col(xb, g, cols.data());
    detail::CMapMat cm(pointwise ? xb : cols.data(), static_cast<Eigen::Index>(depth), static_cast<Eigen::Index>(out_cols));
    detail::MapMat ym(y.raw() + b * g.c_out * out_cols, static_cast<Eigen::Index>(g.c_out), static_cast<Eigen::Index>(out_cols));
    ym.noalias() = wm * cm;
    if (bias) {
      for (std::size_t o = 0; o < g.c_out; ++o) ym.row(static_cast<Eigen::Index>(o)).array() += (*bias)[o];
    }
  }
  return y;
}

/// Accumulates input/weight/bias gradients of temporal_conv into the non-null outputs,
/// which must already have the right shapes.
inline void temporal_conv_backward(const Tensor& x, const Tensor& w, int stride, int padding, const Tensor& gy,
                                   Tensor* gx, Tensor* gw, Tensor* gbias) {
  const auto g = temporal_conv_geometry(x, w, stride, padding);
  const std::size_t in_cols = g.t_in * g.nodes, out_cols = g.t_out * g.nodes, depth = g.c_in * g.kernel;
  const auto depth_i = static_cast<Eigen::Index>(depth), out_i = static_cast<Eigen::Index>(out_cols);
  const bool pointwise = detail::is_pointwise(g);
  AlignedBuffer cols(pointwise ? 0 : depth * out_cols);
  detail::CMapMat wm(w.raw(), static_cast<Eigen::Index>(g.c_out), depth_i);
  detail::RowMat gcols;
  for (std::size_t b = 0; b < g.batch; ++b) {
    const double* xb = x.raw() + b * g.c_in * in_cols;
    detail::CMapMat gym(gy.raw() + b * g.c_out * out_cols, static_cast<Eigen::Index>(g.c_out), out_i);
    if (gw) {
      if (!pointwise) detail::im2col(xb, g, cols.data());
      detail::CMapMat cm(pointwise ? xb : cols.data(), depth_i, out_i);
      detail::MapMat(gw->raw(), static_cast<Eigen::Index>(g.c_out), depth_i).noalias() += gym * cm.transpose();
    }
    if (gx) {
      double* gxb = gx->raw() + b * g.c_in * in_cols;
      if (pointwise) {
        detail::MapMat(gxb, depth_i, out_i).noalias() += wm.transpose() * gym;
      } else {
        gcols.noalias() = wm.transpose() * gym;
        detail::col2im_add(gcols.data(), g, gxb);
      }
    }
    if (gbias) {
      for (std::size_t o = 0; o < g.c_out; ++o) (*gbias)[o] += gym.row(static_cast<Eigen::Index>(o)).sum();
    }
  }
}

// ---------------------------------------------------------------------------
// Normalization.

enum class NormMode { Train, Eval };

/// Per-channel running statistics. `momentum` is the weight kept by the
/// running average on each update: r <- momentum * r + (1 - momentum) * batch.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.9;
  double eps = 1e-5;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels)
      : running_mean(Tensor::zeros({channels})), running_var(Tensor::ones({channels})) {}
};

struct NormCache {
  Tensor xhat;
  std::vector<double> mean;
  std::vector<double> invstd;
  NormMode mode = NormMode::Train;
};

/// Normalizes x[B, C, ...] per channel over every other axis.
inline Tensor batchnorm(const Tensor& x, const Tensor& scale, const Tensor& shift, BatchNormState& state,
                        NormMode mode, NormCache* cache = nullptr) {
  if (x.rank() < 2) throw ShapeError("batchnorm: input must be [B, C, ...]");
  if (state.eps <= 0) throw ValidationError("batchnorm: epsilon must be positive");
  const std::size_t batch = x.dim(0), channels = x.dim(1), inner = x.size() / (batch * channels);
  if (scale.size() != channels || shift.size() != channels || state.running_mean.size() != channels) {
    throw ShapeError("batchnorm: parameter extent does not match channel count " + std::to_string(channels));
  }
  using Arr = Eigen::Map<const Eigen::ArrayXd>;
  const auto n = static_cast<Eigen::Index>(inner);
  const double count = static_cast<double>(batch * inner);
  Tensor y(x.shape());
  std::vector<double> means(channels), invstd(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    double mean, var;
    if (mode == NormMode::Train) {
      double s = 0.0;
      for (std::size_t b = 0; b < batch; ++b) s += Arr(x.raw() + (b * channels + c) * inner, n).sum();
      mean = s / count;
      double ss = 0.0;
      for (std::size_t b = 0; b < batch; ++b) ss += (Arr(x.raw() + (b * channels + c) * inner, n) - mean).square().sum();
      var = ss / count;
      state.running_mean[c] = state.momentum * state.running_mean[c] + (1.0 - state.momentum) * mean;
      state.running_var[c] = state.momentum * state.running_var[c] + (1.0 - state.momentum) * var;
    } else {
      mean = state.running_mean[c];
      var = state.running_var[c];
    }
    means[c] = mean;
    invstd[c] = 1.0 / std::sqrt(var + state.eps);
    const double k = scale[c] * invstd[c];
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = (b * channels + c) * inner;
      Eigen::Map<Eigen::ArrayXd>(y.raw() + off, n) = (Arr(x.raw() + off, n) - mean) * k + shift[c];
    }
  }
  if (cache) {
    cache->mean = std::move(means);
    cache->invstd = std::move(invstd);
    cache->mode = mode;
  }
  return y;
}

/// x is the forward input; xhat is recomputed from the cached mean and invstd.
inline void batchnorm_backward(const Tensor& gy, const Tensor& x, const Tensor& scale, const NormCache& cache,
                               Tensor* gx, Tensor* gscale, Tensor* gshift) {
  using Arr = Eigen::Map<const Eigen::ArrayXd>;
  const std::size_t batch = gy.dim(0), channels = gy.dim(1), inner = gy.size() / (batch * channels);
  const auto n = static_cast<Eigen::Index>(inner);
  const double count = static_cast<double>(batch * inner);
  for (std::size_t c = 0; c < channels; ++c) {
    const double mean = cache.mean[c], inv = cache.invstd[c];
    double sg = 0.0, sgx = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = (b * channels + c) * inner;
      const Arr g(gy.raw() + off, n);
      sg += g.sum();
      sgx += (g * (Arr(x.raw() + off, n) - mean)).sum() * inv;
    }
    if (gscale) (*gscale)[c] += sgx;
    if (gshift) (*gshift)[c] += sg;
    if (!gx) continue;
    const double k = scale[c] * inv;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = (b * channels + c) * inner;
      Eigen::Map<Eigen::ArrayXd> out(gx->raw() + off, n);
      if (cache.mode == NormMode::Train) {
        out += k * (Arr(gy.raw() + off, n) - sg / count - (Arr(x.raw() + off, n) - mean) * (inv * sgx / count));
      } else {
        out += k * Arr(gy.raw() + off, n);
      }
    }
  }
}

/// Normalizes over `axis` at every other position; scale/shift are indexed by that axis.
inline Tensor layernorm(const Tensor& x, std::size_t axis, const Tensor& scale, const Tensor& shift, double eps = 1e-5,
                        NormCache* cache = nullptr) {
  if (eps <= 0) throw ValidationError("layernorm: epsilon must be positive");
  const std::size_t channels = x.dim(axis);
  if (scale.size() != channels || shift.size() != channels) throw ShapeError("layernorm: scale/shift extent mismatch");
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= x.dim(a);
  for (std::size_t a = axis + 1; a < x.rank(); ++a) inner *= x.dim(a);
  Tensor y(x.shape()), xhat(x.shape());
  std::vector<double> invstd(outer * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * channels * inner + i;
      double mean = 0.0;
      for (std::size_t c = 0; c < channels; ++c) mean += x[base + c * inner];
      mean /= static_cast<double>(channels);
      double var = 0.0;
      for (std::size_t c = 0; c < channels; ++c) var += (x[base + c * inner] - mean) * (x[base + c * inner] - mean);
      var /= static_cast<double>(channels);
      const double is = 1.0 / std::sqrt(var + eps);
      invstd[o * inner + i] = is;
      for (std::size_t c = 0; c < channels; ++c) {
        const double h = (x[base + c * inner] - mean) * is;
        xhat[base + c * inner] = h;
        y[base + c * inner] = scale[c] * h + shift[c];
      }
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->invstd = std::move(invstd);
  }
  return y;
}

inline void layernorm_backward(const Tensor& gy, std::size_t axis, const Tensor& scale, const NormCache& cache,
                               Tensor* gx, Tensor* gscale, Tensor* gshift) {
  const std::size_t channels = gy.dim(axis);
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= gy.dim(a);
  for (std::size_t a = axis + 1; a < gy.rank(); ++a) inner *= gy.dim(a);
  const double cnt = static_cast<double>(channels);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * channels * inner + i;
      double sg = 0.0, sgx = 0.0;
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t at = base + c * inner;
        const double gh = gy[at] * scale[c];
        sg += gh;
        sgx += gh * cache.xhat[at];
        if (gscale) (*gscale)[c] += gy[at] * cache.xhat[at];
        if (gshift) (*gshift)[c] += gy[at];
      }
      if (!gx) continue;
      const double is = cache.invstd[o * inner + i];
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t at = base + c * inner;
        (*gx)[at] += is * (gy[at] * scale[c] - sg / cnt - cache.xhat[at] * sgx / cnt);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Pointwise and axis-normalized maps.

enum class Pointwise { Tanh, Relu, Softmax, LogSoftmax };

namespace detail {

inline void axis_extents(const Tensor& x, std::size_t axis, std::size_t& outer, std::size_t& len, std::size_t& inner) {
  if (axis >= x.rank()) throw ShapeError("axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
  outer = 1;
  inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= x.dim(a);
  for (std::size_t a = axis + 1; a < x.rank(); ++a) inner *= x.dim(a);
  len = x.dim(axis);
}

}  // namespace detail

inline Tensor softmax(const Tensor& x, std::size_t axis, bool log_space = false) {
  std::size_t outer, len, inner;
  detail::axis_extents(x, axis, outer, len, inner);
  Tensor y(x.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, x[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < len; ++j) z += std::exp(x[base + j * inner] - mx);
      const double logz = std::log(z);
      for (std::size_t j = 0; j < len; ++j) {
        const double shifted = x[base + j * inner] - mx;
        y[base + j * inner] = log_space ? shifted - logz : std::exp(shifted) / z;
      }
    }
  }
  return y;
}

inline Tensor log_softmax(const Tensor& x, std::size_t axis) { return softmax(x, axis, true); }

inline Tensor tanh(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
  return y;
}

inline Tensor relu(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

/// `axis` is used by the softmax variants only; it defaults to the last axis.
inline Tensor pointwise(Pointwise kind, const Tensor& x, std::size_t axis = static_cast<std::size_t>(-1)) {
  if (axis == static_cast<std::size_t>(-1)) axis = x.rank() == 0 ? 0 : x.rank() - 1;
  Tensor y;
  switch (kind) {
    case Pointwise::Tanh: y = tanh(x); break;
    case Pointwise::Relu: y = relu(x); break;
    case Pointwise::Softmax: y = softmax(x, axis); break;
    case Pointwise::LogSoftmax: y = log_softmax(x, axis); break;
  }
  return y;
}

}  // namespace slr
