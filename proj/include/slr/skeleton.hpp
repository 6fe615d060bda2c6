#pragma once

// The 27-node upper-body skeleton: node identities, COCO whole-body source
// indices, edges, bone parents and mirror pairs.

#include <cmath>
#include <cstdint>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slr/error.hpp"
#include "slr/kernels.hpp"
#include "slr/tensor.hpp"

namespace slr {

inline constexpr std::size_t kCocoWholeBodyKeypoints = 133;
inline constexpr std::size_t kSkeletonNodes = 27;

struct SkeletonLayout {
  std::size_t node_count = 0;
  std::vector<std::string> node_names;
  std::vector<std::size_t> coco_source_index;
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  std::vector<std::optional<std::size_t>> bone_parent;
  std::vector<std::size_t> flip_pair;
  std::size_t root_index = 0;

  /// Throws ValidationError on the first violated invariant.
  void validate() const;

  nlohmann::json to_json() const;
  static SkeletonLayout from_json(const nlohmann::json& j);

  /// Canonical JSON text; identical layouts serialize identically.
  std::string dump() const { return to_json().dump(); }

  /// FNV-1a 64 over dump(); stamped into sequence files.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : dump()) {
      h ^= c;
      h *= 1099511628211ull;
    }
    return h;
  }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < node_names.size(); ++i)
      if (node_names[i] == name) return i;
    throw ValidationError("unknown skeleton node '" + name + "'");
  }
};

namespace detail {

// Offsets inside a 21-keypoint COCO hand block.
inline constexpr std::size_t kHandKnuckle[5] = {1, 5, 9, 13, 17};
inline constexpr std::size_t kHandTip[5] = {4, 8, 12, 16, 20};
inline constexpr const char* kFingers[5] = {"thumb", "index", "middle", "ring", "pinky"};
inline constexpr std::size_t kLeftHandBase = 91;
inline constexpr std::size_t kRightHandBase = 112;

}  // namespace detail

/// Fixed layout:
///   0 nose (root), 1-2 eyes, 3-4 shoulders, 5-6 elbows,
///   7-11 left base knuckles, 12-16 left fingertips,
///   17-21 right base knuckles, 22-26 right fingertips.
/// Eyes and shoulders hang off the nose, elbows off the shoulders, every base
/// knuckle off its elbow and every fingertip off its base knuckle.
inline SkeletonLayout default_layout() {
  SkeletonLayout l;
  l.node_count = kSkeletonNodes;
  l.root_index = 0;
  auto add = [&](std::string name, std::size_t coco, std::optional<std::size_t> parent) {
    l.node_names.push_back(std::move(name));
    l.coco_source_index.push_back(coco);
    l.bone_parent.push_back(parent);
  };
  add("nose", 0, std::nullopt);
  add("left_eye", 1, 0);
  add("right_eye", 2, 0);
  add("left_shoulder", 5, 0);
  add("right_shoulder", 6, 0);
  add("left_elbow", 7, 3);
  add("right_elbow", 8, 4);
  for (int side = 0; side < 2; ++side) {
    const std::string prefix = side == 0 ? "left_" : "right_";
    const std::size_t base = side == 0 ? detail::kLeftHandBase : detail::kRightHandBase;
    const std::size_t elbow = side == 0 ? 5 : 6;
    const std::size_t first = 7 + 10 * static_cast<std::size_t>(side);
    for (std::size_t f = 0; f < 5; ++f)
      add(prefix + detail::kFingers[f] + "_base", base + detail::kHandKnuckle[f], elbow);
    for (std::size_t f = 0; f < 5; ++f)
      add(prefix + detail::kFingers[f] + "_tip", base + detail::kHandTip[f], first + f);
  }
  for (std::size_t i = 0; i < l.node_count; ++i)
    if (l.bone_parent[i]) l.edges.emplace_back(*l.bone_parent[i], i);

  l.flip_pair.resize(l.node_count);
  l.flip_pair[0] = 0;
  for (std::size_t a : {1u, 3u, 5u}) {
    l.flip_pair[a] = a + 1;
    l.flip_pair[a + 1] = a;
  }
  for (std::size_t k = 0; k < 10; ++k) {
    l.flip_pair[7 + k] = 17 + k;
    l.flip_pair[17 + k] = 7 + k;
  }
  return l;
}

inline void SkeletonLayout::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError("skeleton layout: " + msg); };
  if (node_names.size() != node_count || coco_source_index.size() != node_count || bone_parent.size() != node_count ||
      flip_pair.size() != node_count) {
    fail("per-node arrays must all have node_count entries");
  }
  if (root_index >= node_count) fail("root index out of range");
  std::vector<bool> seen(kCocoWholeBodyKeypoints, false);
  for (auto c : coco_source_index) {
    if (c >= kCocoWholeBodyKeypoints) fail("COCO source index " + std::to_string(c) + " >= 133");
    if (seen[c]) fail("duplicate COCO source index " + std::to_string(c));
    seen[c] = true;
  }
  for (auto [a, b] : edges) {
    if (a >= node_count || b >= node_count || a == b) fail("invalid edge");
  }
  // Spanning tree: one parent per non-root node and every chain reaches the root.
  std::size_t bones = 0;
  for (std::size_t i = 0; i < node_count; ++i) {
    if (i == root_index) {
      if (bone_parent[i]) fail("root must not have a bone parent");
      continue;
    }
    if (!bone_parent[i] || *bone_parent[i] >= node_count) fail("node " + node_names[i] + " lacks a valid parent");
    ++bones;
    std::size_t cur = i, steps = 0;
    while (cur != root_index) {
      if (!bone_parent[cur] || ++steps > node_count) fail("bone chain from " + node_names[i] + " does not reach root");
      cur = *bone_parent[cur];
    }
  }
  if (bones + 1 != node_count) fail("bone tree must have node_count - 1 bones");
  // Edge graph connectivity.
  std::vector<std::vector<std::size_t>> adj(node_count);
  for (auto [a, b] : edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  std::vector<bool> reached(node_count, false);
  std::queue<std::size_t> q;
  q.push(root_index);
  reached[root_index] = true;
  std::size_t count = 1;
  while (!q.empty()) {
    auto v = q.front();
    q.pop();
    for (auto w : adj[v])
      if (!reached[w]) {
        reached[w] = true;
        ++count;
        q.push(w);
      }
  }
  if (count != node_count) fail("edge graph is not connected");
  for (std::size_t i = 0; i < node_count; ++i) {
    if (flip_pair[i] >= node_count || flip_pair[flip_pair[i]] != i) fail("flip_pair is not an involution");
  }
}

inline nlohmann::json SkeletonLayout::to_json() const {
  nlohmann::json nodes = nlohmann::json::array();
  for (std::size_t i = 0; i < node_count; ++i) {
    nodes.push_back({{"index", i},
                     {"name", node_names[i]},
                     {"coco_index", coco_source_index[i]},
                     {"parent", bone_parent[i] ? nlohmann::json(*bone_parent[i]) : nlohmann::json(nullptr)},
                     {"flip", flip_pair[i]}});
  }
  nlohmann::json e = nlohmann::json::array();
  for (auto [a, b] : edges) e.push_back({a, b});
  return {{"format", "slr-skeleton-layout"}, {"version", 1}, {"node_count", node_count},
          {"root", root_index},              {"nodes", nodes}, {"edges", e}};
}

inline SkeletonLayout SkeletonLayout::from_json(const nlohmann::json& j) {
  try {
    SkeletonLayout l;
    l.node_count = j.at("node_count").get<std::size_t>();
    l.root_index = j.at("root").get<std::size_t>();
    const auto& nodes = j.at("nodes");
    if (nodes.size() != l.node_count) throw ValidationError("skeleton layout: node list length != node_count");
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto& n = nodes[i];
      if (n.at("index").get<std::size_t>() != i) throw ValidationError("skeleton layout: nodes must be listed in index order");
      l.node_names.push_back(n.at("name").get<std::string>());
      l.coco_source_index.push_back(n.at("coco_index").get<std::size_t>());
      l.bone_parent.push_back(n.at("parent").is_null() ? std::nullopt
                                                       : std::optional<std::size_t>(n.at("parent").get<std::size_t>()));
      l.flip_pair.push_back(n.at("flip").get<std::size_t>());
    }
    for (const auto& e : j.at("edges")) l.edges.emplace_back(e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>());
    l.validate();
    return l;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("skeleton layout JSON: ") + e.what());
  }
}

/// A[i,j] = 1 iff nodes i and j are one hop apart on the edge graph.
inline Tensor physical_adjacency(const SkeletonLayout& layout) {
  const std::size_t n = layout.node_count;
  Tensor a({n, n});
  for (auto [i, j] : layout.edges) {
    a[i * n + j] = 1.0;
    a[j * n + i] = 1.0;
  }
  return a;
}

/// D^{-1/2} (A + I) D^{-1/2}, D the degree matrix of A + I.
inline Tensor normalized_adjacency(const Tensor& adjacency) {
  if (adjacency.rank() != 2 || adjacency.dim(0) != adjacency.dim(1)) throw ShapeError("adjacency must be square");
  const std::size_t n = adjacency.dim(0);
  Tensor a = adjacency;
  for (std::size_t i = 0; i < n; ++i) a[i * n + i] += 1.0;
  std::vector<double> dinv(n);
  for (std::size_t i = 0; i < n; ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < n; ++j) d += a[i * n + j];
    dinv[i] = 1.0 / std::sqrt(d);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a[i * n + j] *= dinv[i] * dinv[j];
  return a;
}

/// keypoints[T, 133, 3] -> [3, T, N] gathered at the layout's COCO indices.
inline Tensor reduce_coco133(const Tensor& keypoints, const SkeletonLayout& layout) {
  if (keypoints.rank() != 3 || keypoints.dim(1) != kCocoWholeBodyKeypoints || keypoints.dim(2) != 3) {
    throw ShapeError("reduce_coco133: expected [T, 133, 3], got " + shape_str(keypoints.shape()));
  }
  const std::size_t frames = keypoints.dim(0), n = layout.node_count;
  Tensor out({3, frames, n});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t k = 0; k < n; ++k)
        out[(c * frames + t) * n + k] = keypoints[(t * kCocoWholeBodyKeypoints + layout.coco_source_index[k]) * 3 + c];
  return out;
}

/// Inverse of reduce_coco133 on the selected keypoints: writes x[3, T, N] into `keypoints`.
inline void scatter_coco133(const Tensor& x, const SkeletonLayout& layout, Tensor& keypoints) {
  const std::size_t frames = x.dim(1), n = layout.node_count;
  if (keypoints.rank() != 3 || keypoints.dim(0) != frames || keypoints.dim(1) != kCocoWholeBodyKeypoints) {
    throw ShapeError("scatter_coco133: keypoint tensor shape mismatch");
  }
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t k = 0; k < n; ++k)
        keypoints[(t * kCocoWholeBodyKeypoints + layout.coco_source_index[k]) * 3 + c] = x[(c * frames + t) * n + k];
}

}  // namespace slr
