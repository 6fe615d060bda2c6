#pragma once

// Input streams (joint / bone / motion), temporal sampling and training-time
// augmentation. Every operation takes x[3, T, N] with channels (x, y, confidence).

#include <cstdint>
#include <random>
#include <string>

#include "slr/error.hpp"
#include "slr/skeleton.hpp"
#include "slr/tensor.hpp"

namespace slr {

enum class StreamKind { Joint, Bone, JointMotion, BoneMotion };

inline std::string to_string(StreamKind k) {
  switch (k) {
    case StreamKind::Joint: return "joint";
    case StreamKind::Bone: return "bone";
    case StreamKind::JointMotion: return "joint-motion";
    case StreamKind::BoneMotion: return "bone-motion";
  }
  return "joint";
}

inline StreamKind parse_stream_kind(const std::string& s) {
  if (s == "joint") return StreamKind::Joint;
  if (s == "bone") return StreamKind::Bone;
  if (s == "joint-motion") return StreamKind::JointMotion;
  if (s == "bone-motion") return StreamKind::BoneMotion;
  throw ValidationError("unknown stream '" + s + "' (expected joint|bone|joint-motion|bone-motion)");
}

/// One labeled skeleton sequence; data is [3, T, N] in pixel units plus confidence.
struct Sample {
  Tensor data;
  std::size_t label = 0;
  std::size_t frame_count = 0;
  std::string id;
};

namespace detail {

inline void require_sequence(const Tensor& x, const char* what) {
  if (x.rank() != 3 || x.dim(0) != 3) throw ShapeError(std::string(what) + ": expected [3, T, N], got " + shape_str(x.shape()));
}

}  // namespace detail

/// bone[:, t, k] = x[:, t, k] - x[:, t, parent(k)]; confidence is min(child, parent); root is zero.
inline Tensor to_bone(const Tensor& x, const SkeletonLayout& layout) {
  detail::require_sequence(x, "to_bone");
  const std::size_t frames = x.dim(1), n = x.dim(2);
  if (n != layout.node_count) throw ShapeError("to_bone: node count does not match layout");
  Tensor out(x.shape());
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t k = 0; k < n; ++k) {
      if (!layout.bone_parent[k]) continue;
      const std::size_t p = *layout.bone_parent[k];
      for (std::size_t c = 0; c < 2; ++c) out[(c * frames + t) * n + k] = x[(c * frames + t) * n + k] - x[(c * frames + t) * n + p];
      out[(2 * frames + t) * n + k] = std::min(x[(2 * frames + t) * n + k], x[(2 * frames + t) * n + p]);
    }
  }
  return out;
}

/// m[:, t] = x[:, t+1] - x[:, t]; the final frame is zero.
inline Tensor to_motion(const Tensor& x) {
  detail::require_sequence(x, "to_motion");
  const std::size_t frames = x.dim(1), n = x.dim(2);
  Tensor out(x.shape());
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t + 1 < frames; ++t)
      for (std::size_t k = 0; k < n; ++k) out[(c * frames + t) * n + k] = x[(c * frames + t + 1) * n + k] - x[(c * frames + t) * n + k];
  return out;
}

inline Tensor derive_stream(const Tensor& x, StreamKind kind, const SkeletonLayout& layout) {
  switch (kind) {
    case StreamKind::Joint: return x;
    case StreamKind::Bone: return to_bone(x, layout);
    case StreamKind::JointMotion: return to_motion(x);
    case StreamKind::BoneMotion: return to_motion(to_bone(x, layout));
  }
  return x;
}

inline Tensor derive_stream(const Sample& s, StreamKind kind, const SkeletonLayout& layout) {
  return derive_stream(s.data, kind, layout);
}

/// Frame i of the output is input frame floor(i * T / target).
inline Tensor temporal_resample(const Tensor& x, std::size_t target = 150) {
  detail::require_sequence(x, "temporal_resample");
  if (target == 0) throw ShapeError("temporal_resample: target length must be positive");
  const std::size_t frames = x.dim(1), n = x.dim(2);
  Tensor out({3, target, n});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < target; ++i) {
      const std::size_t src = i * frames / target;
      std::copy_n(x.raw() + (c * frames + src) * n, n, out.raw() + (c * target + i) * n);
    }
  return out;
}

enum class CropMode { Random, Center };

/// First frame of a `length`-frame window: uniform in [0, T - length] or centered.
template <class Rng>
std::size_t crop_start(std::size_t frames, std::size_t length, CropMode mode, Rng& rng) {
  if (length == 0 || length > frames) throw ShapeError("crop_window: length must be in [1, T]");
  if (mode == CropMode::Center) return (frames - length) / 2;
  std::uniform_int_distribution<std::size_t> dist(0, frames - length);
  return dist(rng);
}

template <class Rng>
Tensor crop_window(const Tensor& x, CropMode mode, std::size_t length, Rng& rng) {
  detail::require_sequence(x, "crop_window");
  const std::size_t frames = x.dim(1), n = x.dim(2);
  const std::size_t start = crop_start(frames, length, mode, rng);
  Tensor out({3, length, n});
  for (std::size_t c = 0; c < 3; ++c) std::copy_n(x.raw() + (c * frames + start) * n, length * n, out.raw() + c * length * n);
  return out;
}

/// Horizontal mirror: negates x and swaps left/right nodes. Exact involution.
inline Tensor mirror(const Tensor& x, const SkeletonLayout& layout) {
  detail::require_sequence(x, "mirror");
  const std::size_t frames = x.dim(1), n = x.dim(2);
  Tensor out(x.shape());
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t k = 0; k < n; ++k) {
        const double v = x[(c * frames + t) * n + layout.flip_pair[k]];
        out[(c * frames + t) * n + k] = c == 0 ? -v : v;
      }
  return out;
}

/// Subtracts the per-sequence mean of the x and y channels over (T, N).
inline Tensor center(const Tensor& x) {
  detail::require_sequence(x, "center");
  const std::size_t count = x.dim(1) * x.dim(2);
  Tensor out = x;
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < count; ++i) s += x[c * count + i];
    const double mean = s / static_cast<double>(count);
    for (std::size_t i = 0; i < count; ++i) out[c * count + i] -= mean;
  }
  return out;
}

enum class FlipPolicy { Random, Never, Always };

struct AugmentConfig {
  /// Noise and flips are applied only in training mode; centering always.
  bool train = true;
  double noise_max = 20.0;
  double flip_prob = 0.5;
  FlipPolicy flip = FlipPolicy::Random;
};

/// Centering, then (training only) uniform noise in [-noise_max, noise_max] on
/// every x/y coordinate, then a horizontal flip with probability flip_prob.
/// Flipping negates x about zero, which is the sequence mean after centering.
template <class Rng>
Tensor augment(const Tensor& x, const AugmentConfig& cfg, const SkeletonLayout& layout, Rng& rng) {
  Tensor out = center(x);
  if (!cfg.train) return out;
  const std::size_t count = x.dim(1) * x.dim(2);
  if (cfg.noise_max > 0.0) {
    std::uniform_real_distribution<double> noise(-cfg.noise_max, cfg.noise_max);
    for (std::size_t i = 0; i < 2 * count; ++i) out[i] += noise(rng);
  }
  bool flip = cfg.flip == FlipPolicy::Always;
  if (cfg.flip == FlipPolicy::Random) flip = std::bernoulli_distribution(cfg.flip_prob)(rng);
  return flip ? mirror(out, layout) : out;
}

/// Sampling/augmentation/stream settings turning a raw sequence into model input.
struct InputPipeline {
  std::size_t canonical_length = 150;
  std::size_t crop_length = 120;
  double noise_max = 20.0;
  double flip_prob = 0.5;
  StreamKind stream = StreamKind::Joint;
};

/// Resample -> crop -> augment -> derive stream. Training uses a random crop plus
/// noise and flips; evaluation uses the centered window and centering only.
template <class Rng>
Tensor prepare_input(const Tensor& raw, const InputPipeline& p, bool train, const SkeletonLayout& layout, Rng& rng) {
  Tensor x = temporal_resample(raw, p.canonical_length);
  x = crop_window(x, train ? CropMode::Random : CropMode::Center, p.crop_length, rng);
  AugmentConfig cfg;
  cfg.train = train;
  cfg.noise_max = p.noise_max;
  cfg.flip_prob = p.flip_prob;
  x = augment(x, cfg, layout, rng);
  return derive_stream(x, p.stream, layout);
}

/// Deterministic generator for (seed, sample index, epoch).
inline std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t sample, std::uint64_t epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(sample), static_cast<std::uint32_t>(epoch)};
  return std::mt19937_64(seq);
}

}  // namespace slr
