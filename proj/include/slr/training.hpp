#pragma once

// Optimizer, learning-rate schedule, the epoch loop, evaluation metrics and
// late fusion of per-stream score files.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slr/autodiff.hpp"
#include "slr/checkpoint.hpp"
#include "slr/dataio.hpp"
#include "slr/model.hpp"
#include "slr/streams.hpp"

namespace slr {

struct TrainConfig {
  std::size_t epochs = 250;
  double lr = 0.1;
  std::vector<std::size_t> lr_decay_epochs{150, 200};
  double lr_decay_factor = 0.1;
  double weight_decay = 1e-4;
  double momentum = 0.9;
  std::size_t batch_size = 24;
  std::uint64_t seed = 0;
  StreamKind stream = StreamKind::Joint;
  /// Global gradient-norm cap; 0 disables clipping.
  double clip_grad_norm = 0.0;
  std::size_t canonical_length = 150;
  std::size_t crop_length = 120;
  double noise_max = 20.0;
  double flip_prob = 0.5;

  void validate() const {
    auto fail = [](const std::string& m) { throw ValidationError("train config: " + m); };
    if (epochs == 0) fail("epochs must be positive");
    if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be > 0");
    for (std::size_t i = 0; i < lr_decay_epochs.size(); ++i) {
      if (i && lr_decay_epochs[i] <= lr_decay_epochs[i - 1]) fail("lr_decay_epochs must be strictly increasing");
      if (lr_decay_epochs[i] >= epochs) fail("lr_decay_epochs must be < epochs");
    }
    if (!(lr_decay_factor > 0.0)) fail("lr_decay_factor must be > 0");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0, 1)");
    if (batch_size == 0) fail("batch_size must be positive");
    if (!(clip_grad_norm >= 0.0)) fail("clip_grad_norm must be >= 0");
    if (crop_length == 0 || crop_length > canonical_length) fail("crop_length must lie in [1, canonical_length]");
    if (!(noise_max >= 0.0)) fail("noise_max must be >= 0");
    if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) fail("flip_prob must lie in [0, 1]");
  }

  InputPipeline pipeline() const { return {canonical_length, crop_length, noise_max, flip_prob, stream}; }

  nlohmann::json to_json() const {
    return {{"epochs", epochs},
            {"lr", lr},
            {"lr_decay_epochs", lr_decay_epochs},
            {"lr_decay_factor", lr_decay_factor},
            {"weight_decay", weight_decay},
            {"momentum", momentum},
            {"batch_size", batch_size},
            {"seed", seed},
            {"stream", to_string(stream)},
            {"clip_grad_norm", clip_grad_norm},
            {"canonical_length", canonical_length},
            {"crop_length", crop_length},
            {"noise_max", noise_max},
            {"flip_prob", flip_prob}};
  }

  /// Fields absent from `j` keep the values already in `base`.
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig base) {
    try {
      auto take = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
      };
      take("epochs", base.epochs);
      take("lr", base.lr);
      take("lr_decay_epochs", base.lr_decay_epochs);
      take("lr_decay_factor", base.lr_decay_factor);
      take("weight_decay", base.weight_decay);
      take("momentum", base.momentum);
      take("batch_size", base.batch_size);
      take("seed", base.seed);
      if (j.contains("stream")) base.stream = parse_stream_kind(j["stream"].get<std::string>());
      take("clip_grad_norm", base.clip_grad_norm);
      take("canonical_length", base.canonical_length);
      take("crop_length", base.crop_length);
      take("noise_max", base.noise_max);
      take("flip_prob", base.flip_prob);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("train config JSON: ") + e.what());
    }
    base.validate();
    return base;
  }
};

/// The default milestones (150, 200 of 250) placed at the same fractions of `epochs`.
inline std::vector<std::size_t> default_lr_milestones(std::size_t epochs) {
  std::vector<std::size_t> out;
  for (std::size_t m : {epochs * 150 / 250, epochs * 200 / 250})
    if (m > 0 && (out.empty() || m > out.back())) out.push_back(m);
  return out;
}

/// lr * factor^(number of decay epochs <= epoch).
inline double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  double lr = cfg.lr;
  for (auto e : cfg.lr_decay_epochs)
    if (epoch >= e) lr *= cfg.lr_decay_factor;
  return lr;
}

/// SGD with momentum: v <- mu v + g + wd p (wd only where Param::decay),
/// p <- p - lr v, then gradients are zeroed.
class Sgd {
 public:
  void step(std::span<Param* const> params, double lr, double momentum, double weight_decay) {
    for (Param* p : params) {
      auto [it, fresh] = velocity_.try_emplace(p->name, p->value.shape());
      Tensor& v = it->second;
      if (v.shape() != p->value.shape()) throw ShapeError("sgd: velocity shape changed for '" + p->name + "'");
      const double wd = p->decay ? weight_decay : 0.0;
      double* vv = v.raw();
      double* pv = p->value.raw();
      const double* g = p->grad.raw();
      for (std::size_t i = 0, n = v.size(); i < n; ++i) {
        vv[i] = momentum * vv[i] + g[i] + wd * pv[i];
        pv[i] -= lr * vv[i];
      }
      p->zero_grad();
    }
  }

  const std::map<std::string, Tensor>& velocity() const { return velocity_; }

 private:
  std::map<std::string, Tensor> velocity_;
};

/// Scales all gradients so their joint L2 norm is at most `max_norm`; returns the pre-clip norm.
inline double clip_gradients(std::span<Param* const> params, double max_norm) {
  double sq = 0.0;
  for (const Param* p : params)
    for (double g : p->grad.data()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    for (Param* p : params) p->grad *= max_norm / norm;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Metrics.

struct EvalResult {
  double top1 = 0.0;
  double top5 = 0.0;
  double per_class_accuracy = 0.0;
  double per_instance_accuracy = 0.0;
  double loss = 0.0;
  std::size_t samples = 0;
  /// confusion[true][predicted].
  std::vector<std::vector<std::size_t>> confusion;
};

/// Index of the largest score; ties go to the lowest class.
inline std::size_t argmax(std::span<const double> scores) {
  return static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

/// Whether `label` is among the k highest scores (ties ranked by class index).
inline bool in_top_k(std::span<const double> scores, std::size_t label, std::size_t k) {
  std::size_t better = 0;
  for (std::size_t c = 0; c < scores.size(); ++c)
    better += scores[c] > scores[label] || (scores[c] == scores[label] && c < label);
  return better < k;
}

/// Top-1/top-5 and P-I/P-C from score rows. Per-class accuracy averages over
/// classes with at least one sample; loss is mean -log(score[label]) when `probabilities`.
inline EvalResult metrics_from_scores(const std::vector<std::vector<double>>& scores,
                                      const std::vector<std::size_t>& labels, std::size_t num_classes,
                                      bool probabilities = true) {
  if (scores.size() != labels.size()) throw ValidationError("metrics: score/label count mismatch");
  EvalResult r;
  r.samples = scores.size();
  r.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  if (scores.empty()) return r;
  std::size_t hit1 = 0, hit5 = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].size() != num_classes) throw ValidationError("metrics: score row has wrong class count");
    if (labels[i] >= num_classes) {
      throw ValidationError("class-count mismatch: label " + std::to_string(labels[i]) + " but model has " +
                            std::to_string(num_classes) + " classes");
    }
    const std::size_t pred = argmax(scores[i]);
    ++r.confusion[labels[i]][pred];
    hit1 += pred == labels[i];
    hit5 += in_top_k(scores[i], labels[i], 5);
    if (probabilities) loss -= std::log(std::max(scores[i][labels[i]], 1e-300));
  }
  const double n = static_cast<double>(scores.size());
  r.per_instance_accuracy = r.top1 = static_cast<double>(hit1) / n;
  r.top5 = static_cast<double>(hit5) / n;
  r.loss = loss / n;
  double class_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    const std::size_t total = std::accumulate(r.confusion[k].begin(), r.confusion[k].end(), std::size_t{0});
    if (!total) continue;
    class_sum += static_cast<double>(r.confusion[k][k]) / static_cast<double>(total);
    ++present;
  }
  r.per_class_accuracy = class_sum / static_cast<double>(present);
  return r;
}

// ---------------------------------------------------------------------------
// Score files: JSON-lines {"id": ..., "scores": [K floats]}.

struct ScoreRow {
  std::string id;
  std::vector<double> scores;
};

inline std::string format_scores(const std::vector<ScoreRow>& rows) {
  std::string out;
  for (const auto& r : rows) out += nlohmann::json{{"id", r.id}, {"scores", r.scores}}.dump() + "\n";
  return out;
}

inline std::vector<ScoreRow> parse_scores(const std::string& text, const std::string& what = "scores") {
  std::vector<ScoreRow> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      rows.push_back({j.at("id").get<std::string>(), j.at("scores").get<std::vector<double>>()});
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(what + ":" + std::to_string(line_no) + ": malformed score row (" + e.what() + ")");
    }
  }
  return rows;
}

inline void write_scores(const fs::path& path, const std::vector<ScoreRow>& rows) { atomic_write(path, format_scores(rows)); }

inline std::vector<ScoreRow> read_scores(const fs::path& path) { return parse_scores(read_file(path), path.string()); }

struct FusionResult {
  EvalResult metrics;
  std::vector<ScoreRow> fused;  // sorted by id
};

/// Per-id arithmetic mean of the score sets, then metrics against `labels`.
/// Every set must cover the same ids with the same class count and rows summing to 1 +- 1e-6.
inline FusionResult fuse(const std::vector<std::vector<ScoreRow>>& sets, const std::map<std::string, std::size_t>& labels) {
  if (sets.empty()) throw ValidationError("fuse: no score sets");
  std::size_t classes = 0;
  std::map<std::string, std::vector<const std::vector<double>*>> parts;
  for (std::size_t s = 0; s < sets.size(); ++s) {
    std::set<std::string> ids;
    for (const auto& row : sets[s]) {
      if (!ids.insert(row.id).second) throw ValidationError("fuse: duplicate id '" + row.id + "' in set " + std::to_string(s));
      if (row.scores.empty()) throw ValidationError("fuse: empty score row for '" + row.id + "'");
      if (!classes) classes = row.scores.size();
      if (row.scores.size() != classes) throw ValidationError("fuse: class count mismatch for '" + row.id + "'");
      double total = 0.0;
      for (double v : row.scores) {
        if (!std::isfinite(v) || v < 0.0) throw ValidationError("fuse: invalid score for '" + row.id + "'");
        total += v;
      }
      if (std::abs(total - 1.0) > 1e-6) {
        throw ValidationError("fuse: scores for '" + row.id + "' sum to " + std::to_string(total) + ", expected 1");
      }
      if (s == 0) {
        parts[row.id].push_back(&row.scores);
      } else {
        auto it = parts.find(row.id);
        if (it == parts.end()) throw ValidationError("fuse: id '" + row.id + "' missing from set 0");
        it->second.push_back(&row.scores);
      }
    }
    if (ids.size() != parts.size()) throw ValidationError("fuse: set " + std::to_string(s) + " covers a different id set");
  }
  FusionResult out;
  std::vector<std::vector<double>> scores;
  std::vector<std::size_t> truth;
  std::vector<double> terms(sets.size());
  for (const auto& [id, rows] : parts) {
    // Summing sorted terms makes the mean bit-identical under any set order.
    std::vector<double> v(classes);
    for (std::size_t c = 0; c < classes; ++c) {
      for (std::size_t s = 0; s < rows.size(); ++s) terms[s] = (*rows[s])[c];
      std::sort(terms.begin(), terms.end());
      for (double t : terms) v[c] += t;
      v[c] /= static_cast<double>(sets.size());
    }
    auto it = labels.find(id);
    if (it == labels.end()) throw ValidationError("fuse: no label for id '" + id + "'");
    scores.push_back(v);
    truth.push_back(it->second);
    out.fused.push_back({id, v});
  }
  out.metrics = metrics_from_scores(scores, truth, classes);
  return out;
}

inline std::map<std::string, std::size_t> labels_of(const DatasetManifest& m) {
  std::map<std::string, std::size_t> out;
  for (const auto& e : m.entries) out[e.id] = e.label;
  return out;
}

// ---------------------------------------------------------------------------
// Epoch loop and evaluation.

struct EpochRecord {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  double top1 = 0.0;
  double top5 = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;

  nlohmann::json to_json() const {
    return {{"epoch", epoch}, {"split", split}, {"loss", loss}, {"top1", top1}, {"top5", top5}, {"lr", lr}, {"wall_ms", wall_ms}};
  }
};

using MetricsSink = std::function<void(const EpochRecord&)>;

/// Stacks prepared samples [3, T, N] into [B, 3, T, N].
inline Tensor stack_batch(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ShapeError("stack_batch: empty batch");
  Shape shape{xs.size()};
  shape.insert(shape.end(), xs[0].shape().begin(), xs[0].shape().end());
  Tensor out(shape);
  const std::size_t n = xs[0].size();
  for (std::size_t b = 0; b < xs.size(); ++b) {
    if (xs[b].shape() != xs[0].shape()) throw ShapeError("stack_batch: ragged batch");
    std::copy_n(xs[b].raw(), n, out.raw() + b * n);
  }
  return out;
}

/// Eval-mode forward with the centered window; softmax rows go to `rows` when given.
inline EvalResult evaluate(Model& model, const std::vector<Sample>& samples, const InputPipeline& pipeline,
                           const SkeletonLayout& layout = default_layout(), std::size_t batch_size = 24,
                           std::vector<ScoreRow>* rows = nullptr) {
  const std::size_t classes = model.config().num_classes;
  for (const auto& s : samples) {
    if (s.label >= classes) {
      throw ValidationError("class-count mismatch: sample '" + s.id + "' has label " + std::to_string(s.label) +
                            " but the model has " + std::to_string(classes) + " classes");
    }
    if (s.data.rank() != 3 || s.data.dim(2) != model.config().num_nodes) {
      throw ValidationError("node-count mismatch: sample '" + s.id + "' does not have " +
                            std::to_string(model.config().num_nodes) + " nodes");
    }
  }
  std::vector<std::vector<double>> scores;
  std::vector<std::size_t> labels;
  std::mt19937_64 unused(0);
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    std::vector<Tensor> xs;
    for (std::size_t i = start; i < end; ++i) xs.push_back(prepare_input(samples[i].data, pipeline, false, layout, unused));
    Tape tape;
    tape.set_grad_enabled(false);
    ForwardOptions opt;
    opt.mode = NormMode::Eval;
    const Tensor probs = slr::softmax(model.forward(tape, stack_batch(xs), opt).value(), 1);
    for (std::size_t b = 0; b < end - start; ++b) {
      scores.emplace_back(probs.raw() + b * classes, probs.raw() + (b + 1) * classes);
      labels.push_back(samples[start + b].label);
      if (rows) rows->push_back({samples[start + b].id, scores.back()});
    }
  }
  return metrics_from_scores(scores, labels, classes);
}

inline EvalResult evaluate(Checkpoint& ck, const std::vector<Sample>& samples, const SkeletonLayout& layout = default_layout(),
                           std::size_t batch_size = 24, std::vector<ScoreRow>* rows = nullptr) {
  return evaluate(ck.model, samples, ck.pipeline, layout, batch_size, rows);
}

/// Runs the epoch loop and returns the final model. Per epoch the sink receives
/// a "train" record (running loss/accuracy under augmentation) and, when
/// `val` is non-empty, a "val" record from evaluate().
///
/// Sample i in epoch e draws its crop, noise and flip from sample_rng(seed, i, e);
/// the batch order comes from sample_rng(seed, -1, e).
inline Checkpoint train(const std::vector<Sample>& train_set, const std::vector<Sample>& val, const ModelConfig& model_cfg,
                        const TrainConfig& cfg, const MetricsSink& sink = {},
                        const SkeletonLayout& layout = default_layout()) {
  cfg.validate();
  if (train_set.empty()) throw ValidationError("train: empty training set");
  Checkpoint ck{Model(model_cfg, cfg.seed, layout), cfg.pipeline(), {{"train_config", cfg.to_json()}}};
  Model& model = ck.model;
  for (const auto& s : train_set) {
    if (s.label >= model_cfg.num_classes) {
      throw ValidationError("class-count mismatch: sample '" + s.id + "' has label " + std::to_string(s.label));
    }
  }
  std::vector<Param*> params = model.store().list();
  Sgd sgd;
  const std::size_t classes = model_cfg.num_classes;
  std::vector<std::size_t> order(train_set.size());

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at(epoch, cfg);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto shuffle_rng = sample_rng(cfg.seed, ~std::uint64_t{0}, epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::size_t hit1 = 0, hit5 = 0, seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<Tensor> xs;
      std::vector<std::size_t> labels;
      for (std::size_t i = start; i < end; ++i) {
        auto rng = sample_rng(cfg.seed, order[i], epoch);
        xs.push_back(prepare_input(train_set[order[i]].data, ck.pipeline, true, layout, rng));
        labels.push_back(train_set[order[i]].label);
      }
      Tape tape;
      ForwardOptions opt;
      opt.mode = NormMode::Train;
      try {
        Var logits = model.forward(tape, stack_batch(xs), opt);
        Var loss = ad::cross_entropy(logits, labels);
        if (!std::isfinite(loss.value().item())) throw NonFiniteError("cross_entropy produced a non-finite loss");
        tape.backward(loss);
        for (const Param* p : params)
          if (!p->grad.all_finite()) throw NonFiniteError("gradient of '" + p->name + "' is non-finite");
        loss_sum += loss.value().item() * static_cast<double>(labels.size());
        const Tensor& z = logits.value();
        for (std::size_t b = 0; b < labels.size(); ++b) {
          std::span<const double> row(z.raw() + b * classes, classes);
          hit1 += argmax(row) == labels[b];
          hit5 += in_top_k(row, labels[b], 5);
        }
        seen += labels.size();
      } catch (const NonFiniteError& e) {
        throw NonFiniteError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(start / cfg.batch_size) + ": " + e.what());
      }
      if (cfg.clip_grad_norm > 0.0) clip_gradients(params, cfg.clip_grad_norm);
      sgd.step(params, lr, cfg.momentum, cfg.weight_decay);
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (sink) {
      sink({epoch, "train", loss_sum / static_cast<double>(seen), static_cast<double>(hit1) / static_cast<double>(seen),
            static_cast<double>(hit5) / static_cast<double>(seen), lr, ms});
    }
    if (!val.empty() && sink) {
      const auto v0 = std::chrono::steady_clock::now();
      const EvalResult r = evaluate(model, val, ck.pipeline, layout, cfg.batch_size);
      const double vms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - v0).count();
      sink({epoch, "val", r.loss, r.top1, r.top5, lr, vms});
    }
  }
  return ck;
}

/// First-batch loss of a freshly initialized model (no parameter update).
inline double initial_loss(const std::vector<Sample>& train_set, const ModelConfig& model_cfg, const TrainConfig& cfg,
                           const SkeletonLayout& layout = default_layout()) {
  cfg.validate();
  Model model(model_cfg, cfg.seed, layout);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto shuffle_rng = sample_rng(cfg.seed, ~std::uint64_t{0}, 0);
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  std::vector<Tensor> xs;
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < std::min(cfg.batch_size, order.size()); ++i) {
    auto rng = sample_rng(cfg.seed, order[i], 0);
    xs.push_back(prepare_input(train_set[order[i]].data, cfg.pipeline(), true, layout, rng));
    labels.push_back(train_set[order[i]].label);
  }
  Tape tape;
  tape.set_grad_enabled(false);
  ForwardOptions opt;
  opt.mode = NormMode::Train;
  return ad::cross_entropy(model.forward(tape, stack_batch(xs), opt), labels).value().item();
}

}  // namespace slr
