#pragma once

// Command-line surface. run_cli() is the whole program minus process setup,
// so tests drive it in-process.
//
// Exit codes: 0 success, 1 invalid input (flags, configs, files), 2 runtime
// failure (divergence, failed gradient check, I/O).

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "slr/checkpoint.hpp"
#include "slr/dataio.hpp"
#include "slr/model.hpp"
#include "slr/model_check.hpp"
#include "slr/skeleton.hpp"
#include "slr/training.hpp"

namespace slr {

namespace cli {

inline nlohmann::json read_json_file(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("'" + path.string() + "': " + e.what());
  }
}

/// Config files hold {"model": {...}, "train": {...}}; an object with neither
/// key is read as a bare model config.
struct ConfigFile {
  nlohmann::json model = nlohmann::json::object();
  nlohmann::json train = nlohmann::json::object();
};

inline ConfigFile read_config(const std::string& path) {
  ConfigFile c;
  if (path.empty()) return c;
  const auto j = read_json_file(path);
  if (!j.is_object()) throw ValidationError("config '" + path + "' must be a JSON object");
  if (j.contains("model") || j.contains("train")) {
    c.model = j.value("model", nlohmann::json::object());
    c.train = j.value("train", nlohmann::json::object());
  } else {
    c.model = j;
  }
  return c;
}

inline SkeletonLayout read_layout(const std::string& path) {
  return path.empty() ? default_layout() : SkeletonLayout::from_json(read_json_file(path));
}

inline std::string percent(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * v << "%";
  return s.str();
}

/// Writes lines to `path.tmp` as they arrive and renames on commit(); an
/// uncommitted file is removed on destruction.
class StagedLines {
 public:
  explicit StagedLines(fs::path path) : path_(std::move(path)), tmp_(path_) {
    tmp_ += ".tmp";
    if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
    out_.open(tmp_, std::ios::trunc);
    if (!out_) throw Error("cannot write '" + tmp_.string() + "'");
  }
  ~StagedLines() {
    if (!committed_) {
      out_.close();
      std::error_code ec;
      fs::remove(tmp_, ec);
    }
  }
  void line(const std::string& s) { out_ << s << '\n' << std::flush; }
  void commit() {
    out_.close();
    fs::rename(tmp_, path_);
    committed_ = true;
  }

 private:
  fs::path path_, tmp_;
  std::ofstream out_;
  bool committed_ = false;
};

}  // namespace cli

inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Skeleton-based sign language recognition: preprocess, train, evaluate, fuse, inspect."};
  app.name("slr");
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  // layout dump
  auto* layout_cmd = app.add_subcommand("layout", "Skeleton layout utilities");
  layout_cmd->require_subcommand(1);
  auto* layout_dump = layout_cmd->add_subcommand("dump", "Print the default 27-node layout as JSON");
  std::string layout_out;
  layout_dump->add_option("--out", layout_out, "Write to this file instead of stdout");

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "Import keypoint dumps (<input>/<class>/<id>.jsonl) into a dataset");
  std::string pre_input, pre_layout, pre_out;
  pre->add_option("--input", pre_input, "Directory of per-class keypoint dumps")->required();
  pre->add_option("--layout", pre_layout, "Skeleton layout JSON (default: built-in 27-node layout)");
  pre->add_option("--out", pre_out, "Output dataset directory")->required();

  // synth
  auto* synth = app.add_subcommand("synth", "Generate the synthetic class-separable dataset");
  SyntheticSpec spec;
  synth->add_option("--classes", spec.num_classes, "Number of classes")->capture_default_str();
  synth->add_option("--per-class", spec.samples_per_class, "Samples per class")->capture_default_str();
  synth->add_option("--frames", spec.frames, "Frames per sequence")->capture_default_str();
  synth->add_option("--sigma", spec.noise_sigma, "Per-coordinate Gaussian noise in pixels")->capture_default_str();
  synth->add_option("--seed", spec.seed, "Generator seed")->capture_default_str();
  std::string synth_out;
  synth->add_option("--out", synth_out, "Output dataset directory")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train one stream on a dataset's train split");
  std::string tr_data, tr_stream, tr_config, tr_out, tr_scores, tr_metrics, tr_layout;
  std::optional<std::uint64_t> tr_seed;
  std::optional<std::size_t> tr_epochs, tr_batch;
  std::optional<double> tr_lr;
  std::size_t tr_workers = 1;
  tr->add_option("--data", tr_data, "Dataset directory (with manifest.json)")->required();
  tr->add_option("--stream", tr_stream, "Input stream: joint|bone|joint-motion|bone-motion");
  tr->add_option("--config", tr_config, "JSON config {\"model\": {...}, \"train\": {...}}; flags override it");
  tr->add_option("--out", tr_out, "Checkpoint path")->required();
  tr->add_option("--scores", tr_scores, "Write test-split softmax scores (JSON-lines) here");
  tr->add_option("--metrics", tr_metrics, "Metrics JSON-lines path (default: <out>.metrics.jsonl)");
  tr->add_option("--seed", tr_seed, "Seed for initialization, batching and augmentation");
  tr->add_option("--epochs", tr_epochs, "Epoch count");
  tr->add_option("--batch-size", tr_batch, "Batch size");
  tr->add_option("--lr", tr_lr, "Base learning rate");
  tr->add_option("--layout", tr_layout, "Skeleton layout JSON used at preprocessing time");
  tr->add_option("--workers", tr_workers, "Cap on data-loading threads (batch assembly runs on the training thread)")
      ->capture_default_str();

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  std::string ev_data, ev_ckpt, ev_scores, ev_split = "test", ev_layout;
  std::size_t ev_workers = 1;
  ev->add_option("--data", ev_data, "Dataset directory (with manifest.json)")->required();
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint path")->required();
  ev->add_option("--scores", ev_scores, "Write per-sample softmax scores (JSON-lines) here");
  ev->add_option("--split", ev_split, "train|val|test")->capture_default_str();
  ev->add_option("--layout", ev_layout, "Skeleton layout JSON used at preprocessing time");
  ev->add_option("--workers", ev_workers, "Cap on data-loading threads")->capture_default_str();

  // fuse
  auto* fu = app.add_subcommand("fuse", "Average four streams' softmax scores and report accuracy");
  std::vector<std::string> fu_scores;
  std::string fu_labels, fu_out;
  fu->add_option("--scores", fu_scores, "Four score files (joint, bone, joint-motion, bone-motion)")->required()->expected(4);
  fu->add_option("--labels", fu_labels, "Dataset manifest (file or dataset directory) providing labels")->required();
  fu->add_option("--out", fu_out, "Write fused scores (JSON-lines) here");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Central-difference gradient check of the full model loss");
  std::string gc_config;
  GradCheckOptions gc_opt;
  std::uint64_t gc_seed = 0;
  double gc_fault = 0.0;
  gc->add_option("--config", gc_config, "Model config JSON (default: miniature, 5 classes)");
  gc->add_option("--tol", gc_opt.tolerance, "Relative-error tolerance")->capture_default_str();
  gc->add_option("--eps", gc_opt.epsilon, "Finite-difference step")->capture_default_str();
  gc->add_option("--seed", gc_seed, "Seed for parameters, input and coordinate sampling")->capture_default_str();
  gc->add_option("--coords", gc_opt.coords_per_param, "Coordinates sampled per parameter")->capture_default_str();
  gc->add_option("--inject-fault", gc_fault, "Scale the head-input gradient by (1 + value) to exercise failure");

  // top-edges
  auto* te = app.add_subcommand("top-edges", "Dump the strongest learned spatial edges for one sample");
  std::string te_ckpt, te_sample, te_out, te_layout;
  double te_fraction = 0.05;
  std::optional<std::size_t> te_block;
  te->add_option("--ckpt", te_ckpt, "Checkpoint path")->required();
  te->add_option("--sample", te_sample, "Sequence file")->required();
  te->add_option("--fraction", te_fraction, "Fraction of the N*N entries to keep")->capture_default_str();
  te->add_option("--block", te_block, "Block index (default: last)");
  te->add_option("--layout", te_layout, "Skeleton layout JSON used at preprocessing time");
  te->add_option("--out", te_out, "Write JSON here instead of stdout");

  // params
  auto* pa = app.add_subcommand("params", "Report parameter counts per module");
  std::string pa_config;
  bool pa_json = false;
  pa->add_option("--config", pa_config, "Model config JSON (default: full model, 2000 classes)");
  pa->add_flag("--json", pa_json, "Emit JSON instead of a table");

  std::vector<const char*> argv{"slr"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (layout_dump->parsed()) {
      const std::string text = default_layout().to_json().dump(2) + "\n";
      if (layout_out.empty()) {
        out << text;
      } else {
        atomic_write(layout_out, text);
      }
      return 0;
    }

    if (pre->parsed()) {
      const auto layout = cli::read_layout(pre_layout);
      const auto m = preprocess_directory(pre_input, pre_out, layout);
      out << "preprocessed " << m.entries.size() << " sequences in " << m.num_classes << " classes -> " << pre_out << "\n";
      return 0;
    }

    if (synth->parsed()) {
      const auto d = generate_synthetic(spec);
      write_dataset(synth_out, d.manifest, d.samples, default_layout());
      out << "wrote " << d.samples.size() << " synthetic sequences (" << spec.num_classes << " classes, train/val/test "
          << d.manifest.split(Split::Train).size() << "/" << d.manifest.split(Split::Val).size() << "/"
          << d.manifest.split(Split::Test).size() << ") -> " << synth_out << "\n";
      return 0;
    }

    if (tr->parsed()) {
      if (tr_workers == 0) throw ValidationError("--workers must be at least 1");
      const auto layout = cli::read_layout(tr_layout);
      const auto manifest = load_manifest(tr_data);
      const auto file = cli::read_config(tr_config);
      ModelConfig base;
      base.num_classes = manifest.num_classes;
      base.num_nodes = layout.node_count;
      const ModelConfig mcfg = ModelConfig::from_json(file.model, base);
      if (mcfg.num_classes != manifest.num_classes) {
        throw ValidationError("class-count mismatch: config has " + std::to_string(mcfg.num_classes) +
                              " classes, dataset has " + std::to_string(manifest.num_classes));
      }
      TrainConfig tcfg = TrainConfig::from_json(file.train, TrainConfig{});
      if (!tr_stream.empty()) tcfg.stream = parse_stream_kind(tr_stream);
      if (tr_seed) tcfg.seed = *tr_seed;
      if (tr_epochs) tcfg.epochs = *tr_epochs;
      if (tr_batch) tcfg.batch_size = *tr_batch;
      if (tr_lr) tcfg.lr = *tr_lr;
      if (!file.train.contains("lr_decay_epochs")) tcfg.lr_decay_epochs = default_lr_milestones(tcfg.epochs);
      tcfg.validate();
      const auto train_set = load_split(tr_data, manifest, Split::Train, layout);
      const auto val_set = load_split(tr_data, manifest, Split::Val, layout);
      const auto test_set = load_split(tr_data, manifest, Split::Test, layout);
      if (train_set.empty()) throw ValidationError("dataset has an empty train split");

      cli::StagedLines metrics(tr_metrics.empty() ? tr_out + ".metrics.jsonl" : tr_metrics);
      EpochRecord last_train, last_val;
      auto ck = train(train_set, val_set, mcfg, tcfg, [&](const EpochRecord& r) {
        metrics.line(r.to_json().dump());
        (r.split == "train" ? last_train : last_val) = r;
      }, layout);
      std::vector<ScoreRow> rows;
      std::optional<EvalResult> test;
      if (!test_set.empty()) test = evaluate(ck, test_set, layout, tcfg.batch_size, &rows);
      ck.meta["final_train_loss"] = last_train.loss;
      if (!tr_scores.empty()) {
        if (!test) throw ValidationError("--scores requested but the test split is empty");
        write_scores(tr_scores, rows);
      }
      save_checkpoint(tr_out, ck);
      metrics.commit();
      out << "trained " << tcfg.epochs << " epochs on " << train_set.size() << " samples (stream " << to_string(tcfg.stream)
          << ", " << ck.model.param_count() << " parameters)\n";
      out << "final train loss " << last_train.loss << ", train top-1 " << cli::percent(last_train.top1) << "\n";
      if (!val_set.empty()) out << "val P-I " << cli::percent(last_val.top1) << "\n";
      if (test) out << "test P-I " << cli::percent(test->per_instance_accuracy) << "  P-C " << cli::percent(test->per_class_accuracy) << "\n";
      out << "checkpoint -> " << tr_out << "\n";
      return 0;
    }

    if (ev->parsed()) {
      if (ev_workers == 0) throw ValidationError("--workers must be at least 1");
      const auto layout = cli::read_layout(ev_layout);
      auto ck = load_checkpoint(ev_ckpt, layout);
      const auto manifest = load_manifest(ev_data);
      if (manifest.num_classes != ck.model.config().num_classes) {
        throw ValidationError("class-count mismatch: checkpoint has " + std::to_string(ck.model.config().num_classes) +
                              " classes, dataset has " + std::to_string(manifest.num_classes));
      }
      const auto samples = load_split(ev_data, manifest, parse_split(ev_split), layout);
      if (samples.empty()) throw ValidationError("split '" + ev_split + "' is empty");
      std::vector<ScoreRow> rows;
      const auto r = evaluate(ck, samples, layout, 24, &rows);
      if (!ev_scores.empty()) write_scores(ev_scores, rows);
      out << "samples " << r.samples << "  P-I " << cli::percent(r.per_instance_accuracy) << "  P-C "
          << cli::percent(r.per_class_accuracy) << "  top-5 " << cli::percent(r.top5) << "\n";
      return 0;
    }

    if (fu->parsed()) {
      std::vector<std::vector<ScoreRow>> sets;
      for (const auto& f : fu_scores) sets.push_back(read_scores(f));
      const auto manifest = load_manifest(fu_labels);
      const auto fused = fuse(sets, labels_of(manifest));
      if (!fu_out.empty()) write_scores(fu_out, fused.fused);
      out << "fused " << sets.size() << " streams over " << fused.metrics.samples << " samples  P-I "
          << cli::percent(fused.metrics.per_instance_accuracy) << "  P-C " << cli::percent(fused.metrics.per_class_accuracy)
          << "  top-5 " << cli::percent(fused.metrics.top5) << "\n";
      return 0;
    }

    if (gc->parsed()) {
      ModelGradCheck setup;
      setup.seed = gc_seed;
      setup.grad_fault = gc_fault;
      if (!gc_config.empty()) setup.config = ModelConfig::from_json(cli::read_config(gc_config).model, ModelConfig::miniature(5));
      if (!(gc_opt.epsilon > 0.0) || !(gc_opt.tolerance > 0.0)) throw ValidationError("--eps and --tol must be positive");
      const auto report = check_model_gradients(setup, gc_opt);
      for (const auto& p : report.params) {
        out << std::left << std::setw(36) << p.name << " max_rel_err " << std::scientific << std::setprecision(3)
            << p.max_rel_error << std::defaultfloat << "  coords " << p.coords_checked << "\n";
      }
      out << "worst parameter: " << report.worst_param << " (" << std::scientific << std::setprecision(3)
          << report.max_rel_error << ", tol " << report.tolerance << ")" << std::defaultfloat << "\n";
      out << (report.pass ? "PASS" : "FAIL") << "\n";
      if (!report.pass) {
        err << "gradient check failed: " << report.worst_param << " exceeds tolerance\n";
        return 2;
      }
      return 0;
    }

    if (te->parsed()) {
      const auto layout = cli::read_layout(te_layout);
      auto ck = load_checkpoint(te_ckpt, layout);
      if (!fs::exists(te_sample)) throw ValidationError("sample '" + te_sample + "' does not exist");
      const Tensor raw = read_sequence(te_sample, layout);
      if (!(te_fraction > 0.0 && te_fraction <= 1.0)) throw ValidationError("--fraction must lie in (0, 1]");
      const auto& blocks = ck.model.blocks();
      const std::size_t b = te_block.value_or(blocks.size() - 1);
      if (b >= blocks.size()) throw ValidationError("--block out of range");
      Tensor graph;
      if (blocks[b].spatial == SpatialMode::GraphCorrelation) {
        std::mt19937_64 unused(0);
        Tensor x = prepare_input(raw, ck.pipeline, false, layout, unused);
        x.reshape({1, x.dim(0), x.dim(1), x.dim(2)});
        Tape tape;
        tape.set_grad_enabled(false);
        ForwardTrace trace;
        ForwardOptions opt;
        opt.trace = &trace;
        ck.model.forward(tape, x, opt);
        const Tensor& a = trace.adjacency.at(b);
        graph = a.reshaped({a.dim(1), a.dim(2), a.dim(3)});
      } else if (blocks[b].spatial == SpatialMode::LearnableGraphBaseline) {
        graph = blocks[b].baseline.graph->value;
      } else {
        graph = blocks[b].baseline.fixed_graph;
      }
      nlohmann::json rows = nlohmann::json::array();
      for (const auto& e : top_edges(graph, te_fraction)) {
        rows.push_back({{"from", layout.node_names[e.from]}, {"to", layout.node_names[e.to]}, {"weight", e.weight}});
      }
      const std::string text = rows.dump(2) + "\n";
      if (te_out.empty()) {
        out << text;
      } else {
        atomic_write(te_out, text);
      }
      return 0;
    }

    if (pa->parsed()) {
      const ModelConfig cfg = ModelConfig::from_json(cli::read_config(pa_config).model, ModelConfig{});
      const Model model(cfg, 0);
      const auto breakdown = model.param_breakdown();
      const std::size_t total = model.param_count();
      if (pa_json) {
        out << nlohmann::json{{"modules", breakdown}, {"total", total}}.dump(2) << "\n";
      } else {
        for (const auto& [name, n] : breakdown) out << std::left << std::setw(16) << name << n << "\n";
        out << std::left << std::setw(16) << "total" << total << "  (" << std::fixed << std::setprecision(2)
            << static_cast<double>(total) / 1e6 << "M)" << std::defaultfloat << "\n";
        out << "(spatio-temporal attention (STC) module not included)\n";
      }
      return 0;
    }
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace slr
