#pragma once

// On-disk formats and dataset plumbing.
//
// Sequence file (little-endian):
//   0  char[4] "SKSQ"
//   4  u32     version (1)
//   8  u32     C
//   12 u32     T
//   16 u32     N
//   20 u64     layout hash (SkeletonLayout::hash)
//   28 f32[C*T*N] payload, row-major (C, T, N)
//
// A dataset directory holds manifest.json plus the files it references.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slr/error.hpp"
#include "slr/skeleton.hpp"
#include "slr/streams.hpp"
#include "slr/tensor.hpp"

namespace slr {

namespace fs = std::filesystem;

inline constexpr std::array<char, 4> kSequenceMagic{'S', 'K', 'S', 'Q'};
inline constexpr std::uint32_t kSequenceVersion = 1;
inline constexpr std::size_t kSequenceHeaderBytes = 28;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}
inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes via a sibling temporary and rename, so readers never see a partial file.
inline void atomic_write(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      fs::remove(tmp);
      throw Error("short write to '" + tmp.string() + "'");
    }
  }
  fs::rename(tmp, path);
}

struct SequenceHeader {
  std::uint32_t version = kSequenceVersion;
  std::uint32_t channels = 0, frames = 0, nodes = 0;
  std::uint64_t layout_hash = 0;
};

/// x[C, T, N] -> file bytes; values are narrowed to f32.
inline std::string encode_sequence(const Tensor& x, std::uint64_t layout_hash) {
  if (x.rank() != 3) throw ShapeError("encode_sequence: expected [C, T, N], got " + shape_str(x.shape()));
  require_finite(x, "sequence payload");
  std::string out(kSequenceMagic.begin(), kSequenceMagic.end());
  detail::put_u32(out, kSequenceVersion);
  for (std::size_t d = 0; d < 3; ++d) detail::put_u32(out, static_cast<std::uint32_t>(x.dim(d)));
  detail::put_u64(out, layout_hash);
  out.reserve(out.size() + 4 * x.size());
  for (double v : x.data()) detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

inline SequenceHeader decode_sequence_header(const std::string& bytes, const std::string& what = "sequence") {
  if (bytes.size() < kSequenceHeaderBytes) {
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), kSequenceMagic.data(), 4) != 0) {
      throw BadMagicError(what + ": bad magic");
    }
    throw TruncatedFileError(what + ": header truncated (" + std::to_string(bytes.size()) + " bytes)");
  }
  if (std::memcmp(bytes.data(), kSequenceMagic.data(), 4) != 0) throw BadMagicError(what + ": bad magic");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  SequenceHeader h;
  h.version = detail::get_u32(p + 4);
  h.channels = detail::get_u32(p + 8);
  h.frames = detail::get_u32(p + 12);
  h.nodes = detail::get_u32(p + 16);
  h.layout_hash = detail::get_u64(p + 20);
  if (h.version != kSequenceVersion) throw FormatError(what + ": unsupported version " + std::to_string(h.version));
  if (h.channels == 0 || h.frames == 0 || h.nodes == 0) throw FormatError(what + ": zero extent in header");
  return h;
}

/// Verifies magic, version, payload length and (when non-zero) the layout hash.
inline Tensor decode_sequence(const std::string& bytes, std::uint64_t expected_layout_hash,
                              const std::string& what = "sequence") {
  const SequenceHeader h = decode_sequence_header(bytes, what);
  const std::size_t count = static_cast<std::size_t>(h.channels) * h.frames * h.nodes;
  const std::size_t want = kSequenceHeaderBytes + 4 * count;
  if (bytes.size() < want) {
    throw TruncatedFileError(what + ": payload truncated (" + std::to_string(bytes.size()) + " of " +
                             std::to_string(want) + " bytes)");
  }
  if (bytes.size() > want) throw FormatError(what + ": " + std::to_string(bytes.size() - want) + " trailing bytes");
  if (expected_layout_hash != 0 && h.layout_hash != expected_layout_hash) {
    throw LayoutSkewError(what + ": layout hash mismatch (file was preprocessed with a different skeleton layout)");
  }
  std::vector<double> values(count);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + kSequenceHeaderBytes;
  for (std::size_t i = 0; i < count; ++i) values[i] = std::bit_cast<float>(detail::get_u32(p + 4 * i));
  Tensor x({h.channels, h.frames, h.nodes}, std::move(values));
  require_finite(x, what);
  return x;
}

inline void write_sequence(const fs::path& path, const Tensor& x, const SkeletonLayout& layout) {
  atomic_write(path, encode_sequence(x, layout.hash()));
}

inline Tensor read_sequence(const fs::path& path, const SkeletonLayout& layout) {
  return decode_sequence(read_file(path), layout.hash(), path.string());
}

// ---------------------------------------------------------------------------
// Manifest.

enum class Split { Train, Val, Test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ValidationError("unknown split '" + s + "' (expected train|val|test)");
}

struct ManifestEntry {
  std::string id;
  std::string path;  // relative to the dataset directory
  std::size_t label = 0;
  std::size_t frame_count = 0;
  Split split = Split::Train;
};

struct DatasetManifest {
  int version = 1;
  std::size_t num_classes = 0;
  std::vector<std::string> class_names;
  std::vector<ManifestEntry> entries;

  /// Unique ids, labels in range; with `root`, every path must exist.
  void validate(const fs::path* root = nullptr) const {
    if (num_classes == 0) throw ValidationError("manifest: num_classes must be positive");
    if (!class_names.empty() && class_names.size() != num_classes) {
      throw ValidationError("manifest: class_names has " + std::to_string(class_names.size()) + " entries, expected " +
                            std::to_string(num_classes));
    }
    std::set<std::string> ids;
    for (const auto& e : entries) {
      if (e.id.empty()) throw ValidationError("manifest: empty sample id");
      if (!ids.insert(e.id).second) throw ValidationError("manifest: duplicate id '" + e.id + "'");
      if (e.label >= num_classes) {
        throw ValidationError("manifest: label " + std::to_string(e.label) + " of '" + e.id + "' >= num_classes");
      }
      if (root && !fs::exists(*root / e.path)) {
        throw ValidationError("manifest: path '" + e.path + "' of '" + e.id + "' does not exist");
      }
    }
  }

  std::vector<const ManifestEntry*> split(Split s) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
      if (e.split == s) out.push_back(&e);
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json es = nlohmann::json::array();
    for (const auto& e : entries) {
      es.push_back({{"id", e.id},
                    {"path", e.path},
                    {"label", e.label},
                    {"frame_count", e.frame_count},
                    {"split", to_string(e.split)}});
    }
    return {{"version", version}, {"num_classes", num_classes}, {"class_names", class_names}, {"entries", es}};
  }

  static DatasetManifest from_json(const nlohmann::json& j) {
    try {
      DatasetManifest m;
      m.version = j.at("version").get<int>();
      if (m.version != 1) throw ValidationError("manifest: unsupported version " + std::to_string(m.version));
      m.num_classes = j.at("num_classes").get<std::size_t>();
      if (j.contains("class_names")) m.class_names = j["class_names"].get<std::vector<std::string>>();
      for (const auto& e : j.at("entries")) {
        ManifestEntry me;
        me.id = e.at("id").get<std::string>();
        me.path = e.at("path").get<std::string>();
        const auto label = e.at("label").get<long long>();
        if (label < 0) throw ValidationError("manifest: negative label for '" + me.id + "'");
        me.label = static_cast<std::size_t>(label);
        me.frame_count = e.at("frame_count").get<std::size_t>();
        me.split = parse_split(e.at("split").get<std::string>());
        m.entries.push_back(std::move(me));
      }
      m.validate();
      return m;
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("manifest JSON: ") + e.what());
    }
  }
};

inline const char* kManifestName = "manifest.json";

inline DatasetManifest load_manifest(const fs::path& dataset_dir) {
  const fs::path path = fs::is_directory(dataset_dir) ? dataset_dir / kManifestName : dataset_dir;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("manifest '" + path.string() + "': " + e.what());
  }
  auto m = DatasetManifest::from_json(j);
  const fs::path root = path.parent_path();
  m.validate(&root);
  return m;
}

/// Loads every sample of `split` listed in the dataset's manifest.
inline std::vector<Sample> load_split(const fs::path& dataset_dir, const DatasetManifest& m, Split split,
                                      const SkeletonLayout& layout) {
  std::vector<Sample> out;
  for (const ManifestEntry* e : m.split(split)) {
    Sample s;
    s.data = read_sequence(dataset_dir / e->path, layout);
    s.label = e->label;
    s.frame_count = s.data.dim(1);
    s.id = e->id;
    if (s.frame_count != e->frame_count) {
      throw FormatError("sample '" + e->id + "': manifest frame_count " + std::to_string(e->frame_count) +
                        " disagrees with file (" + std::to_string(s.frame_count) + ")");
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// Per-class split: the first M*20/100 samples (in id order) go to test,
/// the next M*10/100 to val, the rest to train.
inline void assign_stratified_splits(std::vector<ManifestEntry>& entries) {
  std::map<std::size_t, std::vector<ManifestEntry*>> by_class;
  for (auto& e : entries) by_class[e.label].push_back(&e);
  for (auto& [_, members] : by_class) {
    std::sort(members.begin(), members.end(), [](auto* a, auto* b) { return a->id < b->id; });
    const std::size_t n = members.size(), n_test = n * 20 / 100, n_val = n * 10 / 100;
    for (std::size_t i = 0; i < n; ++i) members[i]->split = i < n_test ? Split::Test : i < n_test + n_val ? Split::Val : Split::Train;
  }
}

/// Writes samples under `dir/sequences/` plus `dir/manifest.json`. The whole
/// directory is built beside `dir` and moved into place at the end. An existing
/// `dir` is replaced only when it is empty or holds a manifest.
inline void write_dataset(const fs::path& dir, DatasetManifest manifest, const std::vector<Sample>& samples,
                          const SkeletonLayout& layout) {
  if (manifest.entries.size() != samples.size()) throw ValidationError("write_dataset: entry/sample count mismatch");
  manifest.validate();
  if (fs::exists(dir) && !fs::is_empty(dir) && !fs::exists(dir / kManifestName)) {
    throw ValidationError("refusing to overwrite non-dataset directory '" + dir.string() + "'");
  }
  fs::path staging = dir;
  staging += ".partial";
  fs::remove_all(staging);
  try {
    fs::create_directories(staging / "sequences");
    for (std::size_t i = 0; i < samples.size(); ++i) {
      auto& e = manifest.entries[i];
      e.path = "sequences/" + e.id + ".skseq";
      e.frame_count = samples[i].data.dim(1);
      write_sequence(staging / e.path, samples[i].data, layout);
    }
    atomic_write(staging / kManifestName, manifest.to_json().dump(2) + "\n");
    fs::remove_all(dir);
    if (dir.has_parent_path()) fs::create_directories(dir.parent_path());
    fs::rename(staging, dir);
  } catch (...) {
    fs::remove_all(staging);
    throw;
  }
}

// ---------------------------------------------------------------------------
// Keypoint dumps: JSON-lines, one frame per line,
//   {"frame": 0, "keypoints": [[x, y, score], ... 133 entries]}

/// Parses a dump into [T, 133, 3]; frames must be listed in increasing order.
inline Tensor parse_keypoint_dump(const std::string& text, const std::string& what = "dump") {
  std::vector<double> values;
  std::size_t frames = 0;
  long long last_frame = -1;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = what + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError(where + ": malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object() || !j.contains("frame") || !j.contains("keypoints") || !j["keypoints"].is_array()) {
      throw ValidationError(where + ": expected {\"frame\": int, \"keypoints\": [[x, y, score], ...]}");
    }
    const auto frame = j["frame"].get<long long>();
    if (frame <= last_frame) throw ValidationError(where + ": frame numbers must increase");
    last_frame = frame;
    const auto& kp = j["keypoints"];
    if (kp.size() != kCocoWholeBodyKeypoints) {
      throw ValidationError(where + ": expected 133 keypoints, got " + std::to_string(kp.size()));
    }
    for (const auto& p : kp) {
      if (!p.is_array() || p.size() != 3) throw ValidationError(where + ": each keypoint must be [x, y, score]");
      for (const auto& v : p) {
        if (!v.is_number()) throw ValidationError(where + ": keypoint values must be numbers");
        const double d = v.get<double>();
        if (!std::isfinite(d)) throw ValidationError(where + ": non-finite keypoint value");
        values.push_back(d);
      }
    }
    ++frames;
  }
  if (frames == 0) throw ValidationError(what + ": no frames");
  return Tensor({frames, kCocoWholeBodyKeypoints, 3}, std::move(values));
}

/// Dump text -> [3, T, N] reduced to the layout.
inline Tensor import_coco133(const std::string& dump_text, const SkeletonLayout& layout, const std::string& what = "dump") {
  return reduce_coco133(parse_keypoint_dump(dump_text, what), layout);
}

inline std::string format_keypoint_dump(const Tensor& keypoints) {
  std::string out;
  for (std::size_t t = 0; t < keypoints.dim(0); ++t) {
    nlohmann::json kp = nlohmann::json::array();
    for (std::size_t k = 0; k < kCocoWholeBodyKeypoints; ++k) {
      const double* p = keypoints.raw() + (t * kCocoWholeBodyKeypoints + k) * 3;
      kp.push_back({p[0], p[1], p[2]});
    }
    out += nlohmann::json{{"frame", t}, {"keypoints", kp}}.dump() + "\n";
  }
  return out;
}

/// input/<class>/<id>.jsonl -> dataset at `out`. Classes are the sorted
/// subdirectory names; sample ids are "<class>_<stem>".
inline DatasetManifest preprocess_directory(const fs::path& input, const fs::path& out, const SkeletonLayout& layout) {
  if (!fs::is_directory(input)) throw ValidationError("input '" + input.string() + "' is not a directory");
  std::vector<std::string> classes;
  for (const auto& d : fs::directory_iterator(input))
    if (d.is_directory()) classes.push_back(d.path().filename().string());
  std::sort(classes.begin(), classes.end());
  DatasetManifest m;
  m.class_names = classes;
  m.num_classes = classes.size();
  std::vector<Sample> samples;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::vector<fs::path> files;
    for (const auto& f : fs::directory_iterator(input / classes[c]))
      if (f.is_regular_file() && f.path().extension() == ".jsonl") files.push_back(f.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      Sample s;
      s.data = import_coco133(read_file(f), layout, f.string());
      s.label = c;
      s.frame_count = s.data.dim(1);
      s.id = classes[c] + "_" + f.stem().string();
      ManifestEntry e;
      e.id = s.id;
      e.label = c;
      e.frame_count = s.frame_count;
      m.entries.push_back(e);
      samples.push_back(std::move(s));
    }
  }
  if (samples.empty()) throw ValidationError("input '" + input.string() + "' contains no <class>/<id>.jsonl dumps");
  assign_stratified_splits(m.entries);
  write_dataset(out, m, samples, layout);
  return m;
}

// ---------------------------------------------------------------------------
// Synthetic data.

struct SyntheticSpec {
  std::size_t num_classes = 10;
  std::size_t samples_per_class = 30;
  std::size_t frames = 150;
  double noise_sigma = 4.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_classes == 0 || samples_per_class == 0 || frames == 0) {
      throw ValidationError("synthetic spec: classes, samples per class and frames must be positive");
    }
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
      throw ValidationError("synthetic spec: noise sigma must be a finite value >= 0");
    }
  }
};

/// Rest pose of the default layout in pixels (x right, y down), one row per node.
inline std::vector<std::array<double, 2>> rest_pose() {
  std::vector<std::array<double, 2>> p(kSkeletonNodes);
  p[0] = {640, 200};  // nose
  p[1] = {625, 185};
  p[2] = {655, 185};
  p[3] = {560, 300};  // shoulders
  p[4] = {720, 300};
  p[5] = {530, 420};  // elbows
  p[6] = {750, 420};
  for (int side = 0; side < 2; ++side) {
    const double wrist_x = side == 0 ? 580 : 700, dir = side == 0 ? 1.0 : -1.0;
    for (std::size_t f = 0; f < 5; ++f) {
      const double spread = (static_cast<double>(f) - 2.0) * 12.0;
      p[7 + 10 * side + f] = {wrist_x + dir * spread, 360.0 - 10.0};
      p[12 + 10 * side + f] = {wrist_x + dir * spread * 1.3, 360.0 - 45.0};
    }
  }
  return p;
}

/// Class prototype [3, T, N]: the rest pose with class-specific sinusoidal
/// offsets on hand nodes (and a weaker echo on elbows), confidence 1.
inline Tensor synthetic_prototype(std::size_t cls, std::size_t frames, std::uint64_t seed) {
  std::mt19937_64 rng(sample_rng(seed, cls, 0xc1a55));
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi), amp(15.0, 35.0);
  const double freq = 0.5 + 0.5 * static_cast<double>(cls % 5) + std::uniform_real_distribution<double>(0.0, 0.25)(rng);
  const auto pose = rest_pose();
  const std::size_t n = kSkeletonNodes;
  Tensor x({3, frames, n});
  std::vector<double> ax(n, 0.0), ay(n, 0.0), px(n, 0.0), py(n, 0.0);
  for (std::size_t k = 5; k < n; ++k) {
    const double scale = k < 7 ? 0.3 : 1.0;
    ax[k] = scale * amp(rng);
    ay[k] = scale * amp(rng);
    px[k] = phase(rng);
    py[k] = phase(rng);
  }
  for (std::size_t t = 0; t < frames; ++t) {
    const double u = 2.0 * std::numbers::pi * freq * static_cast<double>(t) / static_cast<double>(frames);
    for (std::size_t k = 0; k < n; ++k) {
      x[(0 * frames + t) * n + k] = pose[k][0] + ax[k] * std::sin(u + px[k]);
      x[(1 * frames + t) * n + k] = pose[k][1] + ay[k] * std::sin(u + py[k]);
      x[(2 * frames + t) * n + k] = 1.0;
    }
  }
  return x;
}

struct SyntheticDataset {
  DatasetManifest manifest;
  std::vector<Sample> samples;  // parallel to manifest.entries

  std::vector<Sample> split(Split s) const {
    std::vector<Sample> out;
    for (std::size_t i = 0; i < samples.size(); ++i)
      if (manifest.entries[i].split == s) out.push_back(samples[i]);
    return out;
  }
};

/// prototype + N(0, sigma^2) per coordinate + a per-sample translation in [-50, 50] px.
inline SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticDataset d;
  d.manifest.num_classes = spec.num_classes;
  const std::size_t n = kSkeletonNodes, f = spec.frames;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    d.manifest.class_names.push_back("class" + std::to_string(c));
    const Tensor proto = synthetic_prototype(c, f, spec.seed);
    for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
      std::mt19937_64 rng(sample_rng(spec.seed, c * spec.samples_per_class + i, 0x5a4d));
      std::normal_distribution<double> noise(0.0, 1.0);
      std::uniform_real_distribution<double> shift(-50.0, 50.0);
      const double dx = shift(rng), dy = shift(rng);
      Sample s;
      s.data = proto;
      for (std::size_t t = 0; t < f; ++t)
        for (std::size_t k = 0; k < n; ++k) {
          s.data[(0 * f + t) * n + k] += dx + spec.noise_sigma * noise(rng);
          s.data[(1 * f + t) * n + k] += dy + spec.noise_sigma * noise(rng);
        }
      // Round-trip through f32 so in-memory and on-disk datasets agree bit for bit.
      for (auto& v : s.data.storage()) v = static_cast<float>(v);
      s.label = c;
      s.frame_count = f;
      char id[32];
      std::snprintf(id, sizeof id, "c%03zu_s%04zu", c, i);
      s.id = id;
      ManifestEntry e;
      e.id = s.id;
      e.label = c;
      e.frame_count = f;
      d.manifest.entries.push_back(e);
      d.samples.push_back(std::move(s));
    }
  }
  assign_stratified_splits(d.manifest.entries);
  return d;
}

/// Nearest class mean in L2 after centering; the separability oracle for synthetic data.
class NearestPrototype {
 public:
  void fit(const std::vector<Sample>& train, std::size_t num_classes) {
    if (train.empty()) throw ValidationError("nearest prototype: empty training set");
    means_.assign(num_classes, Tensor());
    std::vector<std::size_t> counts(num_classes, 0);
    for (const auto& s : train) {
      Tensor c = center(s.data);
      if (counts[s.label]++ == 0) {
        means_[s.label] = std::move(c);
      } else {
        means_[s.label] += c;
      }
    }
    for (std::size_t k = 0; k < num_classes; ++k)
      if (counts[k]) means_[k] *= 1.0 / static_cast<double>(counts[k]);
  }

  std::size_t predict(const Tensor& x) const {
    const Tensor c = center(x);
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < means_.size(); ++k) {
      if (means_[k].size() == 0 || means_[k].shape() != c.shape()) continue;
      const Tensor diff = c - means_[k];
      double d = 0.0;
      for (double v : diff.data()) d += v * v;
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    return best;
  }

  double accuracy(const std::vector<Sample>& samples) const {
    if (samples.empty()) return 0.0;
    std::size_t hit = 0;
    for (const auto& s : samples) hit += predict(s.data) == s.label;
    return static_cast<double>(hit) / static_cast<double>(samples.size());
  }

 private:
  std::vector<Tensor> means_;
};

}  // namespace slr
