#pragma once

// Checkpoint container (little-endian):
//   char[8] "SLRCKPT1"
//   u32     header length H
//   H bytes JSON header {format_version, model_config, pipeline, meta, tensors: [{name, shape}]}
//   f64 payloads, one per header tensor, in header order
//
// Tensors are the parameters in name order followed by "<norm>.running_mean"
// and "<norm>.running_var" for every normalization buffer.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "slr/dataio.hpp"
#include "slr/model.hpp"
#include "slr/streams.hpp"

namespace slr {

inline constexpr char kCheckpointMagic[8] = {'S', 'L', 'R', 'C', 'K', 'P', 'T', '1'};
inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json pipeline_to_json(const InputPipeline& p) {
  return {{"canonical_length", p.canonical_length},
          {"crop_length", p.crop_length},
          {"noise_max", p.noise_max},
          {"flip_prob", p.flip_prob},
          {"stream", to_string(p.stream)}};
}

inline InputPipeline pipeline_from_json(const nlohmann::json& j) {
  InputPipeline p;
  p.canonical_length = j.at("canonical_length").get<std::size_t>();
  p.crop_length = j.at("crop_length").get<std::size_t>();
  p.noise_max = j.at("noise_max").get<double>();
  p.flip_prob = j.at("flip_prob").get<double>();
  p.stream = parse_stream_kind(j.at("stream").get<std::string>());
  return p;
}

struct Checkpoint {
  Model model;
  InputPipeline pipeline;
  nlohmann::json meta = nlohmann::json::object();
};

namespace detail {

inline std::vector<std::pair<std::string, const Tensor*>> checkpoint_tensors(const Model& m) {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (const auto& [name, p] : m.store().params()) out.emplace_back(name, &p.value);
  for (const auto& [name, n] : m.store().norms()) {
    out.emplace_back(name + ".running_mean", &n.running_mean);
    out.emplace_back(name + ".running_var", &n.running_var);
  }
  return out;
}

inline Tensor* checkpoint_slot(Model& m, const std::string& name) {
  auto& store = m.store();
  if (store.contains(name)) return &store.get(name).value;
  for (const char* suffix : {".running_mean", ".running_var"}) {
    const std::string s = suffix;
    if (name.size() > s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0) {
      auto it = store.norms().find(name.substr(0, name.size() - s.size()));
      if (it == store.norms().end()) return nullptr;
      return s == ".running_mean" ? &it->second.running_mean : &it->second.running_var;
    }
  }
  return nullptr;
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
  const auto tensors = detail::checkpoint_tensors(ck.model);
  nlohmann::json list = nlohmann::json::array();
  for (const auto& [name, t] : tensors) list.push_back({{"name", name}, {"shape", t->shape()}});
  const nlohmann::json header{{"format_version", kCheckpointVersion},
                              {"model_config", ck.model.config().to_json()},
                              {"pipeline", pipeline_to_json(ck.pipeline)},
                              {"meta", ck.meta},
                              {"tensors", list}};
  const std::string h = header.dump();
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_u32(out, static_cast<std::uint32_t>(h.size()));
  out += h;
  for (const auto& [_, t] : tensors)
    for (double v : t->data()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes, const SkeletonLayout& layout = default_layout(),
                                    const std::string& what = "checkpoint") {
  if (bytes.size() < sizeof kCheckpointMagic + 4) throw TruncatedFileError(what + ": header truncated");
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) throw BadMagicError(what + ": bad magic");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t hlen = detail::get_u32(p + 8);
  std::size_t pos = 12 + hlen;
  if (bytes.size() < pos) throw TruncatedFileError(what + ": header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(12, hlen));
    if (header.at("format_version").get<int>() != kCheckpointVersion) throw FormatError(what + ": unsupported version");
    Checkpoint ck{Model(ModelConfig::from_json(header.at("model_config")), 0, layout),
                  pipeline_from_json(header.at("pipeline")), header.value("meta", nlohmann::json::object())};
    std::size_t loaded = 0;
    for (const auto& entry : header.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<Shape>();
      Tensor* slot = detail::checkpoint_slot(ck.model, name);
      if (!slot) throw FormatError(what + ": unknown tensor '" + name + "'");
      if (slot->shape() != shape) {
        throw FormatError(what + ": tensor '" + name + "' has shape " + shape_str(shape) + ", model expects " +
                          shape_str(slot->shape()));
      }
      if (bytes.size() < pos + 8 * slot->size()) throw TruncatedFileError(what + ": payload truncated at '" + name + "'");
      for (auto& v : slot->storage()) {
        v = std::bit_cast<double>(detail::get_u64(p + pos));
        pos += 8;
      }
      require_finite(*slot, what + ": " + name);
      ++loaded;
    }
    if (loaded != detail::checkpoint_tensors(ck.model).size()) throw FormatError(what + ": missing tensors");
    if (pos != bytes.size()) throw FormatError(what + ": trailing bytes");
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(what + ": malformed header (" + e.what() + ")");
  }
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  atomic_write(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path, const SkeletonLayout& layout = default_layout()) {
  return decode_checkpoint(read_file(path), layout, path.string());
}

}  // namespace slr
