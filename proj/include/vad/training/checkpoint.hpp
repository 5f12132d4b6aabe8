#pragma once

// Single-file checkpoint: "VADCKPT1", a little-endian u64 manifest length, the JSON
// manifest, then every parameter as little-endian IEEE doubles in manifest order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "vad/core/error.hpp"
#include "vad/core/jsonl.hpp"
#include "vad/ssl/model.hpp"
#include "vad/training/gradnorm.hpp"

namespace vad::training {

inline constexpr char kCheckpointMagic[8] = {'V', 'A', 'D', 'C', 'K', 'P', 'T', '1'};

struct CheckpointMeta {
  std::string config_hash;
  GradNormState gradnorm;
  std::size_t epoch = 0;  // completed epochs overall
  int phase = 0;          // last phase trained
  std::size_t phase_epoch = 0;
  std::size_t optimizer_epoch = 0;
  json normalizers = json::object();
  json extra = json::object();
};

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    const int c = is.get();
    if (c == EOF) throw ArtifactError("checkpoint truncated");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

inline void put_double(std::ostream& os, double d) { put_u64(os, std::bit_cast<std::uint64_t>(d)); }
inline double get_double(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const ssl::MultiTaskModel& model, const CheckpointMeta& meta) {
  const auto params = model.parameters();
  json table = json::array();
  std::set<std::string> names;
  for (const auto& p : params) {
    if (!names.insert(p.name).second) throw Error("duplicate parameter name " + p.name);
    table.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  }
  const json manifest{{"format", "VADCKPT1"},
                      {"variant", ssl::to_string(model.config().encoder.variant)},
                      {"model", model.config()},
                      {"config_hash", meta.config_hash},
                      {"gradnorm", meta.gradnorm},
                      {"epoch", meta.epoch},
                      {"phase", meta.phase},
                      {"phase_epoch", meta.phase_epoch},
                      {"optimizer_epoch", meta.optimizer_epoch},
                      {"normalizers", meta.normalizers},
                      {"extra", meta.extra},
                      {"params", table}};
  const std::string text = manifest.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw ArtifactError("cannot write " + tmp);
    os.write(kCheckpointMagic, 8);
    detail::put_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : params)
      for (double v : p.tensor.data()) detail::put_double(os, v);
    if (!os) throw ArtifactError("short write " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

namespace detail {

struct ManifestRead {
  json manifest;
  std::streamoff blob_offset = 0;
};

inline ManifestRead read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ArtifactError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw ArtifactError("not a checkpoint: " + path.string());
  const auto len = detail::get_u64(is);
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw ArtifactError("checkpoint truncated");
  try {
    return {json::parse(text), static_cast<std::streamoff>(16 + len)};
  } catch (const json::exception& e) {
    throw ParseError("checkpoint manifest: " + std::string(e.what()));
  }
}

}  // namespace detail

// Manifest only, without touching weights.
inline json read_checkpoint_manifest(const std::filesystem::path& path) { return detail::read_manifest(path).manifest; }

inline CheckpointMeta meta_from_manifest(const json& m) {
  CheckpointMeta meta;
  meta.config_hash = m.at("config_hash").get<std::string>();
  meta.gradnorm = m.at("gradnorm").get<GradNormState>();
  meta.epoch = m.at("epoch").get<std::size_t>();
  meta.phase = m.at("phase").get<int>();
  meta.phase_epoch = m.value("phase_epoch", std::size_t{0});
  meta.optimizer_epoch = m.value("optimizer_epoch", std::size_t{0});
  meta.normalizers = m.value("normalizers", json::object());
  meta.extra = m.value("extra", json::object());
  return meta;
}

// Loads weights into `model`. A non-empty `expected_hash` that differs from the
// stored one is refused.
inline CheckpointMeta load_checkpoint(const std::filesystem::path& path, ssl::MultiTaskModel& model,
                                      const std::string& expected_hash = {}) {
  const auto [manifest, offset] = detail::read_manifest(path);
  CheckpointMeta meta = meta_from_manifest(manifest);
  if (!expected_hash.empty() && meta.config_hash != expected_hash)
    throw ResumeMismatchError("checkpoint " + path.string() + " was written for config " + meta.config_hash +
                              ", current config is " + expected_hash);
  const auto variant = manifest.at("variant").get<std::string>();
  if (variant != ssl::to_string(model.config().encoder.variant))
    throw ResumeMismatchError("checkpoint encoder variant " + variant + " does not match model");

  auto params = model.parameters();
  const auto& table = manifest.at("params");
  if (table.size() != params.size()) throw ResumeMismatchError("checkpoint parameter count differs from model");
  std::ifstream is(path, std::ios::binary);
  is.seekg(offset);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (table[i].at("name").get<std::string>() != params[i].name ||
        table[i].at("shape").get<nn::Shape>() != params[i].tensor.shape())
      throw ResumeMismatchError("checkpoint parameter " + table[i].at("name").get<std::string>() + " does not match " + params[i].name);
    auto dst = params[i].tensor.mutable_data();
    for (auto& v : dst) v = detail::get_double(is);
  }
  if (is.peek() != EOF) throw ArtifactError("checkpoint has trailing bytes");
  return meta;
}

}  // namespace vad::training
