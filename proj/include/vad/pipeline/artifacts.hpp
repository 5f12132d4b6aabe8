#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "vad/core/error.hpp"
#include "vad/core/hash.hpp"
#include "vad/core/jsonl.hpp"

namespace vad::pipeline {

namespace fs = std::filesystem;

inline constexpr const char* kStageVersion = "1";

// Stamped into every stage artifact. `input_hashes` and `data_hash` cover data
// only, so re-stamping an artifact under a new config hash leaves its consumers'
// inputs unchanged.
struct ArtifactMeta {
  std::string config_hash;
  std::string stage;
  std::string stage_version = kStageVersion;
  std::string stage_config_hash;
  json input_hashes = json::object();
  std::string data_hash;

  // Same computation: same stage config, version and inputs.
  bool same_work(const ArtifactMeta& o) const {
    return stage == o.stage && stage_version == o.stage_version && stage_config_hash == o.stage_config_hash &&
           input_hashes == o.input_hashes;
  }
};

inline void to_json(json& j, const ArtifactMeta& m) {
  j = json{{"config_hash", m.config_hash},
           {"stage", m.stage},
           {"stage_version", m.stage_version},
           {"stage_config_hash", m.stage_config_hash},
           {"input_hashes", m.input_hashes},
           {"data_hash", m.data_hash}};
}
inline void from_json(const json& j, ArtifactMeta& m) {
  m.config_hash = j.at("config_hash").get<std::string>();
  m.stage = j.at("stage").get<std::string>();
  m.stage_version = j.at("stage_version").get<std::string>();
  m.stage_config_hash = j.at("stage_config_hash").get<std::string>();
  m.input_hashes = j.at("input_hashes");
  m.data_hash = j.value("data_hash", "");
}

// Artifact file layouts:
//   .jsonl  first row {"meta": ...}, then data rows
//   .json   object with a "meta" key next to the data
//   other   binary file with a sidecar <file>.meta.json holding {"meta", ...}
enum class ArtifactKind { jsonl, json, binary };

inline ArtifactKind kind_of(const fs::path& p) {
  if (p.extension() == ".jsonl") return ArtifactKind::jsonl;
  if (p.extension() == ".json") return ArtifactKind::json;
  return ArtifactKind::binary;
}

inline fs::path sidecar(const fs::path& p) { return p.string() + ".meta.json"; }

inline std::string rows_hash(const std::vector<json>& rows) {
  std::string all;
  for (const auto& r : rows) all += r.dump() + "\n";
  return sha256_hex(all);
}

inline void write_artifact_rows(const fs::path& p, ArtifactMeta meta, const std::vector<json>& rows) {
  meta.data_hash = rows_hash(rows);
  std::vector<json> out;
  out.reserve(rows.size() + 1);
  out.push_back({{"meta", meta}});
  out.insert(out.end(), rows.begin(), rows.end());
  write_jsonl(p, out);
}

inline void write_artifact_json(const fs::path& p, ArtifactMeta meta, json body) {
  body.erase("meta");
  meta.data_hash = json_hash(body);
  body["meta"] = meta;
  write_json(p, body);
}

// For a binary artifact already on disk; `extra` goes into the sidecar.
inline void stamp_binary(const fs::path& p, ArtifactMeta meta, json extra = json::object()) {
  meta.data_hash = file_hash(p.string());
  extra.erase("meta");
  extra["meta"] = meta;
  write_json(sidecar(p), extra);
}

struct ArtifactRows {
  ArtifactMeta meta;
  std::vector<json> rows;
};

inline ArtifactRows read_artifact_rows(const fs::path& p) {
  auto rows = read_jsonl(p);
  if (rows.empty() || !rows[0].contains("meta")) throw ArtifactError(p.string() + ": missing meta row");
  ArtifactRows out{rows[0]["meta"].get<ArtifactMeta>(), {}};
  out.rows.assign(std::make_move_iterator(rows.begin() + 1), std::make_move_iterator(rows.end()));
  return out;
}

inline json read_artifact_json(const fs::path& p) {
  json j = read_json(p);
  if (!j.contains("meta")) throw ArtifactError(p.string() + ": missing meta");
  return j;
}

// Meta of an artifact, or nullopt when it (or its sidecar) is missing or unreadable.
inline std::optional<ArtifactMeta> read_meta(const fs::path& p) {
  try {
    switch (kind_of(p)) {
      case ArtifactKind::jsonl: {
        if (!fs::exists(p)) return std::nullopt;
        std::ifstream in(p);
        std::string first;
        std::getline(in, first);
        return json::parse(first).at("meta").get<ArtifactMeta>();
      }
      case ArtifactKind::json:
        if (!fs::exists(p)) return std::nullopt;
        return read_json(p).at("meta").get<ArtifactMeta>();
      case ArtifactKind::binary:
        if (!fs::exists(p) || !fs::exists(sidecar(p))) return std::nullopt;
        return read_json(sidecar(p)).at("meta").get<ArtifactMeta>();
    }
  } catch (const std::exception&) {
  }
  return std::nullopt;
}

// Rewrites only the config hash of an artifact.
inline void restamp(const fs::path& p, const std::string& config_hash) {
  switch (kind_of(p)) {
    case ArtifactKind::jsonl: {
      auto rows = read_jsonl(p);
      rows.at(0)["meta"]["config_hash"] = config_hash;
      write_jsonl(p, rows);
      break;
    }
    case ArtifactKind::json: {
      json j = read_json(p);
      j["meta"]["config_hash"] = config_hash;
      write_json(p, j);
      break;
    }
    case ArtifactKind::binary: {
      json j = read_json(sidecar(p));
      j["meta"]["config_hash"] = config_hash;
      write_json(sidecar(p), j);
      break;
    }
  }
}

// Files making up an artifact.
inline std::vector<fs::path> artifact_files(const fs::path& p) {
  std::vector<fs::path> out{p};
  if (kind_of(p) == ArtifactKind::binary) out.push_back(sidecar(p));
  return out;
}

// Moves a stale artifact to <archive_dir>/<stage>-<old data hash prefix>/.
inline fs::path archive_artifact(const fs::path& p, const fs::path& archive_dir) {
  const auto meta = read_meta(p);
  const std::string tag = meta ? meta->stage + "-" + meta->data_hash.substr(0, 12) : p.filename().string() + "-unstamped";
  const fs::path dst = archive_dir / tag;
  fs::create_directories(dst);
  for (const auto& f : artifact_files(p))
    if (fs::exists(f)) fs::rename(f, dst / f.filename());
  return dst;
}

inline void copy_artifact(const fs::path& from, const fs::path& to) {
  fs::create_directories(to.parent_path());
  const auto src = artifact_files(from), dst = artifact_files(to);
  for (std::size_t i = 0; i < src.size(); ++i) fs::copy_file(src[i], dst[i], fs::copy_options::overwrite_existing);
}

}  // namespace vad::pipeline
