#pragma once

#include <filesystem>
#include <set>
#include <string>

#include "vad/core/error.hpp"
#include "vad/core/hash.hpp"
#include "vad/core/jsonl.hpp"
#include "vad/core/retry.hpp"
#include "vad/eval/ems.hpp"
#include "vad/proposal/proposal.hpp"
#include "vad/semantic/caption.hpp"
#include "vad/semantic/refine.hpp"
#include "vad/semantic/rules.hpp"
#include "vad/ssl/model.hpp"
#include "vad/ssl/samples.hpp"
#include "vad/training/trainer.hpp"

namespace vad::pipeline {

struct DataConfig {
  std::string dir = "data/synthetic10";  // manifest.jsonl, detections.jsonl, labels.jsonl, ...
  std::string scenario;                  // scenario JSON generated into `dir` when the manifest is missing
  std::uint64_t seed = 2024;            // synthesis seed
  double fps = 30.0;
};

struct ClientConfig {
  std::string mode = "mock";  // mock | http
  std::size_t parallelism = 4;
  int retries = 3;
  int retry_base_ms = 200;
  std::string captioner = "default";  // mock captioner tag: default | alt
  double caption_noise = 0.15;        // mock: chance a caption describes another moment
  double alt_caption_noise = 0.30;
  std::size_t embed_dim = 64;
  std::string detector_endpoint = "http://127.0.0.1:8003/detect";
  std::string detector_model = "yolov12";

  RetryPolicy retry() const { return {retries, std::chrono::milliseconds(retry_base_ms)}; }
};

struct RefineConfig {
  semantic::RefineMode mode = semantic::RefineMode::local;
  std::size_t window = semantic::kDefaultRefineWindow;  // in sampled positions
  bool enabled = true;
};

struct RuleConfig {
  bool enabled = true;  // false: caption-only verification
  std::size_t frames = semantic::kRuleFrames;
  int max_tokens = 1024;
};

struct EvalConfig {
  double threshold = 0.5;     // binary metrics on smoothed scores
  std::size_t memory_k = 0;   // >0: forward-propagate each positive this many samples
};

struct RunConfig {
  DataConfig data;
  std::string run_dir = "runs/default";
  std::size_t stride = 10;
  double threshold = proposal::kDefaultThreshold;
  std::string level = "object";  // object | frame
  ssl::ModelConfig model;
  training::TrainConfig train;
  ssl::SampleOptions samples;
  std::size_t score_batch = 16;
  semantic::CaptionSettings caption;
  RefineConfig refine;
  RuleConfig rules;
  eval::EmsConfig ems;
  EvalConfig eval;
  ClientConfig clients;
  std::uint64_t seed = 2024;

  void validate() const {
    if (stride == 0) throw ConfigError("stride must be >= 1");
    if (level != "object" && level != "frame") throw ConfigError("level must be object or frame, got " + level);
    if (clients.mode != "mock" && clients.mode != "http") throw ConfigError("clients.mode must be mock or http");
    if (clients.captioner != "default" && clients.captioner != "alt") throw ConfigError("clients.captioner must be default or alt");
    if (clients.parallelism == 0) throw ConfigError("clients.parallelism must be >= 1");
    if (refine.window == 0) throw ConfigError("refine.window must be >= 1");
    if (rules.frames == 0) throw ConfigError("rules.frames must be >= 1");
    if (model.active_count() == 0) throw ConfigError("at least one task must be active");
    model.encoder.validate();
    caption.validate();
    ems.validate();
  }

  // The trainer seed follows the run seed.
  void normalize() { train.seed = seed ^ 0x5EEDu; }
};

inline void to_json(json& j, const RunConfig& c) {
  j = json{{"data", {{"dir", c.data.dir}, {"scenario", c.data.scenario}, {"seed", c.data.seed}, {"fps", c.data.fps}}},
           {"run_dir", c.run_dir},
           {"stride", c.stride},
           {"threshold", c.threshold},
           {"level", c.level},
           {"model", c.model},
           {"train", c.train},
           {"samples",
            {{"half_window_t", c.samples.half_window_t},
             {"neighbor_radius", c.samples.neighbor_radius},
             {"max_neighbors", c.samples.max_neighbors}}},
           {"score_batch", c.score_batch},
           {"caption",
            {{"max_tokens", c.caption.max_tokens},
             {"chunk_size", c.caption.chunk_size},
             {"chunk_overlap", c.caption.chunk_overlap},
             {"pooling", semantic::to_string(c.caption.pooling)}}},
           {"refine", {{"mode", semantic::to_string(c.refine.mode)}, {"window", c.refine.window}, {"enabled", c.refine.enabled}}},
           {"rules", {{"enabled", c.rules.enabled}, {"frames", c.rules.frames}, {"max_tokens", c.rules.max_tokens}}},
           {"ems", c.ems},
           {"eval", {{"threshold", c.eval.threshold}, {"memory_k", c.eval.memory_k}}},
           {"clients",
            {{"mode", c.clients.mode},
             {"parallelism", c.clients.parallelism},
             {"retries", c.clients.retries},
             {"retry_base_ms", c.clients.retry_base_ms},
             {"captioner", c.clients.captioner},
             {"caption_noise", c.clients.caption_noise},
             {"alt_caption_noise", c.clients.alt_caption_noise},
             {"embed_dim", c.clients.embed_dim},
             {"detector_endpoint", c.clients.detector_endpoint},
             {"detector_model", c.clients.detector_model}}},
           {"seed", c.seed}};
}

// Missing keys keep their defaults, unknown keys are rejected.
inline void from_json(const json& j, RunConfig& c) {
  static const std::set<std::string> known{"data",    "run_dir", "stride", "threshold", "level", "model", "train",   "samples",
                                           "score_batch", "caption", "refine", "rules",  "ems",   "eval",  "clients", "seed"};
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");
  if (j.contains("data")) {
    const auto& d = j["data"];
    c.data.dir = d.value("dir", c.data.dir);
    c.data.scenario = d.value("scenario", c.data.scenario);
    c.data.seed = d.value("seed", c.data.seed);
    c.data.fps = d.value("fps", c.data.fps);
  }
  c.run_dir = j.value("run_dir", c.run_dir);
  c.stride = j.value("stride", c.stride);
  c.threshold = j.value("threshold", c.threshold);
  c.level = j.value("level", c.level);
  if (j.contains("model")) c.model = j["model"].get<ssl::ModelConfig>();
  if (j.contains("train")) c.train = j["train"].get<training::TrainConfig>();
  if (j.contains("samples")) {
    const auto& s = j["samples"];
    c.samples.half_window_t = s.value("half_window_t", c.samples.half_window_t);
    c.samples.neighbor_radius = s.value("neighbor_radius", c.samples.neighbor_radius);
    c.samples.max_neighbors = s.value("max_neighbors", c.samples.max_neighbors);
  }
  c.score_batch = j.value("score_batch", c.score_batch);
  if (j.contains("caption")) {
    const auto& s = j["caption"];
    c.caption.max_tokens = s.value("max_tokens", c.caption.max_tokens);
    c.caption.chunk_size = s.value("chunk_size", c.caption.chunk_size);
    c.caption.chunk_overlap = s.value("chunk_overlap", c.caption.chunk_overlap);
    c.caption.pooling = semantic::parse_pooling(s.value("pooling", std::string(semantic::to_string(c.caption.pooling))));
  }
  if (j.contains("refine")) {
    const auto& s = j["refine"];
    c.refine.mode = semantic::parse_refine_mode(s.value("mode", std::string(semantic::to_string(c.refine.mode))));
    c.refine.window = s.value("window", c.refine.window);
    c.refine.enabled = s.value("enabled", c.refine.enabled);
  }
  if (j.contains("rules")) {
    const auto& s = j["rules"];
    c.rules.enabled = s.value("enabled", c.rules.enabled);
    c.rules.frames = s.value("frames", c.rules.frames);
    c.rules.max_tokens = s.value("max_tokens", c.rules.max_tokens);
  }
  if (j.contains("ems")) c.ems = j["ems"].get<eval::EmsConfig>();
  if (j.contains("eval")) {
    c.eval.threshold = j["eval"].value("threshold", c.eval.threshold);
    c.eval.memory_k = j["eval"].value("memory_k", c.eval.memory_k);
  }
  if (j.contains("clients")) {
    const auto& s = j["clients"];
    auto& k = c.clients;
    k.mode = s.value("mode", k.mode);
    k.parallelism = s.value("parallelism", k.parallelism);
    k.retries = s.value("retries", k.retries);
    k.retry_base_ms = s.value("retry_base_ms", k.retry_base_ms);
    k.captioner = s.value("captioner", k.captioner);
    k.caption_noise = s.value("caption_noise", k.caption_noise);
    k.alt_caption_noise = s.value("alt_caption_noise", k.alt_caption_noise);
    k.embed_dim = s.value("embed_dim", k.embed_dim);
    k.detector_endpoint = s.value("detector_endpoint", k.detector_endpoint);
    k.detector_model = s.value("detector_model", k.detector_model);
  }
  c.seed = j.value("seed", c.seed);
  c.caption.retry = c.clients.retry();
  c.normalize();
  c.validate();
}

inline RunConfig load_config(const std::filesystem::path& p) {
  RunConfig c = read_json(p).get<RunConfig>();
  // Relative data and run paths resolve against the config file.
  const auto base = p.parent_path();
  auto resolve = [&](std::string& s) {
    if (!s.empty() && std::filesystem::path(s).is_relative()) s = (base / s).lexically_normal().string();
  };
  resolve(c.data.dir);
  if (c.data.scenario != "default") resolve(c.data.scenario);
  resolve(c.run_dir);
  return c;
}

// Hash of everything that can change results. Paths are left out: data enters
// through content hashes of the inputs, and the run directory is only a location.
inline std::string config_hash(const RunConfig& c) {
  json j = c;
  j.erase("run_dir");
  j["data"].erase("dir");
  j["data"].erase("scenario");
  j["data"].erase("seed");
  return json_hash(j);
}

}  // namespace vad::pipeline
