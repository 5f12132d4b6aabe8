#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "vad/core/hash.hpp"
#include "vad/core/jsonl.hpp"
#include "vad/core/parallel.hpp"
#include "vad/core/rng.hpp"
#include "vad/core/run_log.hpp"
#include "vad/eval/ems.hpp"
#include "vad/eval/metrics.hpp"
#include "vad/eval/plot.hpp"
#include "vad/ingest/detection.hpp"
#include "vad/ingest/frames.hpp"
#include "vad/pipeline/artifacts.hpp"
#include "vad/pipeline/clients.hpp"
#include "vad/pipeline/config.hpp"
#include "vad/pipeline/synthetic.hpp"
#include "vad/proposal/proposal.hpp"
#include "vad/proposal/scoring.hpp"
#include "vad/semantic/caption.hpp"
#include "vad/semantic/refine.hpp"
#include "vad/semantic/rules.hpp"
#include "vad/semantic/verify.hpp"
#include "vad/ssl/model.hpp"
#include "vad/ssl/samples.hpp"
#include "vad/training/checkpoint.hpp"
#include "vad/training/trainer.hpp"

namespace vad::pipeline {

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> s{"ingest", "train",  "ssl-score", "propose", "caption",
                                          "refine", "rules", "verify",    "smooth",  "evaluate"};
  return s;
}

inline bool is_stage(const std::string& s) {
  const auto& n = stage_names();
  return std::find(n.begin(), n.end(), s) != n.end();
}

// Stages up to and including `last`.
inline std::set<std::string> stages_through(const std::string& last) {
  if (!is_stage(last)) throw ConfigError("unknown stage '" + last + "'");
  std::set<std::string> out;
  for (const auto& s : stage_names()) {
    out.insert(s);
    if (s == last) break;
  }
  return out;
}

inline fs::path artifact_path(const fs::path& run_dir, const std::string& stage) {
  static const std::map<std::string, std::string> files{
      {"ingest", "ingest.jsonl"},   {"train", "model.ckpt"},      {"ssl-score", "ssl_scores.jsonl"}, {"propose", "proposals.jsonl"},
      {"caption", "captions.jsonl"}, {"refine", "refined.jsonl"}, {"rules", "rules.jsonl"},           {"verify", "verdicts.jsonl"},
      {"smooth", "scores.jsonl"},    {"evaluate", "report.json"}};
  return run_dir / "artifacts" / files.at(stage);
}

struct RunOptions {
  std::set<std::string> stages;      // empty: all
  bool dry_run = false;              // plan client calls, issue and write nothing
  std::vector<fs::path> reuse_dirs;  // run dirs whose matching artifacts may be copied
  bool resume = false;               // continue training from the progress checkpoint
  std::optional<int> last_phase;     // train only through this phase, then stop
  std::ostream* log = nullptr;
};

struct StageOutcome {
  std::string stage;
  std::string status;  // computed | cached | restamped | reused | skipped | planned | missing | partial
  std::size_t client_requests = 0;
  std::string detail;
};

struct RunResult {
  fs::path run_dir;
  std::string config_hash;
  std::vector<StageOutcome> stages;
  json report;  // null unless evaluate ran or was cached

  std::size_t client_requests() const {
    std::size_t n = 0;
    for (const auto& s : stages) n += s.client_requests;
    return n;
  }
  const StageOutcome* outcome(const std::string& stage) const {
    for (const auto& s : stages)
      if (s.stage == stage) return &s;
    return nullptr;
  }
};

inline json run_summary_json(const RunResult& r) {
  json stages = json::array();
  for (const auto& s : r.stages)
    stages.push_back({{"stage", s.stage}, {"status", s.status}, {"client_requests", s.client_requests}, {"detail", s.detail}});
  return {{"config_hash", r.config_hash}, {"stages", stages}, {"client_requests", r.client_requests()}};
}

// Generates the scenario into data.dir unless a generation with the same
// scenario and seed is already there.
inline bool ensure_synthetic_data(const RunConfig& cfg) {
  if (cfg.data.scenario.empty()) return false;
  const SyntheticScenario sc = cfg.data.scenario == "default" ? default_scenario()
                                                               : read_json(cfg.data.scenario).get<SyntheticScenario>();
  const json stamp{{"scenario", sc}, {"seed", cfg.data.seed}};
  const fs::path stamp_path = fs::path(cfg.data.dir) / "synthesis.json";
  if (fs::exists(stamp_path) && fs::exists(synthetic_files(cfg.data.dir).manifest) && read_json(stamp_path) == stamp) return false;
  generate_synthetic(sc, cfg.data.seed, cfg.data.dir);
  write_json(stamp_path, stamp);
  return true;
}

namespace detail {

struct IngestVideo {
  std::string id;
  std::string split;
  std::vector<std::size_t> sampled;
  DetectionIndex dets;
};

inline std::string key_of(const std::string& vid, std::size_t f) { return vid + ":" + std::to_string(f); }

}  // namespace detail

class Pipeline {
 public:
  Pipeline(RunConfig cfg, RunOptions opt) : cfg_(std::move(cfg)), opt_(std::move(opt)) {
    cfg_.validate();
    for (const auto& s : opt_.stages)
      if (!is_stage(s)) throw ConfigError("unknown stage '" + s + "'");
    run_dir_ = cfg_.run_dir;
    chash_ = config_hash(cfg_);
    result_.run_dir = run_dir_;
    result_.config_hash = chash_;
  }

  RunResult run() {
    try {
      run_stages();
    } catch (const StopRun&) {
    }
    if (!opt_.dry_run) {
      write_jsonl(run_dir_ / "run_log.jsonl", log_.to_json());
      write_json(run_dir_ / "run_summary.json", run_summary_json(result_));
    }
    return result_;
  }

 private:
  struct StopRun {};

  void run_stages() {
    if (!opt_.dry_run) {
      fs::create_directories(run_dir_ / "artifacts");
      json c = cfg_;
      c["config_hash"] = chash_;
      write_json(run_dir_ / "config.json", c);
      if (ensure_synthetic_data(cfg_)) say("data", "synthesized " + cfg_.data.scenario + " into " + cfg_.data.dir);
    }
    stage_ingest();
    stage_train();
    stage_score();
    stage_propose();
    stage_caption();
    stage_refine();
    stage_rules();
    stage_verify();
    stage_smooth();
    stage_evaluate();
  }

  // ---- plumbing ----------------------------------------------------------------

  bool selected(const std::string& stage) const { return opt_.stages.empty() || opt_.stages.count(stage); }

  // Stages after the last selected one are not run at all.
  bool past_last_selected(const std::string& stage) const {
    if (opt_.stages.empty()) return false;
    const auto& n = stage_names();
    const auto pos = std::find(n.begin(), n.end(), stage);
    return std::none_of(pos, n.end(), [&](const std::string& s) { return opt_.stages.count(s) > 0; });
  }

  void say(const std::string& stage, const std::string& msg) const {
    if (opt_.log) *opt_.log << "[" << stage << "] " << msg << std::endl;
  }

  Clients& clients() {
    if (!clients_) {
      auto cache = std::getenv("VAD_CACHE_DIR") ? semantic::ReplyCache::from_env()
                                                : std::make_shared<semantic::ReplyCache>(run_dir_ / "cache");
      clients_ = std::make_unique<Clients>(cfg_, cache);
    }
    return *clients_;
  }

  std::size_t requests() const { return detector_requests_ + (clients_ ? clients_->cache().misses() : 0); }

  fs::path path(const std::string& stage) const { return artifact_path(run_dir_, stage); }

  // Runs one stage under the cache contract. `compute` writes the artifact for
  // the given meta; `plan` describes the client calls a dry run would issue.
  void step(const std::string& stage, const json& stage_cfg, const std::vector<std::string>& deps, json extra_inputs,
            const std::function<void(const ArtifactMeta&)>& compute, const std::function<std::string()>& plan = {}) {
    StageOutcome out{stage, "", 0, ""};
    const fs::path p = path(stage);
    if (past_last_selected(stage)) throw StopRun{};
    if (!selected(stage)) {
      auto m = read_meta(p);
      if (!m) {
        if (!opt_.dry_run) throw ArtifactError("stage " + stage + " not selected and its artifact is missing: " + p.string());
        out.status = "missing";
      } else {
        metas_[stage] = *m;
        out.status = "skipped";
      }
      finish(std::move(out));
      return;
    }
    bool inputs_known = true;
    json inputs = std::move(extra_inputs);
    for (const auto& d : deps) {
      if (!metas_.count(d)) {
        inputs_known = false;
        break;
      }
      inputs[d] = metas_[d].data_hash;
    }
    ArtifactMeta want{chash_, stage, kStageVersion, json_hash(stage_cfg), inputs, ""};
    const auto have = read_meta(p);
    if (inputs_known && have && have->same_work(want)) {
      out.status = have->config_hash == chash_ ? "cached" : "restamped";
      if (out.status == "restamped" && !opt_.dry_run) restamp(p, chash_);
      metas_[stage] = *have;
      metas_[stage].config_hash = chash_;
      finish(std::move(out));
      return;
    }
    if (inputs_known) {
      for (const auto& dir : opt_.reuse_dirs) {
        const auto other = artifact_path(dir, stage);
        const auto m = read_meta(other);
        if (!m || !m->same_work(want) || fs::equivalent(dir, run_dir_)) continue;
        if (!opt_.dry_run) {
          if (have) archive_artifact(p, run_dir_ / "archive");
          copy_artifact(other, p);
          restamp(p, chash_);
        }
        metas_[stage] = *m;
        metas_[stage].config_hash = chash_;
        out.status = "reused";
        out.detail = "from " + dir.string();
        finish(std::move(out));
        return;
      }
    }
    if (opt_.dry_run) {
      out.status = "planned";
      out.detail = plan ? plan() : "no client calls";
      finish(std::move(out));
      return;
    }
    if (have) {
      const auto dst = archive_artifact(p, run_dir_ / "archive");
      say(stage, "stale artifact archived to " + dst.string());
    }
    const std::size_t before = requests();
    compute(want);
    const auto m = read_meta(p);
    if (!m) {
      out.status = "partial";
      out.client_requests = requests() - before;
      finish(std::move(out));
      throw StopRun{};
    }
    metas_[stage] = *m;
    out.status = "computed";
    out.client_requests = requests() - before;
    finish(std::move(out));
  }

  void finish(StageOutcome out) {
    std::string msg = out.status;
    if (out.client_requests) msg += ", " + std::to_string(out.client_requests) + " client requests";
    if (!out.detail.empty()) msg += " (" + out.detail + ")";
    say(out.stage, msg);
    result_.stages.push_back(std::move(out));
  }

  std::vector<json> rows(const std::string& stage) { return read_artifact_rows(path(stage)).rows; }

  // ---- data --------------------------------------------------------------------

  SyntheticFiles files() const { return synthetic_files(cfg_.data.dir); }

  std::vector<Video>& videos() {
    if (!videos_) videos_ = load_manifest(files().manifest, cfg_.data.fps);
    return *videos_;
  }
  const Video& video(const std::string& id) {
    for (const auto& v : videos())
      if (v.id == id) return v;
    throw ArtifactError("video " + id + " is not in the manifest");
  }

  std::map<std::string, std::string> splits() const {
    std::map<std::string, std::string> out;
    if (fs::exists(files().splits))
      for (const auto& r : read_jsonl(files().splits)) out[r.at("video_id").get<std::string>()] = r.at("split").get<std::string>();
    return out;
  }

  const std::vector<detail::IngestVideo>& ingested() {
    if (!ingested_) {
      std::vector<detail::IngestVideo> out;
      for (const auto& r : rows("ingest")) {
        detail::IngestVideo v;
        v.id = r.at("video_id").get<std::string>();
        v.split = r.at("split").get<std::string>();
        v.sampled = r.at("sampled").get<std::vector<std::size_t>>();
        for (const auto& [k, ds] : r.at("detections").items()) {
          auto& list = v.dets[static_cast<std::size_t>(std::stoul(k))];
          for (const auto& d : ds) list.push_back(detection_from_json(d));
        }
        out.push_back(std::move(v));
      }
      ingested_ = std::move(out);
    }
    return *ingested_;
  }

  std::vector<const detail::IngestVideo*> split_videos(const std::string& split) {
    std::vector<const detail::IngestVideo*> out;
    for (const auto& v : ingested())
      if (v.split == split) out.push_back(&v);
    return out;
  }

  // Test videos; with no split information every video is both trained on and tested.
  std::vector<const detail::IngestVideo*> test_videos() {
    auto t = split_videos("test");
    if (t.empty())
      for (const auto& v : ingested()) t.push_back(&v);
    return t;
  }
  std::vector<const detail::IngestVideo*> train_videos() {
    auto t = split_videos("train");
    if (t.empty())
      for (const auto& v : ingested()) t.push_back(&v);
    return t;
  }

  std::size_t sampled_test_frames() {
    std::size_t n = 0;
    for (const auto* v : test_videos()) n += v->sampled.size();
    return n;
  }

  // Sampled test frames as the ingest stage will produce them; read from the
  // manifest when ingest has not run (dry runs). nullopt without a manifest.
  std::optional<std::size_t> planned_test_frames() {
    if (metas_.count("ingest") && fs::exists(path("ingest"))) return sampled_test_frames();
    if (!fs::exists(files().manifest)) return std::nullopt;
    const auto split = splits();
    const bool any_test = std::any_of(split.begin(), split.end(), [](const auto& kv) { return kv.second == "test"; });
    std::size_t n = 0;
    for (const auto& r : read_jsonl(files().manifest)) {
      const auto vid = r.at("video_id").get<std::string>();
      const bool test = !any_test || (split.count(vid) && split.at(vid) == "test");
      n += test && r.at("frame_index").get<std::size_t>() % cfg_.stride == 0;
    }
    return n;
  }

  semantic::LlmSettings llm_settings() const { return {cfg_.rules.max_tokens, cfg_.clients.parallelism, cfg_.clients.retry()}; }

  // ---- stages ------------------------------------------------------------------

  void stage_ingest() {
    json extra;
    std::string plan = "manifest missing";
    if (fs::exists(files().manifest)) {
      extra["manifest"] = file_hash(files().manifest.string());
      std::string frames;
      std::size_t n = 0;
      for (const auto& r : read_jsonl(files().manifest)) {
        fs::path fp = r.at("path").get<std::string>();
        if (fp.is_relative()) fp = files().manifest.parent_path() / fp;
        frames += file_hash(fp.string());
        ++n;
      }
      extra["frames"] = sha256_hex(frames);
      if (fs::exists(files().splits)) extra["splits"] = file_hash(files().splits.string());
      if (cfg_.clients.mode == "mock") {
        // Mock clients read these, so they are inputs of everything downstream.
        if (fs::exists(files().detections)) extra["detections"] = file_hash(files().detections.string());
        if (fs::exists(files().descriptions)) extra["descriptions"] = file_hash(files().descriptions.string());
      }
      plan = std::to_string(n) + " detector calls";
    }
    const json sc{{"stride", cfg_.stride}, {"fps", cfg_.data.fps}, {"detector", cfg_.clients.mode == "mock" ? "scripted" : cfg_.clients.detector_model}};
    step("ingest", sc, {}, extra, [&](const ArtifactMeta& meta) {
      const auto split = splits();
      std::vector<json> out;
      for (const auto& v : videos()) {
        std::vector<const FrameRef*> ptrs;
        for (const auto& f : v.frames) ptrs.push_back(&f);
        const auto dets = detect_frames(ptrs, clients().detector(), cfg_.clients.parallelism, &log_);
        detector_requests_ += ptrs.size();
        json d = json::object();
        for (const auto& [f, ds] : dets) {
          json list = json::array();
          for (const auto& x : ds) {
            json row = detection_to_json(v.id, x);
            row.erase("video_id");
            list.push_back(row);
          }
          d[std::to_string(f)] = list;
        }
        std::vector<std::size_t> sampled;
        for (const auto& f : sample_frames(v.frames, cfg_.stride)) sampled.push_back(f.frame_index);
        out.push_back({{"video_id", v.id},
                       {"split", split.count(v.id) ? split.at(v.id) : "test"},
                       {"frame_count", v.frames.size()},
                       {"sampled", sampled},
                       {"detections", d}});
      }
      write_artifact_rows(path("ingest"), meta, out);
    }, [plan] { return plan; });
    ingested_.reset();
  }

  json train_stage_config() const {
    return {{"model", cfg_.model}, {"train", cfg_.train}, {"level", cfg_.level}, {"seed", cfg_.seed},
            {"samples", json(cfg_).at("samples")}, {"score_batch", cfg_.score_batch}};
  }

  void stage_train() {
    step("train", train_stage_config(), {"ingest"}, json::object(), [&](const ArtifactMeta& meta) {
      Rng rng(cfg_.seed ^ stable_hash64("train-samples"));
      std::vector<ssl::SslSample> samples, frame_samples;
      auto fopt = cfg_.samples;
      fopt.with_skip = false;
      for (const auto* iv : train_videos()) {
        const Video& v = video(iv->id);
        if (cfg_.level == "object") {
          std::vector<std::string> skipped;
          auto s = ssl::build_object_samples(v, iv->dets, iv->sampled, cfg_.samples, rng, &skipped);
          for (auto& x : s) samples.push_back(std::move(x));
          for (const auto& k : skipped) log_.record({"train", "degenerate-box", iv->id, -1, k});
        } else {
          for (auto f : iv->sampled) samples.push_back(ssl::build_frame_sample(v, f, cfg_.samples, rng));
        }
        for (auto f : iv->sampled) frame_samples.push_back(ssl::build_frame_sample(v, f, fopt, rng));
      }
      say("train", std::to_string(samples.size()) + " training samples, " + std::to_string(cfg_.train.plan.total_epochs()) + " epochs");
      ssl::MultiTaskModel model(cfg_.model, cfg_.seed);
      training::Trainer trainer(model, cfg_.train);
      const fs::path progress = run_dir_ / "artifacts" / "train_progress.ckpt";
      const fs::path metrics_path = run_dir_ / "train_metrics.jsonl";
      std::vector<json> epochs;
      if (opt_.resume && fs::exists(progress)) {
        trainer.restore(training::load_checkpoint(progress, model, meta.stage_config_hash));
        if (fs::exists(metrics_path)) epochs = read_jsonl(metrics_path);
        epochs.resize(std::min(epochs.size(), trainer.epochs_done()));
        say("train", "resumed after epoch " + std::to_string(trainer.epochs_done()));
      }
      const int last = opt_.last_phase.value_or(2);
      for (int p = static_cast<int>(trainer.phase()); p <= last; ++p) {
        const auto ph = static_cast<training::Phase>(p);
        const std::size_t done = ph == trainer.phase() ? trainer.phase_epoch() : 0;
        const std::size_t want = cfg_.train.plan.epochs[static_cast<std::size_t>(p)];
        if (done >= want) continue;
        trainer.run_phase(ph, samples, want - done, [&](const training::EpochMetrics& m) {
          epochs.push_back(training::to_json(m));
          write_jsonl(metrics_path, epochs);
          training::save_checkpoint(progress, model, trainer.meta(meta.stage_config_hash));
          std::ostringstream os;
          os << "epoch " << m.epoch + 1 << " " << training::to_string(m.phase) << " lr " << m.lr << " L";
          for (double l : m.losses) os << " " << l;
          say("train", os.str());
        });
      }
      if (last < 2) {
        say("train", "stopped after phase " + std::to_string(last) + "; progress checkpoint kept for --resume");
        return;
      }
      const std::span<const ssl::SslSample> objs = cfg_.level == "object" ? std::span<const ssl::SslSample>(samples)
                                                                          : std::span<const ssl::SslSample>();
      const auto norms = proposal::compute_normalizers(model, objs, frame_samples, cfg_.score_batch);
      auto cm = trainer.meta(meta.stage_config_hash);
      cm.normalizers = norms;
      const auto w = trainer.task_weights();
      cm.extra = {{"task_weights", std::vector<double>(w.begin(), w.end())}};
      training::save_checkpoint(path("train"), model, cm);
      stamp_binary(path("train"), meta,
                   {{"epochs", epochs}, {"normalizers", norms}, {"task_weights", cm.extra["task_weights"]}, {"samples", samples.size()}});
      fs::remove(progress);
    });
  }

  void stage_score() {
    const json sc{{"level", cfg_.level}, {"samples", json(cfg_).at("samples")}, {"score_batch", cfg_.score_batch}};
    step("ssl-score", sc, {"ingest", "train"}, json::object(), [&](const ArtifactMeta& meta) {
      ssl::MultiTaskModel model(cfg_.model, cfg_.seed);
      const auto cm = training::load_checkpoint(path("train"), model, metas_.at("train").stage_config_hash);
      const auto norms = cm.normalizers.get<proposal::Normalizers>();
      ssl::TaskValues w{};
      const auto wv = cm.extra.at("task_weights").get<std::vector<double>>();
      std::copy(wv.begin(), wv.end(), w.begin());
      proposal::ScoringOptions so;
      so.threshold = std::numeric_limits<double>::infinity();  // flags are set by the propose stage
      so.object_level = cfg_.level == "object";
      so.batch_size = cfg_.score_batch;
      so.samples = cfg_.samples;
      std::vector<json> out;
      for (const auto* iv : test_videos()) {
        for (const auto& p : proposal::score_video(model, w, norms, video(iv->id), iv->dets, iv->sampled, so)) {
          json j = p;
          j.erase("flagged");
          out.push_back(std::move(j));
        }
      }
      write_artifact_rows(path("ssl-score"), meta, out);
    });
  }

  void stage_propose() {
    step("propose", {{"threshold", cfg_.threshold}}, {"ssl-score"}, json::object(), [&](const ArtifactMeta& meta) {
      std::vector<proposal::AnomalyProposal> ps;
      for (auto r : rows("ssl-score")) {
        r["flagged"] = false;
        ps.push_back(r.get<proposal::AnomalyProposal>());
      }
      proposal::apply_threshold(ps, cfg_.threshold);
      std::vector<json> out;
      for (const auto& p : ps)
        out.push_back({{"video_id", p.video_id},
                       {"frame_index", p.frame_index},
                       {"level", proposal::to_string(p.level)},
                       {"total_loss", p.total_loss},
                       {"flagged", p.flagged}});
      write_artifact_rows(path("propose"), meta, out);
    });
  }

  // Flagged (video, frame) pairs from the propose artifact.
  std::vector<std::pair<std::string, std::size_t>> flagged_frames() {
    std::vector<std::pair<std::string, std::size_t>> out;
    for (const auto& r : rows("propose"))
      if (r.at("flagged").get<bool>()) out.emplace_back(r.at("video_id").get<std::string>(), r.at("frame_index").get<std::size_t>());
    return out;
  }

  std::string client_ids_caption() {
    return cfg_.clients.mode == "mock" ? "mock" : semantic::env_or("VLM_MODEL", "llava-1.5-7b");
  }

  void stage_caption() {
    json cap = json(cfg_).at("caption");
    const json sc{{"caption", cap},
                  {"mode", cfg_.clients.mode},
                  {"captioner", cfg_.clients.captioner},
                  {"noise", cfg_.clients.captioner == "alt" ? cfg_.clients.alt_caption_noise : cfg_.clients.caption_noise},
                  {"embed_dim", cfg_.clients.embed_dim},
                  {"seed", cfg_.seed}};
    step("caption", sc, {"ingest"}, json::object(), [&](const ArtifactMeta& meta) {
      struct Job {
        const FrameRef* frame;
      };
      std::vector<Job> jobs;
      for (const auto* iv : test_videos()) {
        const Video& v = video(iv->id);
        for (auto f : iv->sampled) jobs.push_back({&v.frames.at(*v.position_of(f))});
      }
      auto& vlm = clients().captioner();
      auto& emb = clients().embedder();
      auto recs = bounded_map<std::optional<semantic::CaptionRecord>>(jobs.size(), cfg_.clients.parallelism, [&](std::size_t i) {
        const auto& fr = *jobs[i].frame;
        auto c = semantic::caption_frame(fr, vlm, cfg_.caption.max_tokens, cfg_.clients.retry());
        if (!c) return std::optional<semantic::CaptionRecord>();
        return std::optional<semantic::CaptionRecord>(semantic::embed_caption(fr.video_id, fr.frame_index, *c, emb, cfg_.caption));
      });
      std::vector<json> out;
      for (std::size_t i = 0; i < jobs.size(); ++i) {
        if (recs[i])
          out.push_back(*recs[i]);
        else
          log_.record({"caption", "caption-missing", jobs[i].frame->video_id, static_cast<long long>(jobs[i].frame->frame_index), "no caption after retries"});
      }
      write_artifact_rows(path("caption"), meta, out);
    }, [&] {
      const auto n = planned_test_frames();
      return n ? std::to_string(*n) + " caption calls plus chunk embeddings" : std::string("one caption per sampled test frame");
    });
  }

  void stage_refine() {
    const json sc{{"refine", json(cfg_).at("refine")}, {"caption", json(cfg_).at("caption")}, {"embed_dim", cfg_.clients.embed_dim},
                  {"mode", cfg_.clients.mode}};
    step("refine", sc, {"ingest", "propose", "caption"}, json::object(), [&](const ArtifactMeta& meta) {
      std::map<std::string, std::vector<semantic::Candidate>> cands;
      std::map<std::string, std::size_t> pos_of;  // key -> sampled position
      std::map<std::string, std::string> raw;
      for (const auto* iv : test_videos())
        for (std::size_t i = 0; i < iv->sampled.size(); ++i) pos_of[detail::key_of(iv->id, iv->sampled[i])] = i;
      for (const auto& r : rows("caption")) {
        const auto rec = r.get<semantic::CaptionRecord>();
        const auto k = detail::key_of(rec.video_id, rec.frame_index);
        raw[k] = rec.raw_caption;
        cands[rec.video_id].push_back({static_cast<long>(pos_of.at(k)), rec.raw_caption, rec.pooled});
      }
      std::vector<std::pair<std::string, std::size_t>> todo;
      for (const auto& [vid, f] : flagged_frames()) {
        if (raw.count(detail::key_of(vid, f)))
          todo.emplace_back(vid, f);
        else
          log_.record({"refine", "caption-missing", vid, static_cast<long long>(f), "flagged frame has no caption"});
      }
      auto& emb = clients().embedder();
      auto res = bounded_map<json>(todo.size(), cfg_.clients.parallelism, [&](std::size_t i) {
        const auto& [vid, f] = todo[i];
        const auto k = detail::key_of(vid, f);
        const long t = static_cast<long>(pos_of.at(k));
        json row{{"video_id", vid}, {"frame_index", f}};
        if (!cfg_.refine.enabled) {
          row["caption"] = raw.at(k);
          row["source_frame_index"] = f;
          row["similarity"] = nullptr;
          return row;
        }
        const Video& v = video(vid);
        const auto img = with_retries(cfg_.clients.retry(), [&] { return emb.embed_image(v.frames.at(*v.position_of(f))); });
        const auto ref = semantic::refine_caption(img, cands.at(vid), t, raw.at(k), cfg_.refine.mode, cfg_.refine.window);
        const auto* iv = &*std::find_if(ingested().begin(), ingested().end(), [&](const detail::IngestVideo& x) { return x.id == vid; });
        row["caption"] = ref.caption;
        row["source_frame_index"] = iv->sampled.at(static_cast<std::size_t>(ref.source_position));
        row["similarity"] = std::isfinite(ref.similarity) ? json(ref.similarity) : json(nullptr);
        return row;
      });
      write_artifact_rows(path("refine"), meta, res);
    }, [&] {
      if (!cfg_.refine.enabled) return std::string("no client calls (cleaning disabled)");
      if (metas_.count("propose") && fs::exists(path("propose"))) return std::to_string(flagged_frames().size()) + " image embedding calls";
      const auto n = planned_test_frames();
      return n ? "up to " + std::to_string(*n) + " image embedding calls, one per flagged frame" : std::string("one image embedding per flagged frame");
    });
  }

  void stage_rules() {
    const json sc{{"rules", json(cfg_).at("rules")}, {"seed", cfg_.seed}, {"mode", cfg_.clients.mode}};
    step("rules", sc, {"caption"}, json::object(), [&](const ArtifactMeta& meta) {
      std::vector<json> out;
      std::map<std::string, std::vector<semantic::IndexedCaption>> caps;
      for (const auto& r : rows("caption")) caps[r.at("video_id").get<std::string>()].push_back({r.at("frame_index").get<std::size_t>(), r.at("raw_caption").get<std::string>()});
      for (const auto* iv : test_videos()) {
        if (!cfg_.rules.enabled) {
          out.push_back({{"video_id", iv->id}, {"disabled", true}});
          continue;
        }
        const auto& all = caps[iv->id];
        if (all.empty()) {
          log_.record({"rules", "rules-failed", iv->id, -1, "no captions"});
          out.push_back({{"video_id", iv->id}, {"failed", true}});
          continue;
        }
        std::vector<std::size_t> idx;
        for (const auto& c : all) idx.push_back(c.frame_index);
        const auto pick = semantic::sample_rule_frames(idx, cfg_.seed, iv->id, cfg_.rules.frames);
        std::vector<semantic::IndexedCaption> chosen;
        for (const auto& c : all)
          if (std::binary_search(pick.begin(), pick.end(), c.frame_index)) chosen.push_back(c);
        const auto frags = semantic::generate_rules(chosen, clients().llm(), llm_settings());
        for (const auto& f : frags)
          if (!f.well_formed) log_.record({"rules", "malformed-fragment", iv->id, static_cast<long long>(f.frame_index), ""});
        const auto rs = semantic::aggregate_rules(iv->id, frags, clients().llm(), llm_settings());
        if (rs.status == semantic::ParseStatus::failed) log_.record({"rules", "rules-failed", iv->id, -1, "empty rule list"});
        out.push_back({{"video_id", iv->id}, {"rules", rs}, {"fragments", frags}});
      }
      write_artifact_rows(path("rules"), meta, out);
    }, [&] {
      if (!cfg_.rules.enabled) return std::string("no client calls (rules disabled)");
      if (!metas_.count("ingest") || !fs::exists(path("ingest"))) return std::string("rule generation over sampled captions plus one aggregation per test video");
      std::size_t n = 0;
      for (const auto* iv : test_videos()) n += std::min(cfg_.rules.frames, iv->sampled.size()) + 1;
      return std::to_string(n) + " LLM calls";
    });
  }

  void stage_verify() {
    const json sc{{"rules_enabled", cfg_.rules.enabled}, {"max_tokens", cfg_.rules.max_tokens}, {"mode", cfg_.clients.mode}};
    step("verify", sc, {"refine", "rules"}, json::object(), [&](const ArtifactMeta& meta) {
      std::map<std::string, std::optional<semantic::RuleSet>> rules;
      std::set<std::string> unusable;
      for (const auto& r : rows("rules")) {
        const auto vid = r.at("video_id").get<std::string>();
        if (r.contains("rules")) {
          auto rs = r["rules"].get<semantic::RuleSet>();
          if (rs.status == semantic::ParseStatus::failed) unusable.insert(vid);
          rules[vid] = std::move(rs);
        } else if (r.value("failed", false)) {
          unusable.insert(vid);
        }
      }
      std::vector<json> todo;
      for (const auto& r : rows("refine")) {
        const auto vid = r.at("video_id").get<std::string>();
        if (cfg_.rules.enabled && unusable.count(vid)) {
          log_.record({"verify", "unverified", vid, r.at("frame_index").get<long long>(), "no usable rules"});
          continue;
        }
        todo.push_back(r);
      }
      auto& llm = clients().llm();
      auto verdicts = bounded_map<json>(todo.size(), cfg_.clients.parallelism, [&](std::size_t i) {
        const auto& r = todo[i];
        const auto vid = r.at("video_id").get<std::string>();
        const semantic::RuleSet* rs = cfg_.rules.enabled ? &*rules.at(vid) : nullptr;
        return json(semantic::verify_frame(vid, r.at("frame_index").get<std::size_t>(), r.at("caption").get<std::string>(), rs, llm, llm_settings()));
      });
      for (const auto& v : verdicts)
        if (v.at("parse_status") == "failed")
          log_.record({"verify", "verdict-failed", v.at("video_id"), v.at("frame_index").get<long long>(), v.value("error", "")});
      write_artifact_rows(path("verify"), meta, verdicts);
    }, [&] {
      if (metas_.count("propose") && fs::exists(path("propose"))) return std::to_string(flagged_frames().size()) + " LLM decision calls";
      const auto n = planned_test_frames();
      return n ? "up to " + std::to_string(*n) + " LLM decision calls, one per flagged frame" : std::string("one LLM decision per flagged frame");
    });
  }

  void stage_smooth() {
    json extra;
    if (fs::exists(files().labels)) extra["labels"] = file_hash(files().labels.string());
    const json sc{{"ems", cfg_.ems}, {"memory_k", cfg_.eval.memory_k}};
    step("smooth", sc, {"propose", "verify"}, extra, [&](const ArtifactMeta& meta) {
      std::map<std::string, int> label;
      if (!fs::exists(files().labels)) throw ArtifactError("labels file missing: " + files().labels.string());
      for (const auto& r : read_jsonl(files().labels))
        label[detail::key_of(r.at("video_id").get<std::string>(), r.at("frame_index").get<std::size_t>())] = r.at("label").get<int>();
      std::map<std::string, const json*> verdict;
      const auto vrows = rows("verify");
      for (const auto& v : vrows) verdict[detail::key_of(v.at("video_id"), v.at("frame_index").get<std::size_t>())] = &v;
      std::map<std::string, eval::ScoreSeries> series;
      for (const auto& r : rows("propose")) {
        const auto vid = r.at("video_id").get<std::string>();
        const auto f = r.at("frame_index").get<std::size_t>();
        if (r.at("level") == "unscored") continue;
        auto& s = series[vid];
        s.video_id = vid;
        const auto k = detail::key_of(vid, f);
        int raw = 0;
        if (r.at("flagged").get<bool>()) {
          // A flagged frame the validator could not judge keeps its stage-1 flag.
          auto it = verdict.find(k);
          raw = it == verdict.end() || it->second->at("parse_status") == "failed" ? 1 : it->second->at("is_anomaly").get<bool>();
        }
        if (!label.count(k)) throw ArtifactError("no label for " + k);
        s.frame_indices.push_back(f);
        s.raw_binary.push_back(raw);
        s.labels.push_back(label.at(k));
      }
      std::vector<json> out;
      for (auto& [vid, s] : series) {
        std::vector<int> cleaned = cfg_.eval.memory_k ? eval::propagate_forward(s.raw_binary, cfg_.eval.memory_k) : s.raw_binary;
        s.smoothed = eval::ems_smooth(cleaned, cfg_.ems);
        s.validate();
        out.push_back(s);
      }
      write_artifact_rows(path("smooth"), meta, out);
    });
  }

  void stage_evaluate() {
    step("evaluate", {{"threshold", cfg_.eval.threshold}}, {"smooth", "propose", "verify", "rules"}, json::object(), [&](const ArtifactMeta& meta) {
      // Refuse inputs produced under different configurations.
      for (const auto& s : stage_names()) {
        if (s == "evaluate") continue;
        const auto m = read_meta(path(s));
        if (m && m->config_hash != chash_)
          throw ArtifactError("refusing to evaluate: stage " + s + " artifact has config hash " + m->config_hash + ", expected " + chash_);
      }
      write_artifact_json(path("evaluate"), meta, build_report());
      write_text(run_dir_ / "report.txt", report_text(read_json(path("evaluate"))));
      std::vector<eval::ScoreSeries> series;
      for (const auto& r : rows("smooth")) series.push_back(r.get<eval::ScoreSeries>());
      for (const auto& s : series) save_png(eval::plot_series(s), run_dir_ / "plots" / (s.video_id + ".png"));
    });
    if (!opt_.dry_run && fs::exists(path("evaluate"))) result_.report = read_json(path("evaluate"));
  }

  json build_report() {
    std::vector<eval::ScoreSeries> series;
    for (const auto& r : rows("smooth")) series.push_back(r.get<eval::ScoreSeries>());
    const auto metrics = eval::compute_metrics(std::span<const eval::ScoreSeries>(series), cfg_.eval.threshold);
    json per_video = json::array();
    for (const auto& s : series) {
      const auto m = eval::compute_metrics(s.smoothed, s.labels, cfg_.eval.threshold);
      per_video.push_back({{"video_id", s.video_id},
                           {"frames", s.frame_indices.size()},
                           {"anomalous", std::count(s.labels.begin(), s.labels.end(), 1)},
                           {"positives", std::count(s.raw_binary.begin(), s.raw_binary.end(), 1)},
                           {"auc", m.auc ? json(*m.auc) : json("undefined")}});
    }
    std::size_t scored = 0, flagged = 0, flagged_anomalous = 0, anomalous = 0;
    std::map<std::string, int> label;
    for (const auto& s : series)
      for (std::size_t i = 0; i < s.frame_indices.size(); ++i) label[detail::key_of(s.video_id, s.frame_indices[i])] = s.labels[i];
    for (const auto& r : rows("propose")) {
      if (r.at("level") == "unscored") continue;
      ++scored;
      const int y = label[detail::key_of(r.at("video_id"), r.at("frame_index").get<std::size_t>())];
      anomalous += y;
      if (r.at("flagged").get<bool>()) {
        ++flagged;
        flagged_anomalous += y;
      }
    }
    std::size_t verify_calls = 0, v_anom = 0, v_norm = 0, v_failed = 0, v_repaired = 0;
    for (const auto& v : rows("verify")) {
      const auto st = v.at("parse_status").get<std::string>();
      const bool unparseable = st == "failed" && v.value("error", "") == "unparseable reply";
      verify_calls += 1 + (st == "repaired" || unparseable ? 1 : 0);
      if (st == "failed")
        ++v_failed;
      else
        ++(v.at("is_anomaly").get<bool>() ? v_anom : v_norm);
      v_repaired += st == "repaired";
    }
    std::size_t rule_calls = 0;
    for (const auto& r : rows("rules"))
      if (r.contains("rules")) rule_calls += r.at("fragments").size() + 1 + (r["rules"].value("parse_status", "ok") == "repaired" ? 1 : 0);
    const double reduction = scored ? 1.0 - static_cast<double>(verify_calls) / static_cast<double>(scored) : 0.0;
    return {{"config_hash", chash_},
            {"metrics", metrics},
            {"per_video", per_video},
            {"proposal",
             {{"threshold", cfg_.threshold},
              {"scored_frames", scored},
              {"flagged_frames", flagged},
              {"anomalous_frames", anomalous},
              {"flagged_anomalous", flagged_anomalous},
              {"filter_recall", anomalous ? json(static_cast<double>(flagged_anomalous) / static_cast<double>(anomalous)) : json(nullptr)}}},
            {"verdicts", {{"anomaly", v_anom}, {"normal", v_norm}, {"failed", v_failed}, {"repaired", v_repaired}}},
            {"llm_calls",
             {{"verify", verify_calls},
              {"verify_without_filter", scored},
              {"verify_call_reduction", reduction},
              {"rules", rule_calls},
              {"total", verify_calls + rule_calls},
              {"total_without_filter", scored + rule_calls}}}};
  }

 public:
  static std::string report_text(const json& r) {
    std::ostringstream os;
    auto num = [](const json& j) {
      if (!j.is_number()) return j.is_null() ? std::string("n/a") : j.get<std::string>();
      std::ostringstream s;
      s.setf(std::ios::fixed);
      s.precision(4);
      s << j.get<double>();
      return s.str();
    };
    const auto& m = r.at("metrics");
    os << "config " << r.at("config_hash").get<std::string>().substr(0, 16) << "\n\n";
    os << "frame-level metrics\n";
    os << "  AUC        " << num(m.at("auc")) << "\n";
    os << "  precision  " << num(m.at("precision")) << "\n";
    os << "  recall     " << num(m.at("recall")) << "\n";
    os << "  F1         " << num(m.at("f1")) << "\n";
    os << "  TP " << m.at("tp") << "  FP " << m.at("fp") << "  TN " << m.at("tn") << "  FN " << m.at("fn") << "\n\n";
    const auto& p = r.at("proposal");
    os << "proposal filter (threshold " << num(p.at("threshold")) << ")\n";
    os << "  scored " << p.at("scored_frames") << ", flagged " << p.at("flagged_frames") << ", recall on anomalous frames "
       << num(p.at("filter_recall")) << "\n";
    const auto& c = r.at("llm_calls");
    os << "LLM calls: verify " << c.at("verify") << " of " << c.at("verify_without_filter") << " (reduction "
       << num(c.at("verify_call_reduction")) << "), rules " << c.at("rules") << "\n\n";
    os << "video        frames  anomalous  positives  AUC\n";
    for (const auto& v : r.at("per_video")) {
      char line[128];
      std::snprintf(line, sizeof line, "%-12s %6zu %10zu %10zu  %s\n", v.at("video_id").get<std::string>().c_str(),
                    v.at("frames").get<std::size_t>(), v.at("anomalous").get<std::size_t>(), v.at("positives").get<std::size_t>(),
                    num(v.at("auc")).c_str());
      os << line;
    }
    return os.str();
  }

 private:
  RunConfig cfg_;
  RunOptions opt_;
  fs::path run_dir_;
  std::string chash_;
  std::unique_ptr<Clients> clients_;
  std::size_t detector_requests_ = 0;
  std::optional<std::vector<Video>> videos_;
  std::optional<std::vector<detail::IngestVideo>> ingested_;
  std::map<std::string, ArtifactMeta> metas_;
  RunLog log_;
  RunResult result_;
};

inline RunResult run_pipeline(const RunConfig& cfg, const RunOptions& opt = {}) { return Pipeline(cfg, opt).run(); }

}  // namespace vad::pipeline
