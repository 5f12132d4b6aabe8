#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <memory>
#include <sstream>
#include <string>

#include "vad/core/hash.hpp"
#include "vad/core/jsonl.hpp"
#include "vad/core/rng.hpp"
#include "vad/ingest/detection.hpp"
#include "vad/ingest/http_detector.hpp"
#include "vad/pipeline/config.hpp"
#include "vad/pipeline/synthetic.hpp"
#include "vad/semantic/caption.hpp"
#include "vad/semantic/clients.hpp"
#include "vad/semantic/mocks.hpp"

namespace vad::pipeline {

using semantic::FrameKey;

// Captions from the scenario's ground-truth descriptions. With probability
// `noise` (decided per frame from the seed) the caption instead describes a
// moment 30 to 150 frames away, the kind of mistake refinement should undo.
class DescriptionCaptioner : public semantic::CaptionClient {
 public:
  DescriptionCaptioner(std::map<FrameKey, std::string> descriptions, double noise, std::uint64_t seed, std::string tag)
      : desc_(std::move(descriptions)), noise_(noise), seed_(seed), tag_(std::move(tag)) {
    for (const auto& [k, _] : desc_) last_[k.first] = std::max(last_[k.first], k.second);
  }

  std::string caption(const FrameRef& frame, const std::string&, int max_tokens) override {
    ++calls_;
    const FrameKey key{frame.video_id, frame.frame_index};
    if (!desc_.count(key)) throw TransportError("mock captioner: no description for " + frame.video_id + ":" + std::to_string(frame.frame_index));
    return semantic::ScriptedCaptioner::truncate_words(desc_.at(source_of(key)), max_tokens);
  }

  // Frame whose description the caption of `key` uses.
  FrameKey source_of(const FrameKey& key) const {
    Rng rng(seed_ ^ stable_hash64("caption:" + tag_ + ":" + key.first + ":" + std::to_string(key.second)));
    if (!rng.bernoulli(noise_)) return key;
    const long offset = rng.integer(30, 150) * (rng.bernoulli(0.5) ? 1 : -1);
    const long last = static_cast<long>(last_.at(key.first));
    long f = static_cast<long>(key.second) + offset;
    if (f < 0 || f > last) f = static_cast<long>(key.second) - offset;
    f = std::clamp(f, 0L, last);
    FrameKey src{key.first, static_cast<std::size_t>(f)};
    return desc_.count(src) ? src : key;
  }

  std::string model_id() const override {
    std::ostringstream os;
    os << "mock-vlm-" << tag_ << "(noise=" << noise_ << ",seed=" << seed_ << ")";
    return os.str();
  }
  std::size_t calls() const { return calls_; }

 private:
  std::map<FrameKey, std::string> desc_;
  std::map<std::string, std::size_t> last_;
  double noise_;
  std::uint64_t seed_;
  std::string tag_;
  std::atomic<std::size_t> calls_{0};
};

// Hashed bag-of-words text embeddings. A frame's image embedding is what its
// ground-truth description embeds to through the same sentence chunking and
// pooling the captions go through, so a caption that says exactly what the frame
// shows has similarity 1.
class DescriptionImageEmbedder : public semantic::HashedBowEmbedder {
 public:
  DescriptionImageEmbedder(std::size_t dim, std::map<FrameKey, std::string> descriptions, semantic::CaptionSettings settings)
      : HashedBowEmbedder(dim), desc_(std::move(descriptions)), settings_(std::move(settings)) {}

  std::vector<double> embed_image(const FrameRef& frame) override {
    auto it = desc_.find({frame.video_id, frame.frame_index});
    if (it == desc_.end()) throw TransportError("mock embedder: no description for " + frame.video_id + ":" + std::to_string(frame.frame_index));
    std::vector<std::vector<double>> z;
    const auto sentences = semantic::split_sentences(it->second);
    for (const auto& c : semantic::chunk_caption(sentences, settings_.chunk_size, settings_.chunk_overlap)) z.push_back(embed_text(c));
    return semantic::pool_chunks(z, settings_.pooling);
  }
  std::string model_id() const override {
    return HashedBowEmbedder::model_id() + "-chunked(" + std::to_string(settings_.chunk_size) + "," + std::to_string(settings_.chunk_overlap) +
           "," + semantic::to_string(settings_.pooling) + ")";
  }

 private:
  std::map<FrameKey, std::string> desc_;
  semantic::CaptionSettings settings_;
};

inline std::map<FrameKey, std::string> load_descriptions(const std::filesystem::path& p) {
  std::map<FrameKey, std::string> out;
  for (const auto& r : read_jsonl(p)) out[{r.at("video_id").get<std::string>(), r.at("frame_index").get<std::size_t>()}] = r.at("text").get<std::string>();
  return out;
}

// The four external models behind reply caches. Requests that reach a model are
// the cache misses plus detector calls.
class Clients {
 public:
  Clients(const RunConfig& cfg, std::shared_ptr<semantic::ReplyCache> cache) : cache_(std::move(cache)) {
    const auto files = synthetic_files(cfg.data.dir);
    if (cfg.clients.mode == "mock") {
      auto desc = std::filesystem::exists(files.descriptions) ? load_descriptions(files.descriptions) : std::map<FrameKey, std::string>{};
      const bool alt = cfg.clients.captioner == "alt";
      detector_ = std::filesystem::exists(files.detections) ? std::make_unique<ScriptedDetector>(read_jsonl(files.detections))
                                                            : std::make_unique<ScriptedDetector>();
      vlm_ = std::make_unique<DescriptionCaptioner>(desc, alt ? cfg.clients.alt_caption_noise : cfg.clients.caption_noise, cfg.seed,
                                                    cfg.clients.captioner);
      embed_ = std::make_unique<DescriptionImageEmbedder>(cfg.clients.embed_dim, desc, cfg.caption);
      llm_ = std::make_unique<semantic::KeywordRuleLlm>();
    } else {
      detector_ = std::make_unique<HttpDetector>(semantic::env_or("DETECTOR_ENDPOINT", cfg.clients.detector_endpoint), cfg.clients.detector_model);
      vlm_ = semantic::HttpCaptioner::from_env();
      embed_ = semantic::HttpEmbedder::from_env();
      llm_ = semantic::HttpLlm::from_env();
    }
    cached_vlm_ = std::make_unique<semantic::CachedCaptioner>(*vlm_, cache_);
    cached_embed_ = std::make_unique<semantic::CachedEmbedder>(*embed_, cache_);
    cached_llm_ = std::make_unique<semantic::CachedLlm>(*llm_, cache_);
  }

  DetectorClient& detector() { return *detector_; }
  semantic::CaptionClient& captioner() { return *cached_vlm_; }
  semantic::EmbedClient& embedder() { return *cached_embed_; }
  semantic::LlmClient& llm() { return *cached_llm_; }
  semantic::ReplyCache& cache() { return *cache_; }

  std::string detector_id() const { return detector_->model_id(); }
  std::string captioner_id() const { return vlm_->model_id(); }
  std::string embedder_id() const { return embed_->model_id(); }
  std::string llm_id() const { return llm_->model_id(); }

 private:
  std::shared_ptr<semantic::ReplyCache> cache_;
  std::unique_ptr<DetectorClient> detector_;
  std::unique_ptr<semantic::CaptionClient> vlm_;
  std::unique_ptr<semantic::EmbedClient> embed_;
  std::unique_ptr<semantic::LlmClient> llm_;
  std::unique_ptr<semantic::CachedCaptioner> cached_vlm_;
  std::unique_ptr<semantic::CachedEmbedder> cached_embed_;
  std::unique_ptr<semantic::CachedLlm> cached_llm_;
};

}  // namespace vad::pipeline
