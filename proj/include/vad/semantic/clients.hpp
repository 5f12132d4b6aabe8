#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vad/core/error.hpp"
#include "vad/core/hash.hpp"
#include "vad/core/http.hpp"
#include "vad/core/jsonl.hpp"
#include "vad/ingest/frames.hpp"

namespace vad::semantic {

// Text completion at temperature 0.
class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual std::string complete(const std::string& prompt, int max_tokens) = 0;
  virtual std::string model_id() const = 0;
};

class CaptionClient {
 public:
  virtual ~CaptionClient() = default;
  virtual std::string caption(const FrameRef& frame, const std::string& instruction, int max_tokens) = 0;
  virtual std::string model_id() const = 0;
  virtual std::string precision_tag() const { return "fp32"; }
};

// Joint image/text embedding space.
class EmbedClient {
 public:
  virtual ~EmbedClient() = default;
  virtual std::vector<double> embed_text(const std::string& text) = 0;
  virtual std::vector<double> embed_image(const FrameRef& frame) = 0;
  virtual std::string model_id() const = 0;
};

inline std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : std::move(fallback);
}

// ---- HTTP adapters -------------------------------------------------------------

// Request {"model", "prompt", "max_tokens", "temperature": 0}; reply {"text"} or an
// OpenAI-style {"choices": [{"text"}]}.
class HttpLlm : public LlmClient {
 public:
  HttpLlm(std::string endpoint, std::string model) : endpoint_(std::move(endpoint)), model_(std::move(model)) {}
  static std::unique_ptr<HttpLlm> from_env() {
    return std::make_unique<HttpLlm>(env_or("LLM_ENDPOINT", "http://127.0.0.1:8000/v1/completions"),
                                     env_or("LLM_MODEL", "llama-3.3-70b"));
  }

  std::string complete(const std::string& prompt, int max_tokens) override {
    const json r = post_json(endpoint_, {{"model", model_}, {"prompt", prompt}, {"max_tokens", max_tokens}, {"temperature", 0}});
    if (r.contains("text")) return r["text"].get<std::string>();
    if (r.contains("choices") && !r["choices"].empty()) return r["choices"][0].value("text", "");
    throw TransportError(endpoint_ + ": reply has no text");
  }
  std::string model_id() const override { return model_; }

 private:
  std::string endpoint_, model_;
};

// Request {"model", "instruction", "max_tokens", "temperature": 0, "image_png_base64"};
// reply {"caption"}.
class HttpCaptioner : public CaptionClient {
 public:
  HttpCaptioner(std::string endpoint, std::string model, std::string precision = "fp16")
      : endpoint_(std::move(endpoint)), model_(std::move(model)), precision_(std::move(precision)) {}
  static std::unique_ptr<HttpCaptioner> from_env() {
    return std::make_unique<HttpCaptioner>(env_or("VLM_ENDPOINT", "http://127.0.0.1:8001/caption"),
                                           env_or("VLM_MODEL", "llava-1.5-7b"), env_or("VLM_PRECISION", "fp16"));
  }

  std::string caption(const FrameRef& frame, const std::string& instruction, int max_tokens) override {
    const json r = post_json(endpoint_, {{"model", model_},
                                         {"instruction", instruction},
                                         {"max_tokens", max_tokens},
                                         {"temperature", 0},
                                         {"image_png_base64", base64_encode(encode_png(frame.image))}});
    if (!r.contains("caption")) throw TransportError(endpoint_ + ": reply has no caption");
    return r["caption"].get<std::string>();
  }
  std::string model_id() const override { return model_; }
  std::string precision_tag() const override { return precision_; }

 private:
  std::string endpoint_, model_, precision_;
};

// Request {"model", "text"} or {"model", "image_png_base64"}; reply {"embedding": [...]}.
class HttpEmbedder : public EmbedClient {
 public:
  HttpEmbedder(std::string endpoint, std::string model) : endpoint_(std::move(endpoint)), model_(std::move(model)) {}
  static std::unique_ptr<HttpEmbedder> from_env() {
    return std::make_unique<HttpEmbedder>(env_or("EMBED_ENDPOINT", "http://127.0.0.1:8002/embed"),
                                          env_or("EMBED_MODEL", "imagebind-huge"));
  }

  std::vector<double> embed_text(const std::string& text) override { return call({{"model", model_}, {"text", text}}); }
  std::vector<double> embed_image(const FrameRef& frame) override {
    return call({{"model", model_}, {"image_png_base64", base64_encode(encode_png(frame.image))}});
  }
  std::string model_id() const override { return model_; }

 private:
  std::vector<double> call(const json& body) {
    const json r = post_json(endpoint_, body);
    if (!r.contains("embedding")) throw TransportError(endpoint_ + ": reply has no embedding");
    return r["embedding"].get<std::vector<double>>();
  }
  std::string endpoint_, model_;
};

// ---- cache ---------------------------------------------------------------------

// Key/value store for client replies. Entries live in memory and, when a directory
// is given, as one JSON file per key named by the key's hash.
class ReplyCache {
 public:
  explicit ReplyCache(std::optional<std::filesystem::path> dir = std::nullopt) : dir_(std::move(dir)) {
    if (dir_) std::filesystem::create_directories(*dir_);
  }
  static std::shared_ptr<ReplyCache> from_env() {
    const char* d = std::getenv("VAD_CACHE_DIR");
    return std::make_shared<ReplyCache>(d && *d ? std::optional<std::filesystem::path>(d) : std::nullopt);
  }

  std::optional<json> get(const json& key) {
    auto v = lookup(key, json_hash(key));
    if (!v) ++misses_;
    return v;
  }

  // Single-flight lookup: a key that is already being computed is awaited,
  // so concurrent identical misses cost one client call. misses() counts computes.
  json fetch(const json& key, const std::function<json()>& compute) {
    const std::string h = json_hash(key);
    if (auto v = lookup(key, h)) return *v;
    std::promise<json> mine;
    std::shared_future<json> pending;
    {
      std::lock_guard lock(mu_);
      if (auto it = mem_.find(h); it != mem_.end()) {
        ++hits_;
        return it->second;
      }
      if (auto it = inflight_.find(h); it != inflight_.end()) pending = it->second;
      else inflight_.emplace(h, mine.get_future().share());
    }
    if (pending.valid()) {
      ++hits_;
      return pending.get();
    }
    ++misses_;
    json v;
    try {
      v = compute();
      put(key, v);
    } catch (...) {
      mine.set_exception(std::current_exception());
      std::lock_guard lock(mu_);
      inflight_.erase(h);
      throw;
    }
    mine.set_value(v);
    std::lock_guard lock(mu_);
    inflight_.erase(h);
    return v;
  }

  void put(const json& key, const json& value) {
    const std::string h = json_hash(key);
    {
      std::lock_guard lock(mu_);
      mem_[h] = value;
    }
    if (dir_) {
      const auto p = *dir_ / (h + ".json");
      // Unique temp name: concurrent writers of one key must not share it.
      const auto tmp = *dir_ / (h + ".json.tmp" + std::to_string(tmp_seq_++));
      write_json(tmp, {{"key", key}, {"value", value}});
      std::filesystem::rename(tmp, p);
    }
  }

  std::size_t hits() const { return hits_; }
  std::size_t misses() const { return misses_; }

 private:
  std::optional<json> lookup(const json& key, const std::string& h) {
    {
      std::lock_guard lock(mu_);
      if (auto it = mem_.find(h); it != mem_.end()) {
        ++hits_;
        return std::optional<json>(it->second);
      }
    }
    if (dir_) {
      const auto p = *dir_ / (h + ".json");
      if (std::filesystem::exists(p)) {
        try {
          const json entry = read_json(p);
          if (entry.at("key") == key) {
            std::lock_guard lock(mu_);
            mem_[h] = entry.at("value");
            ++hits_;
            return std::optional<json>(entry.at("value"));
          }
        } catch (const std::exception&) {
          // corrupt entry: treat as a miss and overwrite
        }
      }
    }
    return std::nullopt;
  }

  std::optional<std::filesystem::path> dir_;
  std::mutex mu_;
  std::map<std::string, json> mem_;
  std::map<std::string, std::shared_future<json>> inflight_;
  std::atomic<std::size_t> hits_{0}, misses_{0}, tmp_seq_{0};
};

// Caching decorators. Only misses reach the wrapped client.
class CachedCaptioner : public CaptionClient {
 public:
  CachedCaptioner(CaptionClient& inner, std::shared_ptr<ReplyCache> cache) : inner_(inner), cache_(std::move(cache)) {}

  std::string caption(const FrameRef& frame, const std::string& instruction, int max_tokens) override {
    const json key{{"kind", "caption"},        {"video_id", frame.video_id},          {"frame_index", frame.frame_index},
                   {"model", inner_.model_id()}, {"max_tokens", max_tokens},          {"precision", inner_.precision_tag()},
                   {"instruction", sha256_hex(instruction)}};
    return cache_->fetch(key, [&] { return json(inner_.caption(frame, instruction, max_tokens)); }).get<std::string>();
  }
  std::string model_id() const override { return inner_.model_id(); }
  std::string precision_tag() const override { return inner_.precision_tag(); }

 private:
  CaptionClient& inner_;
  std::shared_ptr<ReplyCache> cache_;
};

class CachedLlm : public LlmClient {
 public:
  CachedLlm(LlmClient& inner, std::shared_ptr<ReplyCache> cache) : inner_(inner), cache_(std::move(cache)) {}

  std::string complete(const std::string& prompt, int max_tokens) override {
    const json key{{"kind", "llm"}, {"model", inner_.model_id()}, {"max_tokens", max_tokens}, {"prompt", sha256_hex(prompt)}};
    return cache_->fetch(key, [&] { return json(inner_.complete(prompt, max_tokens)); }).get<std::string>();
  }
  std::string model_id() const override { return inner_.model_id(); }

 private:
  LlmClient& inner_;
  std::shared_ptr<ReplyCache> cache_;
};

class CachedEmbedder : public EmbedClient {
 public:
  CachedEmbedder(EmbedClient& inner, std::shared_ptr<ReplyCache> cache) : inner_(inner), cache_(std::move(cache)) {}

  std::vector<double> embed_text(const std::string& text) override {
    return cached({{"kind", "embed_text"}, {"model", inner_.model_id()}, {"text", sha256_hex(text)}},
                  [&] { return inner_.embed_text(text); });
  }
  std::vector<double> embed_image(const FrameRef& frame) override {
    return cached({{"kind", "embed_image"}, {"model", inner_.model_id()}, {"video_id", frame.video_id}, {"frame_index", frame.frame_index}},
                  [&] { return inner_.embed_image(frame); });
  }
  std::string model_id() const override { return inner_.model_id(); }

 private:
  std::vector<double> cached(const json& key, const std::function<std::vector<double>()>& fn) {
    return cache_->fetch(key, [&] { return json(fn()); }).get<std::vector<double>>();
  }
  EmbedClient& inner_;
  std::shared_ptr<ReplyCache> cache_;
};

// ---- playback and function clients ---------------------------------------------

// Plays back JSONL rows {"prompt_sha256", "response"} (or {"prompt", "response"}).
class PlaybackLlm : public LlmClient {
 public:
  explicit PlaybackLlm(const std::vector<json>& rows) {
    for (const auto& r : rows) {
      const std::string h = r.contains("prompt_sha256") ? r["prompt_sha256"].get<std::string>() : sha256_hex(r.at("prompt").get<std::string>());
      script_[h] = r.at("response").get<std::string>();
    }
  }
  static PlaybackLlm from_file(const std::filesystem::path& p) { return PlaybackLlm(read_jsonl(p)); }

  std::string complete(const std::string& prompt, int) override {
    ++calls_;
    auto it = script_.find(sha256_hex(prompt));
    if (it == script_.end()) throw TransportError("playback: no recorded response for prompt");
    return it->second;
  }
  std::string model_id() const override { return "playback-llm"; }
  std::size_t calls() const { return calls_; }

 private:
  std::map<std::string, std::string> script_;
  std::atomic<std::size_t> calls_{0};
};

// Wraps a callable; handy for scripted replies in tests.
class FunctionLlm : public LlmClient {
 public:
  explicit FunctionLlm(std::function<std::string(const std::string&)> fn, std::string id = "function-llm")
      : fn_(std::move(fn)), id_(std::move(id)) {}
  std::string complete(const std::string& prompt, int) override {
    ++calls_;
    return fn_(prompt);
  }
  std::string model_id() const override { return id_; }
  std::size_t calls() const { return calls_; }

 private:
  std::function<std::string(const std::string&)> fn_;
  std::string id_;
  std::atomic<std::size_t> calls_{0};
};

}  // namespace vad::semantic
