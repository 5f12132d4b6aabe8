#pragma once

#include <algorithm>
#include <cctype>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vad/core/error.hpp"
#include "vad/core/jsonl.hpp"
#include "vad/core/retry.hpp"
#include "vad/semantic/clients.hpp"
#include "vad/semantic/prompts.hpp"

namespace vad::semantic {

inline constexpr int kDefaultMaxTokens = 200;

enum class Pooling { mean, max };

inline const char* to_string(Pooling p) { return p == Pooling::mean ? "mean" : "max"; }
inline Pooling parse_pooling(const std::string& s) {
  if (s == "mean") return Pooling::mean;
  if (s == "max") return Pooling::max;
  throw ConfigError("unknown pooling '" + s + "'");
}

struct CaptionSettings {
  int max_tokens = kDefaultMaxTokens;
  std::size_t chunk_size = 3;     // m
  std::size_t chunk_overlap = 1;  // o
  Pooling pooling = Pooling::mean;
  RetryPolicy retry;

  void validate() const {
    if (max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
    if (chunk_overlap < 1 || chunk_overlap >= chunk_size)
      throw ConfigError("chunking needs 1 <= overlap < size, got size " + std::to_string(chunk_size) + " overlap " +
                        std::to_string(chunk_overlap));
  }
};

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

// Splits after '.', '!' or '?' when followed by whitespace or the end of text.
// The terminator stays with its sentence; empty pieces are dropped.
inline std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if ((c == '.' || c == '!' || c == '?') && (i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1])))) {
      auto s = trim(text.substr(start, i + 1 - start));
      if (!s.empty() && s != "." && s != "!" && s != "?") out.push_back(std::move(s));
      start = i + 1;
    }
  }
  auto tail = trim(text.substr(start));
  if (!tail.empty()) out.push_back(std::move(tail));
  return out;
}

// Number of m-sentence chunks with overlap o over N sentences.
inline std::size_t chunk_count(std::size_t n, std::size_t m, std::size_t o) {
  if (o < 1 || o >= m) throw ConfigError("chunking needs 1 <= overlap < size");
  if (n < m) return 1;
  return (n - m) / (m - o) + 1;
}

// Chunk k (0-based) joins sentences [k(m-o), k(m-o)+m). Fewer than m sentences
// give one chunk holding the whole caption.
inline std::vector<std::string> chunk_caption(std::span<const std::string> sentences, std::size_t m, std::size_t o) {
  const std::size_t k = chunk_count(sentences.size(), m, o);
  auto join = [&](std::size_t b, std::size_t e) {
    std::string s;
    for (std::size_t i = b; i < e; ++i) {
      if (i > b) s += ' ';
      s += sentences[i];
    }
    return s;
  };
  if (sentences.size() < m) return {join(0, sentences.size())};
  std::vector<std::string> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(join(i * (m - o), i * (m - o) + m));
  return out;
}

inline std::vector<double> pool_chunks(std::span<const std::vector<double>> z, Pooling mode = Pooling::mean) {
  if (z.empty()) throw ShapeError("pool_chunks", "at least one chunk embedding", "0");
  const std::size_t d = z[0].size();
  for (const auto& v : z)
    if (v.size() != d) throw ShapeError("pool_chunks", "dimension " + std::to_string(d), "dimension " + std::to_string(v.size()));
  std::vector<double> out(z[0]);
  for (std::size_t k = 1; k < z.size(); ++k)
    for (std::size_t i = 0; i < d; ++i) out[i] = mode == Pooling::mean ? out[i] + z[k][i] : std::max(out[i], z[k][i]);
  if (mode == Pooling::mean)
    for (auto& x : out) x /= static_cast<double>(z.size());
  return out;
}

struct CaptionRecord {
  std::string video_id;
  std::size_t frame_index = 0;
  std::string raw_caption;
  std::vector<std::string> sentences;
  std::vector<std::string> chunks;
  std::vector<std::vector<double>> chunk_embeddings;
  std::vector<double> pooled;
  std::string refined;
  std::size_t refined_source_index = 0;
};

inline void to_json(json& j, const CaptionRecord& r) {
  j = json{{"video_id", r.video_id},
           {"frame_index", r.frame_index},
           {"raw_caption", r.raw_caption},
           {"sentences", r.sentences},
           {"chunks", r.chunks},
           {"chunk_embeddings", r.chunk_embeddings},
           {"pooled", r.pooled},
           {"refined", r.refined},
           {"refined_source_index", r.refined_source_index}};
}

inline void from_json(const json& j, CaptionRecord& r) {
  r.video_id = j.at("video_id").get<std::string>();
  r.frame_index = j.at("frame_index").get<std::size_t>();
  r.raw_caption = j.at("raw_caption").get<std::string>();
  r.sentences = j.at("sentences").get<std::vector<std::string>>();
  r.chunks = j.at("chunks").get<std::vector<std::string>>();
  r.chunk_embeddings = j.at("chunk_embeddings").get<std::vector<std::vector<double>>>();
  r.pooled = j.at("pooled").get<std::vector<double>>();
  r.refined = j.value("refined", "");
  r.refined_source_index = j.value("refined_source_index", r.frame_index);
}

// Caption for one frame with retries; nullopt once the retries are spent (the
// caller records the frame as caption-missing).
inline std::optional<std::string> caption_frame(const FrameRef& frame, CaptionClient& vlm, int max_tokens = kDefaultMaxTokens,
                                                const RetryPolicy& retry = {}) {
  try {
    return with_retries(retry, [&] { return vlm.caption(frame, std::string(kCaptionInstruction), max_tokens); });
  } catch (const TransportError&) {
    return std::nullopt;
  }
}

// Sentences, chunks, chunk embeddings and the pooled caption embedding.
inline CaptionRecord embed_caption(std::string video_id, std::size_t frame_index, std::string caption, EmbedClient& embedder,
                                   const CaptionSettings& s) {
  CaptionRecord r;
  r.video_id = std::move(video_id);
  r.frame_index = frame_index;
  r.raw_caption = std::move(caption);
  r.sentences = split_sentences(r.raw_caption);
  r.chunks = chunk_caption(r.sentences, s.chunk_size, s.chunk_overlap);
  for (const auto& c : r.chunks) r.chunk_embeddings.push_back(with_retries(s.retry, [&] { return embedder.embed_text(c); }));
  r.pooled = pool_chunks(r.chunk_embeddings, s.pooling);
  r.refined = r.raw_caption;
  r.refined_source_index = frame_index;
  return r;
}

}  // namespace vad::semantic
