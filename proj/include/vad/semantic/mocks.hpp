#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "vad/core/error.hpp"
#include "vad/core/hash.hpp"
#include "vad/semantic/clients.hpp"
#include "vad/semantic/prompts.hpp"
#include "vad/semantic/rules.hpp"

namespace vad::semantic {

using FrameKey = std::pair<std::string, std::size_t>;

inline std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// Signed feature hashing of content words into d dimensions. Images are embedded
// through a scripted description of what the frame shows.
class HashedBowEmbedder : public EmbedClient {
 public:
  explicit HashedBowEmbedder(std::size_t dim = 64, std::map<FrameKey, std::string> image_text = {})
      : dim_(dim), image_text_(std::move(image_text)) {
    if (dim_ == 0) throw ConfigError("embedding dimension must be >= 1");
  }

  std::vector<double> embed_text(const std::string& text) override {
    ++calls_;
    static const std::set<std::string> stop{"a", "an", "the", "is", "are", "of", "in", "on", "and", "to", "with",
                                            "it", "its", "at", "by", "as", "this", "that", "there", "frame"};
    std::vector<double> v(dim_, 0.0);
    for (const auto& w : word_tokens(text)) {
      if (stop.count(w)) continue;
      const std::uint64_t h = stable_hash64("bow:" + w);
      v[h % dim_] += (h >> 63) ? 1.0 : -1.0;
    }
    return v;
  }

  std::vector<double> embed_image(const FrameRef& frame) override {
    auto it = image_text_.find({frame.video_id, frame.frame_index});
    if (it == image_text_.end()) throw TransportError("mock embedder: no description for " + frame.video_id + ":" + std::to_string(frame.frame_index));
    return embed_text(it->second);
  }
  std::string model_id() const override { return "hashed-bow-" + std::to_string(dim_); }
  std::size_t calls() const { return calls_; }

 private:
  std::size_t dim_;
  std::map<FrameKey, std::string> image_text_;
  std::atomic<std::size_t> calls_{0};
};

// Returns the scripted caption of a frame, cut to max_tokens words.
class ScriptedCaptioner : public CaptionClient {
 public:
  explicit ScriptedCaptioner(std::map<FrameKey, std::string> script = {}, std::string id = "scripted-captioner")
      : script_(std::move(script)), id_(std::move(id)) {}

  void set(const std::string& video_id, std::size_t frame, std::string caption) { script_[{video_id, frame}] = std::move(caption); }
  // Fails the next n calls with a transport error.
  void fail_next(std::size_t n) { failures_ = n; }

  std::string caption(const FrameRef& frame, const std::string&, int max_tokens) override {
    ++calls_;
    if (failures_ > 0) {
      --failures_;
      throw TransportError("scripted captioner: injected failure");
    }
    auto it = script_.find({frame.video_id, frame.frame_index});
    if (it == script_.end()) throw TransportError("scripted captioner: no caption for " + frame.video_id + ":" + std::to_string(frame.frame_index));
    return truncate_words(it->second, max_tokens);
  }
  std::string model_id() const override { return id_; }
  std::size_t calls() const { return calls_; }

  static std::string truncate_words(const std::string& text, int max_words) {
    std::size_t words = 0, i = 0;
    bool in_word = false;
    for (; i < text.size(); ++i) {
      const bool space = std::isspace(static_cast<unsigned char>(text[i]));
      if (!space && !in_word && ++words > static_cast<std::size_t>(max_words)) break;
      in_word = !space;
    }
    return trim(std::string_view(text).substr(0, i));
  }

 private:
  std::map<FrameKey, std::string> script_;
  std::string id_;
  std::atomic<std::size_t> calls_{0};
  std::atomic<std::size_t> failures_{0};
};

// Pure-function stand-in for the language model. It recognizes the three prompt
// templates and answers from a fixed rulebook: every anomaly rule it writes names
// trigger words, and a decision is Yes exactly when the scene description contains
// a trigger of one of the anomaly rules listed in the prompt.
class KeywordRuleLlm : public LlmClient {
 public:
  struct Rule {
    std::string text;
    std::vector<std::string> triggers;  // lowercase stems
  };

  KeywordRuleLlm() : KeywordRuleLlm(default_rulebook()) {}
  explicit KeywordRuleLlm(std::vector<Rule> rulebook, std::vector<std::string> rule_free_triggers = {"collid", "crash"})
      : rulebook_(std::move(rulebook)), rule_free_triggers_(std::move(rule_free_triggers)) {}

  static std::vector<Rule> default_rulebook() {
    return {{"Two objects or actors colliding with each other is an anomaly.", {"collid", "collision", "crash"}},
            {"An object stopped so that it blocks the path of others is an anomaly.", {"block"}},
            {"A vehicle making a sudden sharp turn toward other actors is an anomaly.", {"sharp turn", "swerv"}}};
  }

  std::string complete(const std::string& prompt_in, int) override {
    std::string prompt = prompt_in;
    if (prompt.ends_with(kRepairSuffix)) prompt.resize(prompt.size() - kRepairSuffix.size());
    if (prompt.starts_with(prefix(kRuleGenerationTemplate))) {
      ++rule_calls_;
      return generate(between(prompt, "description:\n", "\n\nGenerate a set of rules"));
    }
    if (prompt.starts_with(prefix(kRuleAggregationTemplate))) {
      ++aggregate_calls_;
      const auto sec = parse_rule_sections(between(prompt, "Rules to aggregate:\n", "\n\nProvide the consolidated rules"));
      return format_rules(dedup_rules(sec.normal), dedup_rules(sec.anomaly));
    }
    if (prompt.starts_with(prefix(kDecisionTemplate))) {
      ++decision_calls_;
      const std::string scene = lower(between(prompt, "Scene Description:\n", "\n\nRules for Normal/Anomaly Scenes:"));
      const auto sec = parse_rule_sections(between(prompt, "Rules for Normal/Anomaly Scenes:\n", "\n\nAnalyze this scene"));
      std::vector<std::string> broken;
      for (const auto& r : sec.anomaly)
        for (const auto& t : triggers_in(lower(r)))
          if (scene.find(t) != std::string::npos) {
            broken.push_back(r);
            break;
          }
      return answer(broken);
    }
    if (prompt.starts_with(prefix(kCaptionOnlyDecisionTemplate))) {
      ++decision_calls_;
      const std::string scene = lower(between(prompt, "Scene Description:\n", "\n\nAnalyze this scene"));
      for (const auto& t : rule_free_triggers_)
        if (scene.find(t) != std::string::npos) return "Anomaly: Yes\nBroken Rules: None";
      return "Anomaly: No\nBroken Rules: None";
    }
    ++other_calls_;
    return "I cannot help with that.";
  }
  std::string model_id() const override { return "keyword-rule-llm"; }

  std::size_t rule_calls() const { return rule_calls_; }
  std::size_t aggregate_calls() const { return aggregate_calls_; }
  std::size_t decision_calls() const { return decision_calls_; }
  std::size_t calls() const { return rule_calls_ + aggregate_calls_ + decision_calls_ + other_calls_; }

 private:
  static std::string_view prefix(std::string_view tmpl) { return tmpl.substr(0, 120); }

  static std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
  }

  static std::string between(const std::string& s, std::string_view open, std::string_view close) {
    const auto b = s.find(open);
    if (b == std::string::npos) return {};
    const auto start = b + open.size();
    const auto e = s.find(close, start);
    return s.substr(start, e == std::string::npos ? std::string::npos : e - start);
  }

  std::vector<std::string> triggers_in(const std::string& rule) const {
    std::vector<std::string> out;
    for (const auto& r : rulebook_)
      for (const auto& t : r.triggers)
        if (rule.find(t) != std::string::npos) out.push_back(t);
    // A rule matched through one trigger stands for its whole rulebook entry.
    std::vector<std::string> all;
    for (const auto& r : rulebook_)
      for (const auto& t : r.triggers)
        if (std::find(out.begin(), out.end(), t) != out.end()) {
          all.insert(all.end(), r.triggers.begin(), r.triggers.end());
          break;
        }
    return all;
  }

  std::string generate(const std::string& caption) const {
    static const std::vector<std::pair<std::string, std::string>> actors{
        {"person", "A person walking along the sidewalk is normal."},
        {"car", "A car driving steadily along the road is normal."},
        {"cyclist", "A cyclist riding along the path is normal."},
        {"cart", "A cart moving slowly along the sidewalk is normal."}};
    const std::string c = lower(caption);
    std::string s = "### " + std::string(kNormalHeader) + "\n";
    bool any = false;
    for (const auto& [word, rule] : actors)
      if (c.find(word) != std::string::npos) {
        s += "- " + rule + "\n";
        any = true;
      }
    if (!any) s += "- Moving along a lane without touching others is normal.\n";
    s += "\n### " + std::string(kAnomalyHeader);
    for (const auto& r : rulebook_) s += "\n- " + r.text;
    return s;
  }

  static std::string answer(const std::vector<std::string>& broken) {
    if (broken.empty()) return "Anomaly: No\nBroken Rules: None";
    std::string s = "Anomaly: Yes\nBroken Rules:";
    for (const auto& b : broken) s += "\n- " + b;
    return s;
  }

  std::vector<Rule> rulebook_;
  std::vector<std::string> rule_free_triggers_;
  std::atomic<std::size_t> rule_calls_{0}, aggregate_calls_{0}, decision_calls_{0}, other_calls_{0};
};

}  // namespace vad::semantic
