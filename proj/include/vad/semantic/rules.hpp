#pragma once

#include <algorithm>
#include <cctype>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "vad/core/error.hpp"
#include "vad/core/hash.hpp"
#include "vad/core/jsonl.hpp"
#include "vad/core/parallel.hpp"
#include "vad/core/retry.hpp"
#include "vad/core/rng.hpp"
#include "vad/semantic/caption.hpp"
#include "vad/semantic/clients.hpp"
#include "vad/semantic/prompts.hpp"

namespace vad::semantic {

inline constexpr std::size_t kRuleFrames = 20;

enum class ParseStatus { ok, repaired, failed };

inline const char* to_string(ParseStatus s) {
  switch (s) {
    case ParseStatus::ok: return "ok";
    case ParseStatus::repaired: return "repaired";
    case ParseStatus::failed: return "failed";
  }
  return "?";
}

inline ParseStatus parse_status(const std::string& s) {
  if (s == "ok") return ParseStatus::ok;
  if (s == "repaired") return ParseStatus::repaired;
  if (s == "failed") return ParseStatus::failed;
  throw ParseError("unknown parse status '" + s + "'");
}

struct LlmSettings {
  int max_tokens = 1024;
  std::size_t parallelism = 4;
  RetryPolicy retry;
};

struct RuleFragment {
  std::size_t frame_index = 0;
  std::string text;
  bool well_formed = true;  // false: kept verbatim for aggregation, flagged
};

struct RuleSet {
  std::string video_id;
  std::vector<std::string> normal;
  std::vector<std::string> anomaly;
  std::vector<std::size_t> provenance;  // sampled frame indices
  ParseStatus status = ParseStatus::ok;
  std::string raw_response;
};

inline void to_json(json& j, const RuleFragment& f) {
  j = json{{"frame_index", f.frame_index}, {"text", f.text}, {"well_formed", f.well_formed}};
}
inline void from_json(const json& j, RuleFragment& f) {
  f.frame_index = j.at("frame_index").get<std::size_t>();
  f.text = j.at("text").get<std::string>();
  f.well_formed = j.at("well_formed").get<bool>();
}

inline void to_json(json& j, const RuleSet& r) {
  j = json{{"video_id", r.video_id},         {"normal_rules", r.normal},   {"anomaly_rules", r.anomaly},
           {"provenance", r.provenance},     {"parse_status", to_string(r.status)}, {"raw_response", r.raw_response}};
}
inline void from_json(const json& j, RuleSet& r) {
  r.video_id = j.at("video_id").get<std::string>();
  r.normal = j.at("normal_rules").get<std::vector<std::string>>();
  r.anomaly = j.at("anomaly_rules").get<std::vector<std::string>>();
  r.provenance = j.at("provenance").get<std::vector<std::size_t>>();
  r.status = parse_status(j.at("parse_status").get<std::string>());
  r.raw_response = j.at("raw_response").get<std::string>();
}

// Lowercase, whitespace collapsed, trailing punctuation dropped.
inline std::string normalize_rule(std::string_view s) {
  std::string out;
  bool space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = !out.empty();
      continue;
    }
    if (space) out.push_back(' ');
    space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  while (!out.empty() && (out.back() == '.' || out.back() == ';' || out.back() == ',' || out.back() == ' ')) out.pop_back();
  return out;
}

// First occurrence of each rule wins.
inline std::vector<std::string> dedup_rules(const std::vector<std::string>& rules) {
  std::set<std::string> seen;
  std::vector<std::string> out;
  for (const auto& r : rules)
    if (seen.insert(normalize_rule(r)).second) out.push_back(r);
  return out;
}

struct RuleSections {
  bool has_normal = false;
  bool has_anomaly = false;
  std::vector<std::string> normal;
  std::vector<std::string> anomaly;
};

namespace detail {

inline std::string upper(std::string_view s) {
  std::string u(s);
  for (auto& c : u) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return u;
}

// "- x", "* x", "1. x", "1) x" -> "x"; anything else -> "".
inline std::string bullet_body(const std::string& line) {
  const std::string t = trim(line);
  if (t.empty()) return {};
  if (t[0] == '-' || t[0] == '*') return trim(std::string_view(t).substr(1));
  std::size_t i = 0;
  while (i < t.size() && std::isdigit(static_cast<unsigned char>(t[i]))) ++i;
  if (i > 0 && i < t.size() && (t[i] == '.' || t[i] == ')')) return trim(std::string_view(t).substr(i + 1));
  return {};
}

}  // namespace detail

// Reads the normal/anomaly sections. Headers are recognized with either "==="
// or "###" decoration; bullets under a header belong to it.
inline RuleSections parse_rule_sections(std::string_view text) {
  RuleSections out;
  int section = -1;  // 0 normal, 1 anomaly
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string line(text.substr(start, end - start));
    start = end + 1;
    const std::string u = detail::upper(line);
    if (u.find("RULES FOR NORMAL") != std::string::npos) {
      section = 0;
      out.has_normal = true;
      continue;
    }
    if (u.find("RULES FOR ANOMAL") != std::string::npos) {
      section = 1;
      out.has_anomaly = true;
      continue;
    }
    if (section < 0) continue;
    const std::string body = detail::bullet_body(line);
    if (body.empty() || body == "..." || body.front() == '[') continue;
    (section == 0 ? out.normal : out.anomaly).push_back(body);
  }
  return out;
}

inline std::string format_rules(const std::vector<std::string>& normal, const std::vector<std::string>& anomaly) {
  std::string s = "=== " + std::string(kNormalHeader) + " ===\n";
  for (const auto& r : normal) s += "- " + r + "\n";
  s += "\n=== " + std::string(kAnomalyHeader) + " ===";
  for (const auto& r : anomaly) s += "\n- " + r;
  return s;
}

inline std::string format_rules(const RuleSet& r) { return format_rules(r.normal, r.anomaly); }

// Up to `count` frame indices drawn uniformly without replacement, seeded per
// video, returned in index order.
inline std::vector<std::size_t> sample_rule_frames(const std::vector<std::size_t>& frame_indices, std::uint64_t seed,
                                                   const std::string& video_id, std::size_t count = kRuleFrames) {
  if (frame_indices.size() <= count) return frame_indices;
  std::vector<std::size_t> pos(frame_indices.size());
  std::iota(pos.begin(), pos.end(), 0);
  Rng rng(seed ^ stable_hash64("rules:" + video_id));
  rng.shuffle(pos);
  pos.resize(count);
  std::sort(pos.begin(), pos.end());
  std::vector<std::size_t> out;
  for (auto p : pos) out.push_back(frame_indices[p]);
  return out;
}

struct IndexedCaption {
  std::size_t frame_index = 0;
  std::string caption;
};

// One rule-generation prompt per caption, issued concurrently; fragments return in
// caption order. A transport failure after retries propagates.
inline std::vector<RuleFragment> generate_rules(const std::vector<IndexedCaption>& sampled, LlmClient& llm, const LlmSettings& s = {}) {
  return bounded_map<RuleFragment>(sampled.size(), s.parallelism, [&](std::size_t i) {
    const auto prompt = rule_generation_prompt(sampled[i].caption);
    std::string reply = with_retries(s.retry, [&] { return llm.complete(prompt, s.max_tokens); });
    const auto sec = parse_rule_sections(reply);
    const bool ok = sec.has_normal && sec.has_anomaly && (!sec.normal.empty() || !sec.anomaly.empty());
    return RuleFragment{sampled[i].frame_index, std::move(reply), ok};
  });
}

// Consolidates fragments through the aggregation prompt. A reply with neither
// section is re-prompted once; a second such reply is a run failure. A reply with
// an empty list gives status failed and the video is not verified.
inline RuleSet aggregate_rules(const std::string& video_id, const std::vector<RuleFragment>& fragments, LlmClient& llm,
                               const LlmSettings& s = {}) {
  if (fragments.empty()) throw ConfigError("aggregate_rules: no rule fragments for video " + video_id);
  std::string all;
  for (std::size_t i = 0; i < fragments.size(); ++i) {
    if (i) all += "\n\n";
    all += trim(fragments[i].text);
  }
  const std::string prompt = rule_aggregation_prompt(all);
  RuleSet rs;
  rs.video_id = video_id;
  for (const auto& f : fragments) rs.provenance.push_back(f.frame_index);

  rs.raw_response = with_retries(s.retry, [&] { return llm.complete(prompt, s.max_tokens); });
  auto sec = parse_rule_sections(rs.raw_response);
  if (!sec.has_normal && !sec.has_anomaly) {
    rs.raw_response = with_retries(s.retry, [&] { return llm.complete(with_repair(prompt), s.max_tokens); });
    sec = parse_rule_sections(rs.raw_response);
    if (!sec.has_normal && !sec.has_anomaly) throw ParseError("rule aggregation for video " + video_id + ": no rule sections after repair");
    rs.status = ParseStatus::repaired;
  }
  rs.normal = dedup_rules(sec.normal);
  rs.anomaly = dedup_rules(sec.anomaly);
  if (rs.normal.empty() || rs.anomaly.empty()) rs.status = ParseStatus::failed;
  return rs;
}

}  // namespace vad::semantic
