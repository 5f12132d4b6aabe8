#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vad/core/jsonl.hpp"
#include "vad/core/retry.hpp"
#include "vad/semantic/clients.hpp"
#include "vad/semantic/prompts.hpp"
#include "vad/semantic/rules.hpp"

namespace vad::semantic {

struct Verdict {
  std::string video_id;
  std::size_t frame_index = 0;
  bool is_anomaly = false;
  std::vector<std::string> broken_rules;
  std::string raw_response;
  ParseStatus status = ParseStatus::ok;
  std::string error;  // why a failed verdict failed
};

inline void to_json(json& j, const Verdict& v) {
  j = json{{"video_id", v.video_id},       {"frame_index", v.frame_index}, {"is_anomaly", v.is_anomaly},
           {"broken_rules", v.broken_rules}, {"raw_response", v.raw_response}, {"parse_status", to_string(v.status)},
           {"error", v.error}};
}
inline void from_json(const json& j, Verdict& v) {
  v.video_id = j.at("video_id").get<std::string>();
  v.frame_index = j.at("frame_index").get<std::size_t>();
  v.is_anomaly = j.at("is_anomaly").get<bool>();
  v.broken_rules = j.at("broken_rules").get<std::vector<std::string>>();
  v.raw_response = j.at("raw_response").get<std::string>();
  v.status = parse_status(j.at("parse_status").get<std::string>());
  v.error = j.value("error", "");
}

struct Decision {
  bool anomaly = false;
  std::vector<std::string> broken_rules;
};

namespace detail {

inline bool starts_with_ci(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i)
    if (std::tolower(static_cast<unsigned char>(s[i])) != std::tolower(static_cast<unsigned char>(prefix[i]))) return false;
  return true;
}

inline std::vector<std::string> lines_of(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    out.emplace_back(text.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

}  // namespace detail

// Reads the first "Anomaly:" line (case-insensitive) as Yes/No and the bullets
// after "Broken Rules:" up to the first non-bullet text. A same-line entry other
// than "None" counts as one rule. nullopt when no usable Anomaly line exists.
inline std::optional<Decision> parse_decision(std::string_view text) {
  const auto lines = detail::lines_of(text);
  std::optional<Decision> d;
  std::size_t i = 0;
  for (; i < lines.size(); ++i) {
    const std::string t = trim(lines[i]);
    if (!detail::starts_with_ci(t, "anomaly:")) continue;
    const std::string v = trim(std::string_view(t).substr(8));
    if (detail::starts_with_ci(v, "yes")) d = Decision{true, {}};
    else if (detail::starts_with_ci(v, "no")) d = Decision{false, {}};
    break;
  }
  if (!d) return std::nullopt;
  for (++i; i < lines.size(); ++i) {
    const std::string t = trim(lines[i]);
    if (!detail::starts_with_ci(t, "broken rules:")) continue;
    std::string same = trim(std::string_view(t).substr(13));
    if (same.size() >= 2 && same.front() == '[' && same.back() == ']') same = trim(std::string_view(same).substr(1, same.size() - 2));
    if (!same.empty() && !detail::starts_with_ci(same, "none") && !detail::starts_with_ci(same, "\"none")) d->broken_rules.push_back(same);
    for (++i; i < lines.size(); ++i) {
      const std::string b = trim(lines[i]);
      if (b.empty()) continue;
      const std::string body = detail::bullet_body(b);
      if (body.empty()) break;
      if (!detail::starts_with_ci(body, "none")) d->broken_rules.push_back(body);
    }
    break;
  }
  return d;
}

// One decision prompt (rule-grounded, or caption-only when `rules` is null), one
// repair re-prompt if the reply is unparseable. Failed verdicts carry the reason
// and are reported by the caller, never read as normal.
inline Verdict verify_frame(const std::string& video_id, std::size_t frame_index, const std::string& caption, const RuleSet* rules,
                            LlmClient& llm, const LlmSettings& s = {}) {
  Verdict v;
  v.video_id = video_id;
  v.frame_index = frame_index;
  const std::string prompt = rules ? decision_prompt(caption, format_rules(*rules)) : caption_only_prompt(caption);
  try {
    v.raw_response = with_retries(s.retry, [&] { return llm.complete(prompt, s.max_tokens); });
    auto d = parse_decision(v.raw_response);
    if (!d) {
      v.raw_response = with_retries(s.retry, [&] { return llm.complete(with_repair(prompt), s.max_tokens); });
      d = parse_decision(v.raw_response);
      v.status = ParseStatus::repaired;
    }
    if (!d) {
      v.status = ParseStatus::failed;
      v.error = "unparseable reply";
      return v;
    }
    v.is_anomaly = d->anomaly;
    v.broken_rules = std::move(d->broken_rules);
  } catch (const TransportError& e) {
    v.status = ParseStatus::failed;
    v.error = std::string("transport: ") + e.what();
  }
  return v;
}

}  // namespace vad::semantic
