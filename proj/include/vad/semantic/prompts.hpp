#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vad/core/error.hpp"

namespace vad::semantic {

// Prompt texts. Slots are written {caption} and {rules}; everything else is the
// published wording. The same texts live under prompts/<version>/ in the repo and
// are copied into every run directory.
inline constexpr std::string_view kPromptVersion = "v1";

inline constexpr std::string_view kCaptionInstruction =
    "You are an AI visual assistant that can analyze a video frame. Describe the frame with focus on people's "
    "activities, objects and their relation. Don't mention background.";

inline constexpr std::string_view kRuleGenerationTemplate =
    "You are an expert in analyzing scenes and generating rules for normal and anomaly detection. Now given the "
    "following frame description:\n"
    "{caption}\n"
    "\n"
    "Generate a set of rules that define:\n"
    "1. What constitutes a normal activity or object in this context.\n"
    "2. What constitutes an anomaly activity or object in this context.\n"
    "\n"
    "The only anomalies that matter are interactions of two or more objects/actors. Be strict, there should not be "
    "anything odd or out of ordinary in the street or on the sidewalk of the campus. Adhere to these notes. Rules "
    "should be clear, concise, and specific to the context of the frame description and the needed anomalies we "
    "said. Don't miss any interacted objects.";

inline constexpr std::string_view kRuleAggregationTemplate =
    "You are an expert at organizing rules for video anomaly detection. Below are multiple independent rule sets "
    "for the same video. Combine them into one final set of rules with:\n"
    "1. Clear separation between normal and anomaly rules\n"
    "2. No duplicate rules\n"
    "3. All unique anomaly cases preserved\n"
    "4. Contradictory rules resolved by considering the worst case (apply stricter rules)\n"
    "5. Consistent formatting, with no markdown annotations, no extra talks\n"
    "\n"
    "Rules to aggregate:\n"
    "{rules}\n"
    "\n"
    "Provide the consolidated rules in this exact format. Don't output anything more than the given format:\n"
    "\n"
    "=== RULES FOR NORMAL ACTIVITIES OR OBJECTS ===\n"
    "- [normal rule 1]\n"
    "- [normal rule 2]\n"
    "...\n"
    "\n"
    "=== RULES FOR ANOMALY ACTIVITIES OR OBJECTS ===\n"
    "- [anomaly rule 1]\n"
    "- [anomaly rule 2]\n"
    "...";

inline constexpr std::string_view kDecisionTemplate =
    "You are an expert in anomaly detection in video frames. You should be very strict and don't let any anomalies "
    "or broken rules unattended. Use scene description and rules provided. Below is a scene description and the "
    "video's rules:\n"
    "\n"
    "Scene Description:\n"
    "{caption}\n"
    "\n"
    "Rules for Normal/Anomaly Scenes:\n"
    "{rules}\n"
    "\n"
    "Analyze this scene and determine:\n"
    "1. Is this an anomaly scene? (Answer Yes/No first)\n"
    "2. If anomaly, which rules are broken?\n"
    "\n"
    "Format your response like this:\n"
    "Anomaly: Yes/No\n"
    "Broken Rules: [list broken rules or \"None\"]";

// Rule-free decision prompt used when the rule stage is ablated.
inline constexpr std::string_view kCaptionOnlyDecisionTemplate =
    "You are an expert in anomaly detection in video frames. You should be very strict and don't let any anomalies "
    "unattended. Below is a scene description:\n"
    "\n"
    "Scene Description:\n"
    "{caption}\n"
    "\n"
    "Analyze this scene and determine:\n"
    "1. Is this an anomaly scene? (Answer Yes/No first)\n"
    "\n"
    "Format your response like this:\n"
    "Anomaly: Yes/No\n"
    "Broken Rules: None";

// Appended once when a reply could not be parsed.
inline constexpr std::string_view kRepairSuffix =
    "\n\nYour previous reply did not follow the required format. Reply again using exactly the format above.";

inline constexpr std::string_view kNormalHeader = "RULES FOR NORMAL ACTIVITIES OR OBJECTS";
inline constexpr std::string_view kAnomalyHeader = "RULES FOR ANOMALY ACTIVITIES OR OBJECTS";

struct NamedTemplate {
  std::string_view file;
  std::string_view text;
};

inline std::vector<NamedTemplate> prompt_templates() {
  return {{"caption_instruction.txt", kCaptionInstruction},
          {"rule_generation.txt", kRuleGenerationTemplate},
          {"rule_aggregation.txt", kRuleAggregationTemplate},
          {"decision.txt", kDecisionTemplate}};
}

// Substitutes every {name} slot. Values are inserted verbatim, so a value that
// itself contains "{caption}" is not expanded again.
inline std::string render(std::string_view tmpl, const std::vector<std::pair<std::string_view, std::string_view>>& slots) {
  std::string out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    bool hit = false;
    if (tmpl[i] == '{') {
      for (const auto& [name, value] : slots) {
        if (tmpl.substr(i + 1, name.size()) == name && i + 1 + name.size() < tmpl.size() && tmpl[i + 1 + name.size()] == '}') {
          out.append(value);
          i += name.size() + 2;
          hit = true;
          break;
        }
      }
    }
    if (!hit) out.push_back(tmpl[i++]);
  }
  return out;
}

inline std::string rule_generation_prompt(std::string_view caption) {
  return render(kRuleGenerationTemplate, {{"caption", caption}});
}

inline std::string rule_aggregation_prompt(std::string_view all_rules) {
  return render(kRuleAggregationTemplate, {{"rules", all_rules}});
}

inline std::string decision_prompt(std::string_view caption, std::string_view rules) {
  return render(kDecisionTemplate, {{"caption", caption}, {"rules", rules}});
}

inline std::string caption_only_prompt(std::string_view caption) {
  return render(kCaptionOnlyDecisionTemplate, {{"caption", caption}});
}

inline std::string with_repair(std::string_view prompt) { return std::string(prompt) + std::string(kRepairSuffix); }

}  // namespace vad::semantic
