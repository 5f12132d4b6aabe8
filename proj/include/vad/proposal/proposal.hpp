#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vad/core/error.hpp"
#include "vad/core/jsonl.hpp"
#include "vad/ssl/model.hpp"

namespace vad::proposal {

using ssl::kNumTasks;
using ssl::TaskValues;

inline constexpr double kDefaultThreshold = 0.3;

// Per-task mean loss on the training set, separately for object stacks and whole
// frames. NaN marks a task with no training signal at that level.
struct Normalizers {
  TaskValues object_mean{};
  TaskValues frame_mean{};
};

inline json task_values_json(const TaskValues& v) {
  json a = json::array();
  for (double x : v) a.push_back(std::isfinite(x) ? json(x) : json(nullptr));
  return a;
}

inline TaskValues task_values_from(const json& j) {
  TaskValues v{};
  if (!j.is_array() || j.size() != kNumTasks) throw ParseError("expected 4 task values");
  for (std::size_t i = 0; i < kNumTasks; ++i) v[i] = j[i].is_null() ? std::nan("") : j[i].get<double>();
  return v;
}

inline void to_json(json& j, const Normalizers& n) {
  j = json{{"object", task_values_json(n.object_mean)}, {"frame", task_values_json(n.frame_mean)}};
}

inline void from_json(const json& j, Normalizers& n) {
  n.object_mean = task_values_from(j.at("object"));
  n.frame_mean = task_values_from(j.at("frame"));
}

// Mean of each task's loss over samples (NaN entries skipped).
inline TaskValues mean_losses(std::span<const TaskValues> per_sample) {
  TaskValues sum{}, count{};
  for (const auto& v : per_sample)
    for (std::size_t i = 0; i < kNumTasks; ++i)
      if (std::isfinite(v[i])) {
        sum[i] += v[i];
        count[i] += 1;
      }
  TaskValues out{};
  for (std::size_t i = 0; i < kNumTasks; ++i) out[i] = count[i] > 0 ? sum[i] / count[i] : std::nan("");
  return out;
}

// Weighted total of normalized task losses. Each applicable task contributes its
// relative excess over the training mean, L/mean - 1, weighted by its share of the
// task weights; a score of 0 is a typical training sample.
struct WeightedScore {
  TaskValues normalized{};  // NaN where the task does not apply
  TaskValues shares{};      // weights renormalized over applicable tasks
  double total = 0.0;
};

inline WeightedScore weighted_total(const TaskValues& raw, const TaskValues& mean, const TaskValues& weights) {
  WeightedScore s;
  double wsum = 0.0;
  for (std::size_t i = 0; i < kNumTasks; ++i) {
    const bool applies = std::isfinite(raw[i]) && std::isfinite(mean[i]) && mean[i] > 0.0 && weights[i] > 0.0;
    s.normalized[i] = applies ? raw[i] / mean[i] - 1.0 : std::nan("");
    if (applies) wsum += weights[i];
  }
  for (std::size_t i = 0; i < kNumTasks; ++i) {
    s.shares[i] = std::isfinite(s.normalized[i]) && wsum > 0 ? weights[i] / wsum : 0.0;
    if (s.shares[i] > 0) s.total += s.shares[i] * s.normalized[i];
  }
  return s;
}

struct ObjectScore {
  std::string object_id;
  double total_loss = 0.0;
  TaskValues per_task{};
};

enum class ScoreLevel { object, frame, unscored };

inline const char* to_string(ScoreLevel l) {
  switch (l) {
    case ScoreLevel::object: return "object";
    case ScoreLevel::frame: return "frame";
    case ScoreLevel::unscored: return "unscored";
  }
  return "?";
}

struct AnomalyProposal {
  std::string video_id;
  std::size_t frame_index = 0;
  double total_loss = 0.0;
  TaskValues per_task_losses{};  // raw losses of the frame's top-scoring input
  TaskValues normalized_losses{};
  TaskValues weights{};          // shares used in the total
  bool flagged = false;
  ScoreLevel level = ScoreLevel::unscored;
  std::vector<ObjectScore> object_scores;

  bool scored() const { return level != ScoreLevel::unscored; }
};

inline bool exceeds(double total, double threshold) { return total > threshold; }

// Frame score from its objects (max), else from the whole-frame input, else unscored.
inline AnomalyProposal aggregate_frame(std::string video_id, std::size_t frame_index, std::vector<ObjectScore> objects,
                                       std::optional<ObjectScore> whole_frame, double threshold,
                                       const TaskValues& object_mean = {}, const TaskValues& frame_mean = {},
                                       const TaskValues& weights = {}) {
  AnomalyProposal p;
  p.video_id = std::move(video_id);
  p.frame_index = frame_index;
  p.object_scores = std::move(objects);
  const ObjectScore* top = nullptr;
  const TaskValues* mean = nullptr;
  if (!p.object_scores.empty()) {
    top = &*std::max_element(p.object_scores.begin(), p.object_scores.end(),
                             [](const ObjectScore& a, const ObjectScore& b) { return a.total_loss < b.total_loss; });
    p.level = ScoreLevel::object;
    mean = &object_mean;
  } else if (whole_frame) {
    top = &*whole_frame;
    p.level = ScoreLevel::frame;
    mean = &frame_mean;
  }
  if (top) {
    p.total_loss = top->total_loss;
    p.per_task_losses = top->per_task;
    const auto ws = weighted_total(top->per_task, *mean, weights);
    p.normalized_losses = ws.normalized;
    p.weights = ws.shares;
    p.flagged = exceeds(p.total_loss, threshold);
  }
  return p;
}

// Re-applies a threshold to already scored proposals.
inline void apply_threshold(std::vector<AnomalyProposal>& proposals, double threshold) {
  for (auto& p : proposals) p.flagged = p.scored() && exceeds(p.total_loss, threshold);
}

struct ValidationSet {
  std::vector<AnomalyProposal> flagged;  // ordered by (video_id, frame_index)
  std::size_t scored = 0;
  double reduction = 1.0;  // 1 - flagged/scored
};

inline ValidationSet filter_for_validation(std::span<const AnomalyProposal> proposals) {
  ValidationSet v;
  for (const auto& p : proposals) {
    if (!p.scored()) continue;
    ++v.scored;
    if (p.flagged) v.flagged.push_back(p);
  }
  std::stable_sort(v.flagged.begin(), v.flagged.end(), [](const AnomalyProposal& a, const AnomalyProposal& b) {
    return a.video_id != b.video_id ? a.video_id < b.video_id : a.frame_index < b.frame_index;
  });
  v.reduction = v.scored ? 1.0 - static_cast<double>(v.flagged.size()) / static_cast<double>(v.scored) : 1.0;
  return v;
}

inline void to_json(json& j, const AnomalyProposal& p) {
  json objs = json::array();
  for (const auto& o : p.object_scores)
    objs.push_back({{"object_id", o.object_id}, {"total_loss", o.total_loss}, {"per_task", task_values_json(o.per_task)}});
  j = json{{"video_id", p.video_id},
           {"frame_index", p.frame_index},
           {"total_loss", p.total_loss},
           {"per_task_losses", task_values_json(p.per_task_losses)},
           {"normalized_losses", task_values_json(p.normalized_losses)},
           {"weights", task_values_json(p.weights)},
           {"flagged", p.flagged},
           {"level", to_string(p.level)},
           {"object_scores", objs}};
}

inline void from_json(const json& j, AnomalyProposal& p) {
  p.video_id = j.at("video_id").get<std::string>();
  p.frame_index = j.at("frame_index").get<std::size_t>();
  p.total_loss = j.at("total_loss").get<double>();
  p.per_task_losses = task_values_from(j.at("per_task_losses"));
  p.normalized_losses = task_values_from(j.at("normalized_losses"));
  p.weights = task_values_from(j.at("weights"));
  p.flagged = j.at("flagged").get<bool>();
  const auto level = j.at("level").get<std::string>();
  p.level = level == "object" ? ScoreLevel::object : level == "frame" ? ScoreLevel::frame : ScoreLevel::unscored;
  p.object_scores.clear();
  for (const auto& o : j.at("object_scores"))
    p.object_scores.push_back({o.at("object_id").get<std::string>(), o.at("total_loss").get<double>(), task_values_from(o.at("per_task"))});
}

}  // namespace vad::proposal
