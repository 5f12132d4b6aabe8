#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vad/core/error.hpp"
#include "vad/core/jsonl.hpp"

namespace vad::eval {

struct ScoreSeries {
  std::string video_id;
  std::vector<std::size_t> frame_indices;
  std::vector<int> raw_binary;
  std::vector<double> smoothed;
  std::vector<int> labels;

  void validate() const {
    const auto n = frame_indices.size();
    if (raw_binary.size() != n || smoothed.size() != n || labels.size() != n)
      throw ShapeError("ScoreSeries " + video_id, "equal lengths", "mismatched lengths");
    for (double s : smoothed)
      if (!(s >= 0.0 && s <= 1.0)) throw ShapeError("ScoreSeries " + video_id, "smoothed in [0,1]", std::to_string(s));
  }
};

inline void to_json(json& j, const ScoreSeries& s) {
  j = json{{"video_id", s.video_id}, {"frame_indices", s.frame_indices}, {"raw_binary", s.raw_binary},
           {"smoothed", s.smoothed}, {"labels", s.labels}};
}
inline void from_json(const json& j, ScoreSeries& s) {
  s.video_id = j.at("video_id").get<std::string>();
  s.frame_indices = j.at("frame_indices").get<std::vector<std::size_t>>();
  s.raw_binary = j.at("raw_binary").get<std::vector<int>>();
  s.smoothed = j.at("smoothed").get<std::vector<double>>();
  s.labels = j.at("labels").get<std::vector<int>>();
}

// ROC AUC by the rank statistic with average ranks for ties: the probability that
// a random positive outscores a random negative, ties counting one half. nullopt
// when the labels hold a single class.
inline std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("roc_auc", std::to_string(scores.size()) + " labels", std::to_string(labels.size()));
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Ranks are doubled so that tie averages stay integral.
  long long pos = 0, twice_rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const long long twice_avg = static_cast<long long>(i + 1 + j);  // 2 * mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) {
        ++pos;
        twice_rank_sum += twice_avg;
      }
    i = j;
  }
  const long long neg = static_cast<long long>(n) - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  const long long twice_u = twice_rank_sum - pos * (pos + 1);
  return static_cast<double>(twice_u) / 2.0 / (static_cast<double>(pos) * static_cast<double>(neg));
}

struct MetricReport {
  std::optional<double> auc;  // nullopt: undefined (single-class labels)
  double precision = std::nan("");
  double recall = std::nan("");
  double f1 = std::nan("");
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

inline json nan_as_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }
inline double null_as_nan(const json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

inline void to_json(json& j, const MetricReport& m) {
  j = json{{"auc", m.auc ? json(*m.auc) : json("undefined")},
           {"precision", nan_as_null(m.precision)},
           {"recall", nan_as_null(m.recall)},
           {"f1", nan_as_null(m.f1)},
           {"tp", m.tp},
           {"fp", m.fp},
           {"tn", m.tn},
           {"fn", m.fn}};
}
inline void from_json(const json& j, MetricReport& m) {
  m.auc = j.at("auc").is_number() ? std::optional<double>(j.at("auc").get<double>()) : std::nullopt;
  m.precision = null_as_nan(j.at("precision"));
  m.recall = null_as_nan(j.at("recall"));
  m.f1 = null_as_nan(j.at("f1"));
  m.tp = j.at("tp").get<std::size_t>();
  m.fp = j.at("fp").get<std::size_t>();
  m.tn = j.at("tn").get<std::size_t>();
  m.fn = j.at("fn").get<std::size_t>();
}

// AUC over the scores; a frame is predicted anomalous when its score >= threshold.
// Undefined ratios are NaN.
inline MetricReport compute_metrics(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5) {
  MetricReport m;
  m.auc = roc_auc(scores, labels);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool p = scores[i] >= threshold, y = labels[i] != 0;
    (p ? (y ? m.tp : m.fp) : (y ? m.fn : m.tn)) += 1;
  }
  if (m.tp + m.fp) m.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
  if (m.tp + m.fn) m.recall = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
  if (std::isfinite(m.precision) && std::isfinite(m.recall))
    m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

// Frame-level metrics over all series pooled together.
inline MetricReport compute_metrics(std::span<const ScoreSeries> series, double threshold = 0.5) {
  std::vector<double> s;
  std::vector<int> y;
  for (const auto& x : series) {
    x.validate();
    s.insert(s.end(), x.smoothed.begin(), x.smoothed.end());
    y.insert(y.end(), x.labels.begin(), x.labels.end());
  }
  return compute_metrics(s, y, threshold);
}

}  // namespace vad::eval
