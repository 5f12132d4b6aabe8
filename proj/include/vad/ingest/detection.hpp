#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vad/core/error.hpp"
#include "vad/core/jsonl.hpp"
#include "vad/core/parallel.hpp"
#include "vad/core/run_log.hpp"
#include "vad/ingest/frames.hpp"

namespace vad {

struct Detection {
  std::size_t frame_index = 0;
  BBox bbox;
  std::string class_label;
  double confidence = 1.0;

  bool operator==(const Detection&) const = default;
};

inline json detection_to_json(const std::string& video_id, const Detection& d) {
  return {{"video_id", video_id},
          {"frame_index", d.frame_index},
          {"bbox", {d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h}},
          {"class_label", d.class_label},
          {"confidence", d.confidence}};
}

inline Detection detection_from_json(const json& j) {
  const auto& b = j.at("bbox");
  return {j.at("frame_index").get<std::size_t>(),
          {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()},
          j.at("class_label").get<std::string>(),
          j.value("confidence", 1.0)};
}

class DetectorClient {
 public:
  virtual ~DetectorClient() = default;
  // Raw detections for one frame; may throw TransportError.
  virtual std::vector<Detection> detect(const FrameRef& frame) = 0;
  virtual std::string model_id() const = 0;
};

// Plays back detections from JSONL rows {video_id, frame_index, bbox, class_label,
// confidence}. Frames without rows yield no detections.
class ScriptedDetector : public DetectorClient {
 public:
  ScriptedDetector() = default;
  explicit ScriptedDetector(const std::vector<json>& rows) {
    for (const auto& r : rows) script_[{r.at("video_id").get<std::string>(), r.at("frame_index").get<std::size_t>()}].push_back(detection_from_json(r));
  }
  static ScriptedDetector from_file(const std::filesystem::path& p) { return ScriptedDetector(read_jsonl(p)); }

  void add(const std::string& video_id, Detection d) { script_[{video_id, d.frame_index}].push_back(std::move(d)); }
  void set_available(bool available) { available_ = available; }

  std::vector<Detection> detect(const FrameRef& frame) override {
    ++calls_;
    if (!available_) throw TransportError("scripted detector marked unavailable");
    auto it = script_.find({frame.video_id, frame.frame_index});
    return it == script_.end() ? std::vector<Detection>{} : it->second;
  }
  std::string model_id() const override { return "scripted-detector"; }
  std::size_t calls() const { return calls_; }

 private:
  std::map<std::pair<std::string, std::size_t>, std::vector<Detection>> script_;
  std::atomic<bool> available_{true};
  std::atomic<std::size_t> calls_{0};
};

// Runs the detector on one frame and normalizes its output: boxes clamped to the
// image, confidences clamped to [0, 1], frame_index stamped.
inline std::vector<Detection> detect_objects(const FrameRef& frame, DetectorClient& detector) {
  if (frame.image.empty()) throw ShapeError("detect_objects", "non-empty image", "0x0");
  auto dets = detector.detect(frame);
  for (auto& d : dets) {
    d.frame_index = frame.frame_index;
    d.bbox = clamp_box(d.bbox, frame.image.width, frame.image.height);
    d.confidence = std::clamp(d.confidence, 0.0, 1.0);
  }
  return dets;
}

// Detections of a video keyed by frame index.
using DetectionIndex = std::map<std::size_t, std::vector<Detection>>;

// Detects every given frame with up to `parallelism` calls in flight. Frames whose
// detector call fails are logged as "skipped-detection" and get no entry.
inline DetectionIndex detect_frames(const std::vector<const FrameRef*>& frames, DetectorClient& detector,
                                    std::size_t parallelism, RunLog* log = nullptr) {
  struct Outcome {
    bool ok = false;
    std::vector<Detection> dets;
    std::string error;
  };
  auto outcomes = bounded_map<Outcome>(frames.size(), parallelism, [&](std::size_t i) {
    try {
      return Outcome{true, detect_objects(*frames[i], detector), {}};
    } catch (const TransportError& e) {
      return Outcome{false, {}, e.what()};
    }
  });
  DetectionIndex out;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (outcomes[i].ok) {
      out[frames[i]->frame_index] = std::move(outcomes[i].dets);
    } else if (log) {
      log->record({"ingest", "skipped-detection", frames[i]->video_id, static_cast<long long>(frames[i]->frame_index), outcomes[i].error});
    }
  }
  return out;
}

}  // namespace vad
