#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "vad/core/error.hpp"
#include "vad/ingest/detection.hpp"
#include "vad/ingest/frames.hpp"

namespace vad {

inline constexpr int kCropSize = 64;

struct Point {
  double x = 0;
  double y = 0;
  bool operator==(const Point&) const = default;
};

// Object-centric temporal stack: the center detection's box cropped from the
// 2t+1 frames around it, each resized to 64x64.
struct ObjectSequence {
  std::string object_id;
  std::string video_id;
  std::string class_label;
  std::size_t center_index = 0;
  std::size_t half_window_t = 3;
  BBox bbox;
  std::vector<Raster> crops;       // 2t+1, each 64x64x3
  std::vector<Point> positions;    // box centers in pixels, one per crop

  std::size_t length() const { return crops.size(); }
};

struct SequenceOptions {
  std::size_t half_window_t = 3;
  std::size_t frame_step = 1;     // temporal stride between neighbors
  double max_match_distance = 0;  // 0: twice the box diagonal
};

// Frame position for `center_pos + offset*step`, replicating the first/last frame
// beyond the video's ends.
inline std::size_t clamped_position(const Video& video, std::size_t center_pos, long offset, std::size_t step) {
  const long p = static_cast<long>(center_pos) + offset * static_cast<long>(step);
  return static_cast<std::size_t>(std::clamp(p, 0L, static_cast<long>(video.size()) - 1));
}

// Nearest same-class detection center in `frame_index`, within max_dist of `from`.
inline std::optional<Point> nearest_center(const DetectionIndex& dets, std::size_t frame_index, const std::string& label,
                                           Point from, double max_dist) {
  auto it = dets.find(frame_index);
  if (it == dets.end()) return std::nullopt;
  std::optional<Point> best;
  double best_d = max_dist;
  for (const auto& d : it->second) {
    if (d.class_label != label) continue;
    const double dist = std::hypot(d.bbox.cx() - from.x, d.bbox.cy() - from.y);
    if (dist <= best_d) {
      best_d = dist;
      best = Point{d.bbox.cx(), d.bbox.cy()};
    }
  }
  return best;
}

// Center positions of the object at frame offsets [first, last] (in steps) around
// the center frame. Each neighbor takes the nearest same-class detection to the
// previously matched position, walking outward from the center; frames without a
// match repeat the last known position.
inline std::vector<Point> associate_positions(const Video& video, const DetectionIndex& dets, const Detection& center,
                                              std::size_t center_pos, long first, long last, const SequenceOptions& opt) {
  const double max_dist = opt.max_match_distance > 0 ? opt.max_match_distance : 2.0 * std::hypot(center.bbox.w, center.bbox.h);
  std::vector<Point> pos(static_cast<std::size_t>(last - first + 1));
  const Point c{center.bbox.cx(), center.bbox.cy()};
  const long c_off = -first;
  pos[static_cast<std::size_t>(c_off)] = c;
  for (int dir : {-1, 1}) {
    Point prev = c;
    for (long k = dir; k >= first && k <= last; k += dir) {
      const auto fpos = clamped_position(video, center_pos, k, opt.frame_step);
      const auto m = nearest_center(dets, video.frames[fpos].frame_index, center.class_label, prev, max_dist);
      if (m) prev = *m;
      pos[static_cast<std::size_t>(k + c_off)] = prev;
    }
  }
  return pos;
}

inline ObjectSequence build_object_sequence(const Video& video, const Detection& detection, const SequenceOptions& opt,
                                            const DetectionIndex* neighbors = nullptr, std::string object_id = {}) {
  if (opt.half_window_t < 1) throw ConfigError("half_window_t must be >= 1");
  if (opt.frame_step < 1) throw ConfigError("frame_step must be >= 1");
  const auto center_pos = video.position_of(detection.frame_index);
  if (!center_pos) throw ConfigError("center frame " + std::to_string(detection.frame_index) + " not in video " + video.id);
  const Raster& center_img = video.frames[*center_pos].image;
  const BBox box = clamp_box(detection.bbox, center_img.width, center_img.height);
  if (box.w <= 1.0 || box.h <= 1.0)
    throw DegenerateBoxError(video.id + "@" + std::to_string(detection.frame_index) + ": " + std::to_string(box.w) + "x" + std::to_string(box.h));

  ObjectSequence seq;
  seq.object_id = object_id.empty() ? video.id + ":" + std::to_string(detection.frame_index) : std::move(object_id);
  seq.video_id = video.id;
  seq.class_label = detection.class_label;
  seq.center_index = detection.frame_index;
  seq.half_window_t = opt.half_window_t;
  seq.bbox = box;
  const long t = static_cast<long>(opt.half_window_t);
  for (long k = -t; k <= t; ++k) {
    const auto fpos = clamped_position(video, *center_pos, k, opt.frame_step);
    seq.crops.push_back(resize_bilinear(crop(video.frames[fpos].image, box), kCropSize, kCropSize));
  }
  if (neighbors) {
    seq.positions = associate_positions(video, *neighbors, detection, *center_pos, -t, t, opt);
  } else {
    seq.positions.assign(seq.crops.size(), Point{box.cx(), box.cy()});
  }
  return seq;
}

// Whole frames resized to 64x64 around a center frame, used when a frame is scored
// without object detections.
inline ObjectSequence build_frame_sequence(const Video& video, std::size_t frame_index, const SequenceOptions& opt) {
  const auto center_pos = video.position_of(frame_index);
  if (!center_pos) throw ConfigError("center frame " + std::to_string(frame_index) + " not in video " + video.id);
  const auto& img = video.frames[*center_pos].image;
  Detection whole{frame_index, {0, 0, static_cast<double>(img.width), static_cast<double>(img.height)}, "frame", 1.0};
  return build_object_sequence(video, whole, opt, nullptr, video.id + ":" + std::to_string(frame_index) + ":frame");
}

}  // namespace vad
