#pragma once

#include <string>
#include <vector>

#include "vad/core/http.hpp"
#include "vad/ingest/detection.hpp"

namespace vad {

// Detector served over HTTP. Request:
//   {"model": ..., "video_id": ..., "frame_index": ..., "image_png_base64": ...}
// Reply:
//   {"detections": [{"bbox": [x, y, w, h], "class_label": ..., "confidence": ...}]}
class HttpDetector : public DetectorClient {
 public:
  HttpDetector(std::string endpoint, std::string model) : endpoint_(std::move(endpoint)), model_(std::move(model)) {}

  std::vector<Detection> detect(const FrameRef& frame) override {
    const json reply = post_json(endpoint_, {{"model", model_},
                                             {"video_id", frame.video_id},
                                             {"frame_index", frame.frame_index},
                                             {"image_png_base64", base64_encode(encode_png(frame.image))}});
    std::vector<Detection> out;
    try {
      for (const auto& d : reply.at("detections")) {
        json row = d;
        row["frame_index"] = frame.frame_index;
        out.push_back(detection_from_json(row));
      }
    } catch (const json::exception& e) {
      throw TransportError(endpoint_ + ": unexpected detector reply: " + e.what());
    }
    return out;
  }
  std::string model_id() const override { return model_; }

 private:
  std::string endpoint_;
  std::string model_;
};

}  // namespace vad
