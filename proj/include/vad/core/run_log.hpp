#pragma once

#include <algorithm>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace vad {

// Collects notable per-item events (skipped detections, missing captions, parse
// failures). Events are sorted before export so concurrent producers still yield a
// deterministic log.
class RunLog {
 public:
  struct Event {
    std::string stage;
    std::string kind;
    std::string video_id;
    long long frame_index = -1;
    std::string detail;

    auto key() const { return std::tie(stage, video_id, frame_index, kind, detail); }
  };

  void record(Event e) {
    std::lock_guard lock(mu_);
    events_.push_back(std::move(e));
  }

  std::vector<Event> events() const {
    std::lock_guard lock(mu_);
    auto out = events_;
    std::sort(out.begin(), out.end(), [](const Event& a, const Event& b) { return a.key() < b.key(); });
    return out;
  }

  std::size_t count(const std::string& kind) const {
    std::lock_guard lock(mu_);
    return static_cast<std::size_t>(std::count_if(events_.begin(), events_.end(), [&](const Event& e) { return e.kind == kind; }));
  }

  std::vector<nlohmann::json> to_json() const {
    std::vector<nlohmann::json> rows;
    for (const auto& e : events())
      rows.push_back({{"stage", e.stage}, {"kind", e.kind}, {"video_id", e.video_id}, {"frame_index", e.frame_index}, {"detail", e.detail}});
    return rows;
  }

 private:
  mutable std::mutex mu_;
  std::vector<Event> events_;
};

}  // namespace vad
