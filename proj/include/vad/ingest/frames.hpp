#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <map>
#include <optional>
#include <ranges>
#include <string>
#include <vector>

#include "vad/core/error.hpp"
#include "vad/core/jsonl.hpp"
#include "vad/ingest/image.hpp"

namespace vad {

struct FrameRef {
  std::string video_id;
  std::size_t frame_index = 0;
  double timestamp_s = 0.0;
  Raster image;
};

// A decoded video: frames in strictly increasing frame_index, constant image size.
struct Video {
  std::string id;
  std::vector<FrameRef> frames;

  bool empty() const { return frames.empty(); }
  std::size_t size() const { return frames.size(); }

  // Position of the frame with the given index, or nullopt.
  std::optional<std::size_t> position_of(std::size_t frame_index) const {
    auto it = std::lower_bound(frames.begin(), frames.end(), frame_index,
                               [](const FrameRef& f, std::size_t i) { return f.frame_index < i; });
    if (it == frames.end() || it->frame_index != frame_index) return std::nullopt;
    return static_cast<std::size_t>(it - frames.begin());
  }
};

inline void validate_video(const Video& v) {
  for (std::size_t i = 1; i < v.frames.size(); ++i) {
    if (v.frames[i].frame_index <= v.frames[i - 1].frame_index)
      throw ConfigError("video " + v.id + ": frame indices not strictly increasing at position " + std::to_string(i));
    if (v.frames[i].image.width != v.frames[0].image.width || v.frames[i].image.height != v.frames[0].image.height)
      throw ShapeError("video " + v.id, std::to_string(v.frames[0].image.width) + "x" + std::to_string(v.frames[0].image.height),
                       std::to_string(v.frames[i].image.width) + "x" + std::to_string(v.frames[i].image.height));
  }
}

// Lazily keeps frames whose index is a multiple of `stride`, in order.
template <std::ranges::viewable_range R>
auto sample_frames(R&& frames, std::size_t stride) {
  if (stride == 0) throw ConfigError("stride must be >= 1");
  return std::forward<R>(frames) | std::views::filter([stride](const auto& f) { return f.frame_index % stride == 0; });
}

// Eager variant returning copies.
inline std::vector<FrameRef> sampled_copy(const std::vector<FrameRef>& frames, std::size_t stride) {
  std::vector<FrameRef> out;
  for (const auto& f : sample_frames(frames, stride)) out.push_back(f);
  return out;
}

namespace detail {
inline bool is_numeric_stem(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
}
}  // namespace detail

// Reads a directory of zero-padded numeric PNG/JPEG frames.
inline Video load_video_dir(const std::filesystem::path& dir, std::string video_id, double fps = 30.0) {
  if (!std::filesystem::is_directory(dir)) throw ArtifactError("not a frame directory: " + dir.string());
  std::map<std::size_t, std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext != ".png" && ext != ".jpg" && ext != ".jpeg") continue;
    const auto stem = e.path().stem().string();
    if (!detail::is_numeric_stem(stem)) continue;
    files.emplace(std::stoull(stem), e.path());
  }
  Video v{std::move(video_id), {}};
  v.frames.reserve(files.size());
  for (const auto& [idx, path] : files)
    v.frames.push_back({v.id, idx, static_cast<double>(idx) / fps, load_image(path)});
  validate_video(v);
  return v;
}

// Frame manifest rows: {"video_id", "frame_index", "path", "timestamp_s"?}; relative
// paths resolve against the manifest's directory.
inline std::vector<Video> load_manifest(const std::filesystem::path& manifest, double fps = 30.0) {
  std::map<std::string, Video> videos;
  for (const auto& row : read_jsonl(manifest)) {
    const std::string vid = row.at("video_id").get<std::string>();
    const auto idx = row.at("frame_index").get<std::size_t>();
    std::filesystem::path p = row.at("path").get<std::string>();
    if (p.is_relative()) p = manifest.parent_path() / p;
    const double ts = row.contains("timestamp_s") ? row["timestamp_s"].get<double>() : static_cast<double>(idx) / fps;
    auto& v = videos[vid];
    v.id = vid;
    v.frames.push_back({vid, idx, ts, load_image(p)});
  }
  std::vector<Video> out;
  for (auto& [id, v] : videos) {
    std::sort(v.frames.begin(), v.frames.end(), [](const FrameRef& a, const FrameRef& b) { return a.frame_index < b.frame_index; });
    validate_video(v);
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace vad
