#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "vad/core/error.hpp"
#include "vad/core/hash.hpp"
#include "vad/core/jsonl.hpp"
#include "vad/core/rng.hpp"
#include "vad/ingest/detection.hpp"
#include "vad/ingest/frames.hpp"
#include "vad/ingest/image.hpp"

namespace vad::pipeline {

// Moving rectangles in horizontal lanes over a static street-like background.
// Anomalies are scripted interactions between two scripted objects.

struct ObjectScript {
  std::string id;
  std::string class_label;  // person | car | cyclist | cart
  std::string lane;
  double x0 = 0;      // left edge at frame 0
  double speed = 1;   // px per frame, sign is direction
  double w = 8, h = 8;
};

struct AnomalySpan {
  std::string type;  // collision | blocking | sharp_turn
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
  std::string actor;
  std::string target;
};

struct VideoScript {
  std::string id;
  std::string split = "test";  // train | test
  std::size_t frames = 300;
  std::vector<ObjectScript> objects;
  std::vector<AnomalySpan> anomalies;
};

struct SyntheticScenario {
  std::string name = "synthetic";
  int width = 160;
  int height = 120;
  double fps = 30;
  std::vector<VideoScript> videos;

  void validate() const;
};

inline const std::map<std::string, double>& lane_centers() {
  static const std::map<std::string, double> m{{"sidewalk_top", 30}, {"bike", 45},          {"road_right", 60},
                                               {"road_left", 72},    {"sidewalk_bottom", 92}};
  return m;
}

inline void SyntheticScenario::validate() const {
  static const std::set<std::string> types{"collision", "blocking", "sharp_turn"};
  static const std::set<std::string> classes{"person", "car", "cyclist", "cart"};
  if (width < 16 || height < 16) throw ConfigError("scenario frames must be at least 16x16");
  std::set<std::string> ids;
  for (const auto& v : videos) {
    if (!ids.insert(v.id).second) throw ConfigError("duplicate video id " + v.id);
    if (v.split != "train" && v.split != "test") throw ConfigError("video " + v.id + ": split must be train or test");
    if (v.frames == 0) throw ConfigError("video " + v.id + " has no frames");
    std::set<std::string> objs;
    for (const auto& o : v.objects) {
      if (!objs.insert(o.id).second) throw ConfigError("video " + v.id + ": duplicate object " + o.id);
      if (!classes.count(o.class_label)) throw ConfigError("video " + v.id + ": unknown class " + o.class_label);
      if (!lane_centers().count(o.lane)) throw ConfigError("video " + v.id + ": unknown lane " + o.lane);
      if (o.w < 2 || o.h < 2) throw ConfigError("video " + v.id + ": object " + o.id + " too small");
    }
    auto spans = v.anomalies;
    std::sort(spans.begin(), spans.end(), [](const AnomalySpan& a, const AnomalySpan& b) { return a.start < b.start; });
    for (std::size_t i = 0; i < spans.size(); ++i) {
      const auto& s = spans[i];
      if (!types.count(s.type)) throw ConfigError("video " + v.id + ": unknown anomaly type " + s.type);
      if (s.start >= s.end || s.end > v.frames) throw ConfigError("video " + v.id + ": bad anomaly span");
      if (!objs.count(s.actor) || !objs.count(s.target) || s.actor == s.target)
        throw ConfigError("video " + v.id + ": anomaly needs two distinct scripted objects");
      if (i > 0 && s.start < spans[i - 1].end) throw ConfigError("video " + v.id + ": overlapping anomaly spans");
    }
    if (v.split == "train" && !v.anomalies.empty()) throw ConfigError("training video " + v.id + " has anomalies");
  }
}

inline void to_json(json& j, const ObjectScript& o) {
  j = json{{"id", o.id}, {"class", o.class_label}, {"lane", o.lane}, {"x0", o.x0}, {"speed", o.speed}, {"w", o.w}, {"h", o.h}};
}
inline void from_json(const json& j, ObjectScript& o) {
  o.id = j.at("id").get<std::string>();
  o.class_label = j.at("class").get<std::string>();
  o.lane = j.at("lane").get<std::string>();
  o.x0 = j.at("x0").get<double>();
  o.speed = j.at("speed").get<double>();
  o.w = j.at("w").get<double>();
  o.h = j.at("h").get<double>();
}
inline void to_json(json& j, const AnomalySpan& a) {
  j = json{{"type", a.type}, {"start", a.start}, {"end", a.end}, {"actor", a.actor}, {"target", a.target}};
}
inline void from_json(const json& j, AnomalySpan& a) {
  a.type = j.at("type").get<std::string>();
  a.start = j.at("start").get<std::size_t>();
  a.end = j.at("end").get<std::size_t>();
  a.actor = j.at("actor").get<std::string>();
  a.target = j.at("target").get<std::string>();
}
inline void to_json(json& j, const VideoScript& v) {
  j = json{{"id", v.id}, {"split", v.split}, {"frames", v.frames}, {"objects", v.objects}, {"anomalies", v.anomalies}};
}
inline void from_json(const json& j, VideoScript& v) {
  v.id = j.at("id").get<std::string>();
  v.split = j.value("split", "test");
  v.frames = j.at("frames").get<std::size_t>();
  v.objects = j.at("objects").get<std::vector<ObjectScript>>();
  v.anomalies = j.value("anomalies", std::vector<AnomalySpan>{});
}
inline void to_json(json& j, const SyntheticScenario& s) {
  j = json{{"name", s.name}, {"width", s.width}, {"height", s.height}, {"fps", s.fps}, {"videos", s.videos}};
}
inline void from_json(const json& j, SyntheticScenario& s) {
  s.name = j.value("name", s.name);
  s.width = j.value("width", s.width);
  s.height = j.value("height", s.height);
  s.fps = j.value("fps", s.fps);
  s.videos = j.at("videos").get<std::vector<VideoScript>>();
  s.validate();
}

// Frame labels: 1 exactly on frames inside an anomaly span.
inline std::vector<int> frame_labels(const VideoScript& v) {
  std::vector<int> y(v.frames, 0);
  for (const auto& a : v.anomalies)
    for (std::size_t f = a.start; f < a.end; ++f) y[f] = 1;
  return y;
}

struct ObjectState {
  double x = 0, y = 0;  // top-left
  double vx = 0, vy = 0;
  bool visible = true;
  const AnomalySpan* anomaly = nullptr;  // span the object takes part in now
};

namespace detail {

inline double wrap_x(double x, double w, int width) {
  const double period = width + w;
  double r = std::fmod(x + w, period);
  if (r < 0) r += period;
  return r - w;
}

inline ObjectState lane_state(const ObjectScript& o, std::size_t f, int width) {
  ObjectState s;
  s.x = wrap_x(o.x0 + o.speed * static_cast<double>(f), o.w, width);
  s.y = lane_centers().at(o.lane) - o.h / 2;
  s.vx = o.speed;
  return s;
}

}  // namespace detail

// Per-frame object states. Outside anomaly spans objects follow their lanes.
// Inside a span: a collision actor heads for the target (frozen at the span
// start) and both then stay in contact; a blocking actor moves into the target's
// lane and stops while the target halts; a sharp-turn actor turns toward the
// target and chases it.
inline std::vector<std::vector<ObjectState>> simulate(const VideoScript& v, int width, int height) {
  std::vector<std::vector<ObjectState>> st(v.frames, std::vector<ObjectState>(v.objects.size()));
  std::map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < v.objects.size(); ++i) idx[v.objects[i].id] = i;
  for (std::size_t f = 0; f < v.frames; ++f)
    for (std::size_t i = 0; i < v.objects.size(); ++i) st[f][i] = detail::lane_state(v.objects[i], f, width);

  for (const auto& a : v.anomalies) {
    const std::size_t ai = idx.at(a.actor), ti = idx.at(a.target);
    const auto& ao = v.objects[ai];
    const auto& to = v.objects[ti];
    const double len = static_cast<double>(a.end - a.start);
    ObjectState A = st[a.start][ai], T = st[a.start][ti];
    // Keep the actor on screen when the span starts.
    A.x = std::clamp(A.x, 0.0, width - ao.w);
    T.x = std::clamp(T.x, 0.0, width - to.w);
    for (std::size_t f = a.start; f < a.end; ++f) {
      const double k = static_cast<double>(f - a.start);
      ObjectState& s = st[f][ai];
      const ObjectState prev = f > a.start ? st[f - 1][ai] : A;
      if (a.type == "collision") {
        const double contact = std::max(1.0, len / 3);
        const double u = std::min(1.0, k / contact);
        const double gx = T.x + to.w / 2 - ao.w / 2 + (A.x < T.x ? -ao.w / 3 : ao.w / 3);
        const double gy = T.y + to.h / 2 - ao.h / 2;
        s.x = A.x + (gx - A.x) * u;
        s.y = A.y + (gy - A.y) * u;
        st[f][ti].x = T.x;
        st[f][ti].y = T.y;
        st[f][ti].vx = st[f][ti].vy = 0;
        st[f][ti].anomaly = &a;
      } else if (a.type == "blocking") {
        const double settle = std::max(1.0, len / 4);
        const double u = std::min(1.0, k / settle);
        const double gy = lane_centers().at(to.lane) - ao.h / 2;
        s.x = A.x;
        s.y = A.y + (gy - A.y) * u;
        st[f][ti].x = T.x;
        st[f][ti].vx = 0;
        st[f][ti].anomaly = &a;
      } else {  // sharp_turn
        const ObjectState& tgt = st[f][ti];
        const double dx = tgt.x - prev.x, dy = tgt.y - prev.y;
        const double d = std::hypot(dx, dy);
        const double step = std::min(d, 2.5);
        s.x = d > 0 ? prev.x + dx / d * step : prev.x;
        s.y = d > 0 ? prev.y + dy / d * step : prev.y;
        s.x = std::clamp(s.x, 0.0, width - ao.w);
        s.y = std::clamp(s.y, 0.0, height - ao.h);
        st[f][ti].anomaly = &a;
      }
      s.vx = s.x - prev.x;
      s.vy = s.y - prev.y;
      s.anomaly = &a;
    }
  }
  for (auto& row : st)
    for (std::size_t i = 0; i < row.size(); ++i) {
      const auto& o = v.objects[i];
      row[i].visible = row[i].x + o.w > 1 && row[i].x < width - 1 && row[i].y + o.h > 1 && row[i].y < height - 1;
    }
  return st;
}

namespace detail {

inline std::array<int, 3> class_color(const std::string& c) {
  if (c == "person") return {40, 90, 200};
  if (c == "car") return {200, 40, 40};
  if (c == "cyclist") return {230, 170, 30};
  return {120, 60, 160};  // cart
}

inline void put(Raster& img, int x, int y, std::array<int, 3> c) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  for (int k = 0; k < 3; ++k) img.at(x, y, k) = static_cast<std::uint8_t>(std::clamp(c[k], 0, 255));
}

inline Raster background(int width, int height, std::uint64_t seed) {
  Raster img(width, height);
  Rng rng(seed ^ 0xB4C4u);
  for (int y = 0; y < height; ++y) {
    std::array<int, 3> base{70, 130, 60};  // grass
    if (y >= 20 && y < 40) base = {175, 175, 170};
    if (y >= 40 && y < 52) base = {150, 110, 90};
    if (y >= 52 && y < 80) base = {70, 70, 75};
    if (y >= 80 && y < 104) base = {175, 175, 170};
    for (int x = 0; x < width; ++x) {
      const int n = rng.integer(-6, 6);
      auto c = base;
      if (y == 66 && (x / 6) % 2 == 0) c = {220, 220, 210};  // lane marking
      put(img, x, y, {c[0] + n, c[1] + n, c[2] + n});
    }
  }
  return img;
}

inline void draw_object(Raster& img, const ObjectScript& o, const ObjectState& s) {
  const auto col = class_color(o.class_label);
  const int x0 = static_cast<int>(std::lround(s.x)), y0 = static_cast<int>(std::lround(s.y));
  const int w = static_cast<int>(o.w), h = static_cast<int>(o.h);
  for (int dy = 0; dy < h; ++dy)
    for (int dx = 0; dx < w; ++dx) {
      auto c = col;
      if (o.class_label == "person" && dy < h / 4) c = {230, 190, 160};
      if (o.class_label == "car" && dy >= h / 4 && dy < h / 2 && dx > w / 5 && dx < 4 * w / 5) c = {150, 200, 230};
      if (o.class_label == "cyclist" && dy >= 2 * h / 3 && (dx < w / 3 || dx >= 2 * w / 3)) c = {30, 30, 30};
      if (o.class_label == "cart" && (dx % 4 == 0 || dy % 4 == 0)) c = {60, 30, 90};
      put(img, x0 + dx, y0 + dy, c);
    }
}

inline std::string direction(double vx) { return vx < 0 ? "left" : "right"; }

inline std::string normal_sentence(const ObjectScript& o, const ObjectState& s) {
  const std::string dir = direction(s.vx != 0 ? s.vx : o.speed);
  if (o.class_label == "person") return "A person is walking " + dir + " along the sidewalk.";
  if (o.class_label == "car") return "A car is driving " + dir + " along the road.";
  if (o.class_label == "cyclist") return "A cyclist is riding " + dir + " along the bike lane.";
  return "A cart is being pushed " + dir + " along the sidewalk.";
}

inline std::string anomaly_sentence(const AnomalySpan& a, const ObjectScript& actor, const ObjectScript& target) {
  if (a.type == "collision")
    return "A " + actor.class_label + " swerves out of its lane and collides with a " + target.class_label + ".";
  if (a.type == "blocking")
    return "A " + actor.class_label + " has stopped in the middle of the " + (target.class_label == "car" ? "road" : "path") +
           ", blocking the path of a " + target.class_label + ".";
  return "A " + actor.class_label + " makes a sudden sharp turn toward a " + target.class_label + ".";
}

}  // namespace detail

// What a frame shows, in words: the anomaly first, then every other visible object.
inline std::string describe_frame(const VideoScript& v, const std::vector<ObjectState>& row) {
  std::string out;
  std::set<const AnomalySpan*> said;
  std::set<std::size_t> covered;
  std::map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < v.objects.size(); ++i) idx[v.objects[i].id] = i;
  for (std::size_t i = 0; i < row.size(); ++i) {
    const AnomalySpan* a = row[i].anomaly;
    if (!a || said.count(a)) continue;
    said.insert(a);
    out += (out.empty() ? "" : " ") + detail::anomaly_sentence(*a, v.objects[idx.at(a->actor)], v.objects[idx.at(a->target)]);
    covered.insert(idx.at(a->actor));
    covered.insert(idx.at(a->target));
  }
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (covered.count(i) || !row[i].visible) continue;
    out += (out.empty() ? "" : " ") + detail::normal_sentence(v.objects[i], row[i]);
  }
  return out.empty() ? "The street is empty." : out;
}

struct SyntheticVideo {
  Video video;
  DetectionIndex detections;
  std::vector<int> labels;                 // by frame index
  std::vector<std::string> descriptions;   // by frame index
  std::string split;
};

// Renders one video. Pixels depend only on (scenario, seed).
inline SyntheticVideo render_video(const SyntheticScenario& sc, const VideoScript& v, std::uint64_t seed) {
  SyntheticVideo out;
  out.split = v.split;
  out.video.id = v.id;
  out.labels = frame_labels(v);
  const auto states = simulate(v, sc.width, sc.height);
  const Raster bg = detail::background(sc.width, sc.height, seed);
  for (std::size_t f = 0; f < v.frames; ++f) {
    Raster img = bg;
    Rng noise(seed ^ stable_hash64(v.id + ":" + std::to_string(f)));
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(std::clamp(static_cast<int>(p) + noise.integer(-2, 2), 0, 255));
    auto& dets = out.detections[f];
    for (std::size_t i = 0; i < v.objects.size(); ++i) {
      const auto& s = states[f][i];
      if (!s.visible) continue;
      detail::draw_object(img, v.objects[i], s);
      const BBox box = clamp_box({std::round(s.x), std::round(s.y), v.objects[i].w, v.objects[i].h}, sc.width, sc.height);
      if (box.w >= 2 && box.h >= 2) dets.push_back({f, box, v.objects[i].class_label, 1.0});
    }
    out.descriptions.push_back(describe_frame(v, states[f]));
    out.video.frames.push_back({v.id, f, static_cast<double>(f) / sc.fps, std::move(img)});
  }
  return out;
}

struct SyntheticFiles {
  std::filesystem::path manifest;      // frame manifest (ingest format)
  std::filesystem::path detections;    // scripted detector rows
  std::filesystem::path labels;        // {video_id, frame_index, label}
  std::filesystem::path descriptions;  // {video_id, frame_index, text}
  std::filesystem::path splits;        // {video_id, split}
};

inline SyntheticFiles synthetic_files(const std::filesystem::path& dir) {
  return {dir / "manifest.jsonl", dir / "detections.jsonl", dir / "labels.jsonl", dir / "descriptions.jsonl", dir / "splits.jsonl"};
}

// Writes frames as PNGs plus the manifest, detections, labels, descriptions and
// splits. Rejects invalid scenarios (including overlapping spans).
inline SyntheticFiles generate_synthetic(const SyntheticScenario& sc, std::uint64_t seed, const std::filesystem::path& dir) {
  sc.validate();
  const auto files = synthetic_files(dir);
  std::vector<json> manifest, dets, labels, descs, splits;
  for (const auto& v : sc.videos) {
    const auto r = render_video(sc, v, seed);
    splits.push_back({{"video_id", v.id}, {"split", v.split}});
    for (const auto& f : r.video.frames) {
      char name[32];
      std::snprintf(name, sizeof name, "%06zu.png", f.frame_index);
      const auto rel = std::filesystem::path("frames") / v.id / name;
      save_png(f.image, dir / rel);
      manifest.push_back({{"video_id", v.id}, {"frame_index", f.frame_index}, {"path", rel.string()}, {"timestamp_s", f.timestamp_s}});
      labels.push_back({{"video_id", v.id}, {"frame_index", f.frame_index}, {"label", r.labels[f.frame_index]}});
      descs.push_back({{"video_id", v.id}, {"frame_index", f.frame_index}, {"text", r.descriptions[f.frame_index]}});
    }
    for (const auto& [f, ds] : r.detections)
      for (const auto& d : ds) dets.push_back(detection_to_json(v.id, d));
  }
  write_jsonl(files.manifest, manifest);
  write_jsonl(files.detections, dets);
  write_jsonl(files.labels, labels);
  write_jsonl(files.descriptions, descs);
  write_jsonl(files.splits, splits);
  return files;
}

// The bundled desk-scale scenario: `test_videos` evaluation videos (all but the
// last three carry one anomaly, types in rotation) and `train_videos` normal ones.
inline SyntheticScenario default_scenario(std::uint64_t seed = 2024, std::size_t test_videos = 10, std::size_t test_frames = 300,
                                          std::size_t train_videos = 3, std::size_t train_frames = 200) {
  SyntheticScenario sc;
  sc.name = "synthetic" + std::to_string(test_videos);
  // Separate streams so the test videos do not depend on the size of the training split.
  Rng test_rng(seed), train_rng(seed ^ 0x7A41ull);
  Rng* cur = &train_rng;
  auto make_objects = [&](VideoScript& v) {
    Rng& rng = *cur;
    auto sgn = [&] { return rng.bernoulli(0.5) ? 1.0 : -1.0; };
    const double W = sc.width;
    v.objects.push_back({"person1", "person", "sidewalk_top", rng.uniform(0, W), sgn() * rng.uniform(0.6, 1.0), 8, 16});
    v.objects.push_back({"person2", "person", "sidewalk_bottom", rng.uniform(0, W), sgn() * rng.uniform(0.6, 1.0), 8, 16});
    v.objects.push_back({"cyclist1", "cyclist", "bike", rng.uniform(0, W), sgn() * rng.uniform(1.4, 2.0), 12, 12});
    v.objects.push_back({"car1", "car", "road_right", rng.uniform(0, W), rng.uniform(2.0, 3.0), 24, 12});
    v.objects.push_back({"cart1", "cart", "sidewalk_bottom", rng.uniform(0, W), sgn() * rng.uniform(0.4, 0.7), 12, 10});
    if (rng.bernoulli(0.5)) v.objects.push_back({"car2", "car", "road_left", rng.uniform(0, W), -rng.uniform(2.0, 3.0), 24, 12});
  };
  for (std::size_t i = 0; i < train_videos; ++i) {
    VideoScript v;
    v.id = "train_" + std::string(i < 10 ? "0" : "") + std::to_string(i);
    v.split = "train";
    v.frames = train_frames;
    make_objects(v);
    sc.videos.push_back(std::move(v));
  }
  const char* types[] = {"collision", "blocking", "sharp_turn"};
  cur = &test_rng;
  Rng& rng = test_rng;
  for (std::size_t i = 0; i < test_videos; ++i) {
    VideoScript v;
    v.id = "test_" + std::string(i < 10 ? "0" : "") + std::to_string(i);
    v.frames = test_frames;
    make_objects(v);
    if (i + 3 < test_videos) {
      AnomalySpan a;
      a.type = types[i % 3];
      const std::size_t len = static_cast<std::size_t>(rng.integer(6, 9)) * test_frames / 30;
      a.start = static_cast<std::size_t>(rng.integer(static_cast<int>(test_frames / 6), static_cast<int>(test_frames - len - test_frames / 10)));
      a.end = a.start + len;
      if (a.type == std::string("collision")) a.actor = "car1", a.target = "person2";
      else if (a.type == std::string("blocking")) a.actor = "cart1", a.target = "car1";
      else a.actor = "cyclist1", a.target = "person1";
      v.anomalies.push_back(a);
    }
    sc.videos.push_back(std::move(v));
  }
  sc.validate();
  return sc;
}

}  // namespace vad::pipeline
