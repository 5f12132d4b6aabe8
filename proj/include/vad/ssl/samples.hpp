#pragma once

#include <algorithm>
#include <array>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "vad/core/hash.hpp"
#include "vad/core/rng.hpp"
#include "vad/ingest/sequence.hpp"
#include "vad/nn/tensor.hpp"
#include "vad/ssl/heads.hpp"

namespace vad::ssl {

enum class Corruption { none, shuffle, skip, reverse };

inline const char* to_string(Corruption c) {
  switch (c) {
    case Corruption::none: return "none";
    case Corruption::shuffle: return "shuffle";
    case Corruption::skip: return "skip";
    case Corruption::reverse: return "reverse";
  }
  return "?";
}

// One training/scoring unit: the natural-order stack, optionally the same box
// sampled at a coarser stride (for the frame-skip corruption), and the object's
// trajectory when it came from a detection.
struct SslSample {
  ObjectSequence seq;
  std::vector<Raster> skipped;
  std::optional<Trajectory> trajectory;
  bool frame_level = false;
};

struct SampleOptions {
  std::size_t half_window_t = 3;
  double neighbor_radius = 0.25;  // normalized center distance at the center frame
  std::size_t max_neighbors = 8;
  bool with_skip = true;
};

namespace detail {

inline Point normalized(Point p, const Raster& img) {
  return {p.x / img.width, p.y / img.height};
}

inline std::vector<Point> normalized_track(const std::vector<Point>& px, const Raster& img) {
  std::vector<Point> out;
  out.reserve(px.size());
  for (auto p : px) out.push_back(normalized(p, img));
  return out;
}

}  // namespace detail

// Neighbors of `center` among the other detections of its frame: within the
// normalized radius, nearest first, capped.
inline std::vector<const Detection*> select_neighbors(const Detection& center, const std::vector<Detection>& frame_dets,
                                                      const Raster& img, const SampleOptions& opt) {
  std::vector<std::pair<double, const Detection*>> cand;
  const Point c = detail::normalized({center.bbox.cx(), center.bbox.cy()}, img);
  for (const auto& d : frame_dets) {
    if (&d == &center) continue;
    const Point p = detail::normalized({d.bbox.cx(), d.bbox.cy()}, img);
    const double dist = std::hypot(p.x - c.x, p.y - c.y);
    if (dist <= opt.neighbor_radius) cand.emplace_back(dist, &d);
  }
  std::stable_sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  if (cand.size() > opt.max_neighbors) cand.resize(opt.max_neighbors);
  std::vector<const Detection*> out;
  for (const auto& [d, p] : cand) out.push_back(p);
  return out;
}

inline Trajectory build_trajectory(const Video& video, const DetectionIndex& dets, const Detection& center,
                                   const std::vector<Detection>& frame_dets, const SampleOptions& opt) {
  const auto pos = video.position_of(center.frame_index).value();
  const Raster& img = video.frames[pos].image;
  const long t = static_cast<long>(opt.half_window_t);
  SequenceOptions so{opt.half_window_t, 1, 0};
  auto track = associate_positions(video, dets, center, pos, -t, t + 1, so);
  Trajectory tr;
  tr.next = detail::normalized(track.back(), img);
  track.pop_back();
  tr.past = detail::normalized_track(track, img);
  for (const Detection* n : select_neighbors(center, frame_dets, img, opt))
    tr.neighbors.push_back(detail::normalized_track(associate_positions(video, dets, *n, pos, -t, t, so), img));
  return tr;
}

// Object samples for every detection in the given center frames. Degenerate boxes
// are skipped and reported through `skipped` when provided.
inline std::vector<SslSample> build_object_samples(const Video& video, const DetectionIndex& dets,
                                                   const std::vector<std::size_t>& center_frames, const SampleOptions& opt,
                                                   Rng& rng, std::vector<std::string>* skipped = nullptr) {
  std::vector<SslSample> out;
  for (std::size_t f : center_frames) {
    auto it = dets.find(f);
    if (it == dets.end()) continue;
    for (std::size_t k = 0; k < it->second.size(); ++k) {
      const Detection& d = it->second[k];
      const std::string id = video.id + ":" + std::to_string(f) + ":" + std::to_string(k);
      try {
        SslSample s;
        s.seq = build_object_sequence(video, d, {opt.half_window_t, 1, 0}, &dets, id);
        if (opt.with_skip) {
          const std::size_t stride = rng.bernoulli(0.5) ? 2 : 3;
          s.skipped = build_object_sequence(video, d, {opt.half_window_t, stride, 0}).crops;
        }
        s.trajectory = build_trajectory(video, dets, d, it->second, opt);
        out.push_back(std::move(s));
      } catch (const DegenerateBoxError& e) {
        if (skipped) skipped->push_back(id + " " + e.what());
      }
    }
  }
  return out;
}

inline SslSample build_frame_sample(const Video& video, std::size_t frame_index, const SampleOptions& opt, Rng& rng) {
  SslSample s;
  s.frame_level = true;
  s.seq = build_frame_sequence(video, frame_index, {opt.half_window_t, 1, 0});
  if (opt.with_skip) {
    const std::size_t stride = rng.bernoulli(0.5) ? 2 : 3;
    s.skipped = build_frame_sequence(video, frame_index, {opt.half_window_t, stride, 0}).crops;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Batch assembly

// Frame order for an irregular stack of `n` frames.
inline std::vector<std::size_t> corrupted_order(Corruption kind, std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (kind == Corruption::shuffle) {
    do rng.shuffle(order);
    while (std::is_sorted(order.begin(), order.end()));
  } else if (kind == Corruption::reverse) {
    const auto len = static_cast<std::size_t>(rng.integer(std::min<int>(3, static_cast<int>(n)), static_cast<int>(n)));
    const std::size_t start = rng.index(n - len + 1);
    std::reverse(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(start + len));
  }
  return order;
}

// Jigsaw permutation: position i of the shuffled crop holds original quadrant perm[i].
inline std::array<std::size_t, 4> random_jigsaw(Rng& rng) {
  std::array<std::size_t, 4> p{0, 1, 2, 3};
  rng.shuffle(p);
  return p;
}

inline constexpr std::size_t kPlane = static_cast<std::size_t>(kCropSize) * kCropSize;

// Writes frames into dst laid out [F*3, 64, 64]; frame f channel c is plane f*3+c.
inline void write_stack(const std::vector<const Raster*>& frames, double* dst, std::optional<std::size_t> blank = std::nullopt,
                        const std::array<std::size_t, 4>* jigsaw = nullptr) {
  constexpr int half = kCropSize / 2;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const Raster& r = *frames[f];
    for (int c = 0; c < 3; ++c) {
      double* plane = dst + (f * 3 + static_cast<std::size_t>(c)) * kPlane;
      if (blank && *blank == f) {
        std::fill(plane, plane + kPlane, 0.0);
        continue;
      }
      for (int y = 0; y < kCropSize; ++y)
        for (int x = 0; x < kCropSize; ++x) {
          int sx = x, sy = y;
          if (jigsaw) {
            const std::size_t pos = static_cast<std::size_t>((y / half) * 2 + x / half);
            const std::size_t src = (*jigsaw)[pos];
            sx = static_cast<int>(src % 2) * half + x % half;
            sy = static_cast<int>(src / 2) * half + y % half;
          }
          plane[static_cast<std::size_t>(y) * kCropSize + x] = r.at(sx, sy, c) / 255.0;
        }
    }
  }
}

struct Batch {
  std::size_t size = 0;
  std::size_t frames = 0;
  nn::Tensor middle_input;   // middle frame blanked
  nn::Tensor middle_target;  // [B, 3, 64, 64]
  nn::Tensor irreg_input;
  std::vector<std::size_t> irreg_labels;  // 0 regular, 1 irregular
  std::vector<Corruption> corruptions;
  nn::Tensor jigsaw_input;
  std::vector<std::size_t> jigsaw_labels;  // B*4
  std::vector<const Trajectory*> trajectories;  // all rows, or empty
};

struct BatchOptions {
  bool training = true;
  double irregular_fraction = 0.5;
};

// In training mode corruptions and permutations come from `rng`. In scoring mode
// the irregularity input is the natural order and each sample's jigsaw permutation
// is seeded from its object id, so a score does not depend on batch composition.
inline Batch make_batch(std::span<const SslSample* const> samples, Rng& rng, const BatchOptions& opt = {}) {
  Batch b;
  b.size = samples.size();
  if (b.size == 0) throw ConfigError("empty batch");
  b.frames = samples[0]->seq.length();
  const std::size_t f = b.frames, mid = f / 2, n = b.size;
  std::vector<double> mi(n * f * 3 * kPlane), mt(n * 3 * kPlane), ir(n * f * 3 * kPlane), jg(n * f * 3 * kPlane);
  bool all_traj = true;
  for (std::size_t i = 0; i < n; ++i) {
    const SslSample& s = *samples[i];
    if (s.seq.length() != f) throw ShapeError("make_batch", std::to_string(f) + " frames", std::to_string(s.seq.length()));
    std::vector<const Raster*> nat;
    for (const auto& r : s.seq.crops) nat.push_back(&r);
    write_stack(nat, mi.data() + i * f * 3 * kPlane, mid);
    write_stack({nat[mid]}, mt.data() + i * 3 * kPlane);

    Corruption kind = Corruption::none;
    if (opt.training && rng.bernoulli(opt.irregular_fraction)) {
      kind = static_cast<Corruption>(1 + rng.index(3));
      if (kind == Corruption::skip && s.skipped.size() != f) kind = Corruption::shuffle;
    }
    std::vector<const Raster*> irr;
    if (kind == Corruption::skip) {
      for (const auto& r : s.skipped) irr.push_back(&r);
    } else {
      for (std::size_t k : corrupted_order(kind, f, rng)) irr.push_back(nat[k]);
    }
    write_stack(irr, ir.data() + i * f * 3 * kPlane);
    b.irreg_labels.push_back(kind == Corruption::none ? 0 : 1);
    b.corruptions.push_back(kind);

    Rng own(stable_hash64(s.seq.object_id));
    const auto perm = random_jigsaw(opt.training ? rng : own);
    write_stack(nat, jg.data() + i * f * 3 * kPlane, std::nullopt, &perm);
    for (std::size_t q = 0; q < 4; ++q) b.jigsaw_labels.push_back(perm[q]);

    if (s.trajectory)
      b.trajectories.push_back(&*s.trajectory);
    else
      all_traj = false;
  }
  if (!all_traj) b.trajectories.clear();
  const nn::Shape in{n, f * 3, static_cast<std::size_t>(kCropSize), static_cast<std::size_t>(kCropSize)};
  b.middle_input = nn::Tensor::from(in, std::move(mi));
  b.middle_target = nn::Tensor::from({n, 3, static_cast<std::size_t>(kCropSize), static_cast<std::size_t>(kCropSize)}, std::move(mt));
  b.irreg_input = nn::Tensor::from(in, std::move(ir));
  b.jigsaw_input = nn::Tensor::from(in, std::move(jg));
  return b;
}

}  // namespace vad::ssl
