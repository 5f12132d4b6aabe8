#pragma once

#include <span>
#include <vector>

#include "vad/ingest/detection.hpp"
#include "vad/proposal/proposal.hpp"
#include "vad/ssl/model.hpp"
#include "vad/ssl/samples.hpp"

namespace vad::proposal {

struct ScoringOptions {
  double threshold = kDefaultThreshold;
  bool object_level = true;    // false scores every frame as a whole
  bool frame_fallback = true;  // whole-frame score when a frame has no objects
  std::size_t batch_size = 16;
  ssl::SampleOptions samples;
};

// Per-sample raw task losses in evaluation mode. Object and frame samples are
// batched separately so each batch is uniform in which tasks apply.
inline std::vector<TaskValues> score_samples(const ssl::MultiTaskModel& model, std::span<const ssl::SslSample> samples,
                                             std::size_t batch_size) {
  std::vector<TaskValues> out(samples.size());
  for (int traj = 0; traj < 2; ++traj) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < samples.size(); ++i)
      if (samples[i].trajectory.has_value() == static_cast<bool>(traj)) idx.push_back(i);
    for (std::size_t start = 0; start < idx.size(); start += batch_size) {
      std::vector<const ssl::SslSample*> ptrs;
      for (std::size_t k = start; k < std::min(idx.size(), start + batch_size); ++k) ptrs.push_back(&samples[idx[k]]);
      Rng unused(0);
      const auto losses = model.sample_losses(ssl::make_batch(ptrs, unused, {.training = false}));
      for (std::size_t k = 0; k < ptrs.size(); ++k) out[idx[start + k]] = losses[k];
    }
  }
  return out;
}

inline Normalizers compute_normalizers(const ssl::MultiTaskModel& model, std::span<const ssl::SslSample> object_samples,
                                       std::span<const ssl::SslSample> frame_samples, std::size_t batch_size = 16) {
  Normalizers n;
  n.object_mean.fill(std::nan(""));
  n.frame_mean.fill(std::nan(""));
  if (!object_samples.empty()) n.object_mean = mean_losses(score_samples(model, object_samples, batch_size));
  if (!frame_samples.empty()) n.frame_mean = mean_losses(score_samples(model, frame_samples, batch_size));
  return n;
}

// Proposals for the given frames of one video, in frame order.
inline std::vector<AnomalyProposal> score_video(const ssl::MultiTaskModel& model, const TaskValues& weights,
                                                const Normalizers& norms, const Video& video, const DetectionIndex& dets,
                                                const std::vector<std::size_t>& frames, const ScoringOptions& opt) {
  Rng rng(0);  // only feeds the unused skip stride choice
  auto sample_opt = opt.samples;
  sample_opt.with_skip = false;

  std::vector<ssl::SslSample> samples;
  std::vector<std::size_t> owner;  // frame position per sample
  std::vector<char> has_object(frames.size(), 0);
  for (std::size_t fi = 0; fi < frames.size(); ++fi) {
    if (opt.object_level) {
      auto objs = ssl::build_object_samples(video, dets, {frames[fi]}, sample_opt, rng);
      for (auto& s : objs) {
        samples.push_back(std::move(s));
        owner.push_back(fi);
        has_object[fi] = 1;
      }
    }
    if (!has_object[fi] && (opt.frame_fallback || !opt.object_level)) {
      samples.push_back(ssl::build_frame_sample(video, frames[fi], sample_opt, rng));
      owner.push_back(fi);
    }
  }
  const auto losses = score_samples(model, samples, opt.batch_size);

  std::vector<std::vector<ObjectScore>> objects(frames.size());
  std::vector<std::optional<ObjectScore>> whole(frames.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const bool frame_level = samples[i].frame_level;
    const auto ws = weighted_total(losses[i], frame_level ? norms.frame_mean : norms.object_mean, weights);
    ObjectScore sc{samples[i].seq.object_id, ws.total, losses[i]};
    if (frame_level)
      whole[owner[i]] = sc;
    else
      objects[owner[i]].push_back(std::move(sc));
  }
  std::vector<AnomalyProposal> out;
  for (std::size_t fi = 0; fi < frames.size(); ++fi)
    out.push_back(aggregate_frame(video.id, frames[fi], std::move(objects[fi]), whole[fi], opt.threshold, norms.object_mean,
                                  norms.frame_mean, weights));
  return out;
}

}  // namespace vad::proposal
