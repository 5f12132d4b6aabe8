#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vad/core/jsonl.hpp"
#include "vad/ssl/encoder.hpp"
#include "vad/ssl/heads.hpp"
#include "vad/ssl/losses.hpp"
#include "vad/ssl/samples.hpp"

namespace vad::ssl {

enum Task : std::size_t { kMiddle = 0, kIrregular = 1, kJigsaw = 2, kSocial = 3 };
inline constexpr std::size_t kNumTasks = 4;
inline constexpr std::array<const char*, kNumTasks> kTaskNames{"middle", "irregular", "jigsaw", "social"};

using TaskMask = std::array<bool, kNumTasks>;
using TaskValues = std::array<double, kNumTasks>;

struct ModelConfig {
  EncoderConfig encoder;
  std::size_t memory_slots = 100;
  double jigsaw_dropout = 0.1;
  TaskMask tasks{true, true, true, true};

  std::size_t active_count() const {
    std::size_t n = 0;
    for (bool b : tasks) n += b;
    return n;
  }
};

inline void to_json(json& j, const ModelConfig& c) {
  j = json{{"encoder", c.encoder}, {"memory_slots", c.memory_slots}, {"jigsaw_dropout", c.jigsaw_dropout},
           {"tasks", std::vector<bool>(c.tasks.begin(), c.tasks.end())}};
}

inline void from_json(const json& j, ModelConfig& c) {
  if (j.contains("encoder")) c.encoder = j["encoder"].get<EncoderConfig>();
  c.memory_slots = j.value("memory_slots", c.memory_slots);
  c.jigsaw_dropout = j.value("jigsaw_dropout", c.jigsaw_dropout);
  if (j.contains("tasks")) {
    const auto v = j["tasks"].get<std::vector<bool>>();
    if (v.size() != kNumTasks) throw ConfigError("tasks must list 4 flags");
    for (std::size_t i = 0; i < kNumTasks; ++i) c.tasks[i] = v[i];
  }
}

struct TaskLossReport {
  double l_middle = 0;
  double l_irreg = 0;
  double l_jigsaw = 0;
  double l_social = 0;
  TaskValues weights{1, 1, 1, 1};
  double total = 0;

  TaskValues losses() const { return {l_middle, l_irreg, l_jigsaw, l_social}; }

  static TaskLossReport make(const TaskValues& l, const TaskValues& w) {
    TaskLossReport r{l[0], l[1], l[2], l[3], w, 0.0};
    for (std::size_t i = 0; i < kNumTasks; ++i) r.total += w[i] * l[i];
    return r;
  }
};

// Shared encoder with the four task heads.
class MultiTaskModel {
 public:
  MultiTaskModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    Rng rng(seed);
    encoder_ = make_encoder(cfg_.encoder, rng);
    middle_ = MiddleFrameHead(cfg_.encoder, cfg_.memory_slots, rng);
    irregular_ = IrregularityHead(cfg_.encoder, rng);
    jigsaw_ = JigsawHead(cfg_.encoder, rng, cfg_.jigsaw_dropout);
    social_ = SocialHead(cfg_.encoder, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  const Encoder& encoder() const { return *encoder_; }
  const MiddleFrameHead& middle_head() const { return middle_; }
  const SocialHead& social_head() const { return social_; }

  nn::ParamList encoder_params() const {
    nn::ParamList out;
    encoder_->collect(out, "encoder");
    return out;
  }

  // Layer groups of each head, outermost first, indexed by task.
  std::array<std::vector<LayerGroup>, kNumTasks> head_groups() const {
    return {middle_.layer_groups(), irregular_.layer_groups(), jigsaw_.layer_groups(), social_.layer_groups()};
  }

  // Encoder parameters first, then each head's groups in order.
  nn::ParamList parameters() const {
    nn::ParamList out = encoder_params();
    for (const auto& groups : head_groups())
      for (const auto& g : groups) out.insert(out.end(), g.params.begin(), g.params.end());
    return out;
  }

  struct Forward {
    std::array<nn::Tensor, kNumTasks> loss;  // undefined for inactive or inapplicable tasks
    MiddleFrameHead::Output middle;
    nn::Tensor irregular_log_probs;
    nn::Tensor jigsaw_log_probs;
    nn::Tensor social_next;
    std::vector<nn::Tensor> social_attention;

    bool has(std::size_t task) const { return loss[task].defined(); }
  };

  // `train_rng` enables dropout; pass nullptr for evaluation.
  Forward forward(const Batch& batch, Rng* train_rng = nullptr) const {
    Forward f;
    const auto& on = cfg_.tasks;
    EncoderOutput masked;
    if (on[kMiddle] || on[kSocial]) masked = (*encoder_)(batch.middle_input);
    if (on[kMiddle]) {
      f.middle = middle_(masked);
      f.loss[kMiddle] = l1_loss(f.middle.frame, batch.middle_target);
    }
    if (on[kIrregular]) {
      f.irregular_log_probs = irregular_((*encoder_)(batch.irreg_input).features);
      f.loss[kIrregular] = nll_loss(f.irregular_log_probs, batch.irreg_labels);
    }
    if (on[kJigsaw]) {
      f.jigsaw_log_probs = jigsaw_((*encoder_)(batch.jigsaw_input).features, train_rng);
      f.loss[kJigsaw] = jigsaw_loss(f.jigsaw_log_probs, batch.jigsaw_labels);
    }
    if (on[kSocial] && !batch.trajectories.empty()) {
      auto out = social_({batch.trajectories, nn::global_avg_pool(masked.features)});
      f.social_next = out.next;
      f.social_attention = std::move(out.attention);
      std::vector<double> truth;
      for (const auto* t : batch.trajectories) {
        truth.push_back(t->next.x);
        truth.push_back(t->next.y);
      }
      f.loss[kSocial] = sse_loss(f.social_next, nn::Tensor::from({batch.size, 2}, std::move(truth)));
    }
    return f;
  }

  // Per-sample task losses for scoring (no graph is recorded). Tasks that do not
  // apply come back as NaN.
  std::vector<TaskValues> sample_losses(const Batch& batch) const {
    nn::NoGradGuard guard;
    const Forward f = forward(batch, nullptr);
    const std::size_t n = batch.size;
    std::vector<TaskValues> out(n);
    for (auto& v : out) v.fill(std::nan(""));
    for (std::size_t i = 0; i < n; ++i) {
      if (f.has(kMiddle)) {
        const std::size_t per = 3 * kPlane;
        out[i][kMiddle] = middle_frame_l1(f.middle.frame.data().subspan(i * per, per), batch.middle_target.data().subspan(i * per, per));
      }
      if (f.has(kIrregular)) out[i][kIrregular] = -f.irregular_log_probs[i * 2 + batch.irreg_labels[i]];
      if (f.has(kJigsaw)) {
        double s = 0.0;
        for (std::size_t q = 0; q < 4; ++q) s -= f.jigsaw_log_probs[(i * 4 + q) * 4 + batch.jigsaw_labels[i * 4 + q]];
        out[i][kJigsaw] = s / 4.0;
      }
      if (f.has(kSocial)) {
        const auto* t = batch.trajectories[i];
        const double dx = t->next.x - f.social_next[i * 2], dy = t->next.y - f.social_next[i * 2 + 1];
        out[i][kSocial] = dx * dx + dy * dy;
      }
    }
    return out;
  }

 private:
  ModelConfig cfg_;
  std::unique_ptr<Encoder> encoder_;
  MiddleFrameHead middle_;
  IrregularityHead irregular_;
  JigsawHead jigsaw_;
  SocialHead social_;
};

}  // namespace vad::ssl
