#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "vad/core/jsonl.hpp"
#include "vad/nn/optim.hpp"
#include "vad/ssl/model.hpp"
#include "vad/training/checkpoint.hpp"
#include "vad/training/gradnorm.hpp"
#include "vad/training/phases.hpp"

namespace vad::training {

struct TrainConfig {
  PhasePlan plan;
  double alpha = 1.5;
  double gradnorm_step = 0.025;
  bool gradnorm = true;  // false keeps equal fixed weights
  std::size_t batch_size = 8;
  std::uint64_t seed = 7;
  double irregular_fraction = 0.5;
  nn::AdamW::Options optimizer;
};

inline void to_json(json& j, const TrainConfig& c) {
  j = json{{"plan", c.plan},
           {"alpha", c.alpha},
           {"gradnorm_step", c.gradnorm_step},
           {"gradnorm", c.gradnorm},
           {"batch_size", c.batch_size},
           {"seed", c.seed},
           {"irregular_fraction", c.irregular_fraction},
           {"weight_decay", c.optimizer.weight_decay},
           {"clip_norm", c.optimizer.clip_norm}};
}

inline void from_json(const json& j, TrainConfig& c) {
  if (j.contains("plan")) c.plan = j["plan"].get<PhasePlan>();
  c.alpha = j.value("alpha", c.alpha);
  c.gradnorm_step = j.value("gradnorm_step", c.gradnorm_step);
  c.gradnorm = j.value("gradnorm", c.gradnorm);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.irregular_fraction = j.value("irregular_fraction", c.irregular_fraction);
  c.optimizer.weight_decay = j.value("weight_decay", c.optimizer.weight_decay);
  c.optimizer.clip_norm = j.value("clip_norm", c.optimizer.clip_norm);
  if (c.batch_size == 0) throw ConfigError("batch_size must be >= 1");
}

struct EpochMetrics {
  std::size_t epoch = 0;        // overall, 0-based
  Phase phase = Phase::encoder_only;
  std::size_t phase_epoch = 0;  // 1-based within the phase
  double lr = 0;
  ssl::TaskValues losses{};      // mean per batch
  ssl::TaskValues weights{};     // at the end of the epoch
  ssl::TaskValues grad_norms{};  // mean G_i at the shared layer
  std::vector<std::string> trainable_groups;
  std::vector<std::string> updated_groups;  // groups whose values changed
  double seconds = 0;
};

inline json to_json(const EpochMetrics& m) {
  json l = json::object(), w = json::object(), g = json::object();
  for (std::size_t i = 0; i < ssl::kNumTasks; ++i) {
    l[ssl::kTaskNames[i]] = m.losses[i];
    w[ssl::kTaskNames[i]] = m.weights[i];
    g[ssl::kTaskNames[i]] = m.grad_norms[i];
  }
  return json{{"epoch", m.epoch}, {"phase", static_cast<int>(m.phase)}, {"phase_name", to_string(m.phase)},
              {"phase_epoch", m.phase_epoch}, {"lr", m.lr}, {"L_i", l}, {"w_i", w}, {"grad_norms", g},
              {"trainable_groups", m.trainable_groups}, {"updated_groups", m.updated_groups}};
}

class Trainer {
 public:
  Trainer(ssl::MultiTaskModel& model, TrainConfig cfg)
      : model_(model), cfg_(std::move(cfg)), params_(model.parameters()), groups_(param_groups(model)) {
    for (std::size_t i = 0; i < ssl::kNumTasks; ++i)
      if (model.config().tasks[i]) active_.push_back(i);
    if (active_.empty()) throw ConfigError("no active task");
    gradnorm_ = GradNormState::make(active_.size(), cfg_.alpha, model.encoder().shared_layer_id(), cfg_.gradnorm_step);
    optimizer_ = nn::AdamW(params_, cfg_.optimizer);
  }

  const GradNormState& gradnorm() const { return gradnorm_; }
  const TrainConfig& config() const { return cfg_; }
  const std::vector<std::size_t>& active_tasks() const { return active_; }
  std::size_t epochs_done() const { return epoch_; }
  std::size_t optimizer_epoch() const { return optimizer_epoch_; }
  Phase phase() const { return phase_; }
  std::size_t phase_epoch() const { return phase_epoch_; }

  // Task weights in model task order; inactive tasks get 0.
  ssl::TaskValues task_weights() const {
    ssl::TaskValues w{};
    for (std::size_t k = 0; k < active_.size(); ++k) w[active_[k]] = gradnorm_.weights[k];
    return w;
  }

  CheckpointMeta meta(const std::string& config_hash) const {
    CheckpointMeta m;
    m.config_hash = config_hash;
    m.gradnorm = gradnorm_;
    m.epoch = epoch_;
    m.phase = static_cast<int>(phase_);
    m.phase_epoch = phase_epoch_;
    m.optimizer_epoch = optimizer_epoch_;
    return m;
  }

  // Continues from a checkpoint written by meta(); optimizer moments start fresh.
  void restore(const CheckpointMeta& m) {
    if (m.gradnorm.tasks() != active_.size()) throw ResumeMismatchError("checkpoint task count differs");
    gradnorm_ = m.gradnorm;
    epoch_ = m.epoch;
    phase_ = static_cast<Phase>(m.phase);
    phase_epoch_ = m.phase_epoch;
    optimizer_epoch_ = m.optimizer_epoch;
    optimizer_.reset();
  }

  using EpochHook = std::function<void(const EpochMetrics&)>;

  // Runs `epochs` epochs of `phase`, continuing the phase if it is the current one.
  // Entering the full phase reinitializes the optimizer and its schedule.
  std::vector<EpochMetrics> run_phase(Phase phase, std::span<const ssl::SslSample> samples, std::size_t epochs,
                                      const EpochHook& hook = {}) {
    if (phase < phase_) throw ConfigError(std::string("cannot return to phase ") + to_string(phase));
    if (phase != phase_) {
      phase_ = phase;
      phase_epoch_ = 0;
      if (phase == Phase::full) {
        optimizer_.reset();
        optimizer_epoch_ = 0;
      }
    }
    std::vector<EpochMetrics> out;
    for (std::size_t e = 0; e < epochs; ++e) {
      out.push_back(run_epoch(samples));
      if (hook) hook(out.back());
    }
    return out;
  }

  // All three phases from wherever training currently stands.
  std::vector<EpochMetrics> train(std::span<const ssl::SslSample> samples, const EpochHook& hook = {}) {
    std::vector<EpochMetrics> all;
    for (int p = static_cast<int>(phase_); p < 3; ++p) {
      const Phase ph = static_cast<Phase>(p);
      const std::size_t done = ph == phase_ ? phase_epoch_ : 0;
      const std::size_t want = cfg_.plan.epochs[static_cast<std::size_t>(p)];
      if (done >= want) continue;
      auto m = run_phase(ph, samples, want - done, hook);
      all.insert(all.end(), m.begin(), m.end());
    }
    return all;
  }

  std::vector<char> current_mask() const { return trainable_mask(model_, phase_, phase_epoch_ + 1); }

 private:
  EpochMetrics run_epoch(std::span<const ssl::SslSample> samples) {
    if (samples.empty()) throw ConfigError("no training samples");
    const auto t0 = std::chrono::steady_clock::now();
    EpochMetrics m;
    m.epoch = epoch_;
    m.phase = phase_;
    m.phase_epoch = phase_epoch_ + 1;
    m.lr = cfg_.plan.lr(optimizer_epoch_);
    const auto mask = trainable_mask(model_, phase_, m.phase_epoch);
    for (const auto& g : groups_)
      if (mask[g.begin]) m.trainable_groups.push_back(g.name);

    std::vector<std::vector<double>> before;
    before.reserve(params_.size());
    for (const auto& p : params_) before.emplace_back(p.tensor.data().begin(), p.tensor.data().end());

    Rng rng(cfg_.seed * 0x9E3779B97F4A7C15ULL + epoch_ + 1);
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    nn::Tensor shared = model_.encoder().shared_layer();
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
      std::vector<const ssl::SslSample*> ptrs;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg_.batch_size); ++i) ptrs.push_back(&samples[order[i]]);
      const ssl::Batch batch = ssl::make_batch(ptrs, rng, {true, cfg_.irregular_fraction});
      optimizer_.zero_grad();
      const auto f = model_.forward(batch, &rng);

      std::vector<double> losses, raw;
      bool complete = true;
      for (std::size_t k = 0; k < active_.size(); ++k) {
        const std::size_t task = active_[k];
        if (!f.has(task)) {
          complete = false;
          continue;
        }
        const std::vector<double> prev(shared.grad().begin(), shared.grad().end());
        f.loss[task].backward(gradnorm_.weights[k]);
        double sq = 0.0;
        const auto g = shared.grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double d = g[i] - (prev.empty() ? 0.0 : prev[i]);
          sq += d * d;
        }
        const double norm = std::sqrt(sq);
        losses.push_back(f.loss[task].item());
        raw.push_back(norm / gradnorm_.weights[k]);
        m.losses[task] += losses.back();
        m.grad_norms[task] += norm;
      }
      optimizer_.step(m.lr, mask);
      if (cfg_.gradnorm && complete) gradnorm_step(gradnorm_, losses, raw);
      ++batches;
    }
    for (std::size_t i = 0; i < ssl::kNumTasks; ++i) {
      m.losses[i] /= static_cast<double>(batches);
      m.grad_norms[i] /= static_cast<double>(batches);
    }
    m.weights = task_weights();
    for (const auto& g : groups_) {
      bool changed = false;
      for (std::size_t i = g.begin; i < g.end && !changed; ++i)
        changed = !std::equal(before[i].begin(), before[i].end(), params_[i].tensor.data().begin());
      if (changed) m.updated_groups.push_back(g.name);
    }
    ++epoch_;
    ++phase_epoch_;
    ++optimizer_epoch_;
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return m;
  }

  ssl::MultiTaskModel& model_;
  TrainConfig cfg_;
  nn::ParamList params_;
  std::vector<ParamGroup> groups_;
  std::vector<std::size_t> active_;
  GradNormState gradnorm_;
  nn::AdamW optimizer_;
  Phase phase_ = Phase::encoder_only;
  std::size_t phase_epoch_ = 0;
  std::size_t optimizer_epoch_ = 0;
  std::size_t epoch_ = 0;
};

}  // namespace vad::training
