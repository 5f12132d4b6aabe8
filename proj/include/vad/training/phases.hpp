#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "vad/core/error.hpp"
#include "vad/core/jsonl.hpp"
#include "vad/ssl/model.hpp"

namespace vad::training {

enum class Phase : int { encoder_only = 0, decoder_unfreeze = 1, full = 2 };

inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::encoder_only: return "encoder_only";
    case Phase::decoder_unfreeze: return "decoder_unfreeze";
    case Phase::full: return "full";
  }
  return "?";
}

struct PhasePlan {
  std::array<std::size_t, 3> epochs{5, 5, 20};
  double base_lr = 1e-3;
  double decay = 0.1;
  std::size_t decay_every = 10;

  // `optimizer_epoch` counts epochs since the optimizer was (re)initialized.
  double lr(std::size_t optimizer_epoch) const {
    double lr = base_lr;
    for (std::size_t i = 0; i < optimizer_epoch / decay_every; ++i) lr *= decay;
    return lr;
  }
  std::size_t total_epochs() const { return epochs[0] + epochs[1] + epochs[2]; }
};

inline void to_json(json& j, const PhasePlan& p) {
  j = json{{"epochs", p.epochs}, {"base_lr", p.base_lr}, {"decay", p.decay}, {"decay_every", p.decay_every}};
}

inline void from_json(const json& j, PhasePlan& p) {
  p.epochs = j.value("epochs", p.epochs);
  p.base_lr = j.value("base_lr", p.base_lr);
  p.decay = j.value("decay", p.decay);
  p.decay_every = j.value("decay_every", p.decay_every);
  if (p.decay_every == 0) throw ConfigError("decay_every must be >= 1");
}

// A contiguous run of model.parameters(): the encoder, or one head layer.
struct ParamGroup {
  std::string name;
  int task = -1;           // -1 for the encoder
  std::size_t depth = 0;   // position in the head's outermost-first order
  std::size_t begin = 0;
  std::size_t end = 0;
};

inline std::vector<ParamGroup> param_groups(const ssl::MultiTaskModel& model) {
  std::vector<ParamGroup> out;
  std::size_t at = model.encoder_params().size();
  out.push_back({"encoder", -1, 0, 0, at});
  const auto heads = model.head_groups();
  for (std::size_t t = 0; t < ssl::kNumTasks; ++t)
    for (std::size_t d = 0; d < heads[t].size(); ++d) {
      out.push_back({heads[t][d].name, static_cast<int>(t), d, at, at + heads[t][d].params.size()});
      at += heads[t][d].params.size();
    }
  return out;
}

// Head layers in the order they are released: each head outermost first.
inline std::vector<std::vector<std::string>> unfreeze_order(const ssl::MultiTaskModel& model) {
  std::vector<std::vector<std::string>> out(ssl::kNumTasks);
  for (const auto& g : param_groups(model))
    if (g.task >= 0) out[static_cast<std::size_t>(g.task)].push_back(g.name);
  return out;
}

// Whether each group trains. Phase 0 trains the encoder only; at epoch k (1-based)
// of phase 1 the encoder plus the k outermost layers of every head train; phase 2
// trains everything. Heads of inactive tasks never train.
inline bool group_trainable(const ParamGroup& g, Phase phase, std::size_t epoch_in_phase, const ssl::TaskMask& tasks) {
  if (g.task < 0) return true;
  if (!tasks[static_cast<std::size_t>(g.task)]) return false;
  switch (phase) {
    case Phase::encoder_only: return false;
    case Phase::decoder_unfreeze: return g.depth < epoch_in_phase;
    case Phase::full: return true;
  }
  return false;
}

inline std::vector<char> trainable_mask(const ssl::MultiTaskModel& model, Phase phase, std::size_t epoch_in_phase) {
  std::vector<char> mask(model.parameters().size(), 0);
  for (const auto& g : param_groups(model)) {
    const bool on = group_trainable(g, phase, epoch_in_phase, model.config().tasks);
    for (std::size_t i = g.begin; i < g.end; ++i) mask[i] = on;
  }
  return mask;
}

}  // namespace vad::training
