#pragma once

// Adaptive task weighting by gradient normalization. Each task's weighted gradient
// norm at a shared layer is pulled toward the mean norm scaled by the task's
// relative inverse training rate.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "vad/core/error.hpp"
#include "vad/core/jsonl.hpp"

namespace vad::training {

struct GradNormState {
  double alpha = 1.5;
  double step_size = 0.025;
  std::vector<double> initial_losses;  // captured on the first step
  std::vector<double> weights;
  std::string shared_layer_id;
  std::size_t steps = 0;

  static GradNormState make(std::size_t tasks, double alpha, std::string shared_layer_id, double step_size = 0.025) {
    if (tasks == 0) throw ConfigError("gradnorm needs at least one task");
    if (alpha < 0) throw ConfigError("gradnorm alpha must be nonnegative");
    GradNormState s;
    s.alpha = alpha;
    s.step_size = step_size;
    s.weights.assign(tasks, 1.0);
    s.shared_layer_id = std::move(shared_layer_id);
    return s;
  }

  std::size_t tasks() const { return weights.size(); }
  double weight_sum() const { return static_cast<double>(weights.size()); }
};

inline void to_json(json& j, const GradNormState& s) {
  j = json{{"alpha", s.alpha},   {"step_size", s.step_size},           {"initial_losses", s.initial_losses},
           {"weights", s.weights}, {"shared_layer_id", s.shared_layer_id}, {"steps", s.steps}};
}

inline void from_json(const json& j, GradNormState& s) {
  s.alpha = j.at("alpha").get<double>();
  s.step_size = j.value("step_size", 0.025);
  s.initial_losses = j.at("initial_losses").get<std::vector<double>>();
  s.weights = j.at("weights").get<std::vector<double>>();
  s.shared_layer_id = j.value("shared_layer_id", std::string{});
  s.steps = j.value("steps", std::size_t{0});
}

// L_i(t) / L_i(0), with a zero initial loss mapped to 1.
inline std::vector<double> loss_ratios(std::span<const double> losses, std::span<const double> initial) {
  std::vector<double> r(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) r[i] = initial[i] == 0.0 ? 1.0 : losses[i] / initial[i];
  return r;
}

// G_target_i = mean_norm * (ratio_i / mean(ratio))^alpha
inline std::vector<double> gradnorm_targets(std::span<const double> ratios, double mean_norm, double alpha) {
  const double mean_ratio = std::accumulate(ratios.begin(), ratios.end(), 0.0) / static_cast<double>(ratios.size());
  std::vector<double> t(ratios.size());
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    const double r = mean_ratio > 0.0 ? ratios[i] / mean_ratio : 1.0;
    t[i] = mean_norm * std::pow(r, alpha);
  }
  return t;
}

// sum_i |w_i * g_i - target_i| where g_i is the unweighted gradient norm of task i.
inline double gradnorm_objective(std::span<const double> weights, std::span<const double> raw_norms, std::span<const double> targets) {
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += std::fabs(weights[i] * raw_norms[i] - targets[i]);
  return s;
}

// d objective / d w_i with the targets held constant.
inline std::vector<double> gradnorm_weight_gradient(std::span<const double> weights, std::span<const double> raw_norms,
                                                    std::span<const double> targets) {
  std::vector<double> g(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double d = weights[i] * raw_norms[i] - targets[i];
    g[i] = (d > 0.0 ? 1.0 : d < 0.0 ? -1.0 : 0.0) * raw_norms[i];
  }
  return g;
}

struct GradNormUpdate {
  std::vector<double> ratios;
  std::vector<double> relative_rates;
  std::vector<double> norms;  // G_i = ||grad of w_i L_i||
  std::vector<double> targets;
  double objective = 0.0;
  std::vector<double> weights;  // after the update
};

// One weight update. `raw_norms[i]` is ||d L_i / d W|| at the shared layer.
inline GradNormUpdate gradnorm_step(GradNormState& state, std::span<const double> losses, std::span<const double> raw_norms) {
  const std::size_t n = state.tasks();
  if (losses.size() != n || raw_norms.size() != n)
    throw ShapeError("gradnorm_step", std::to_string(n) + " tasks", std::to_string(losses.size()));
  for (double l : losses)
    if (!std::isfinite(l)) throw Error("gradnorm_step: non-finite task loss");
  if (state.initial_losses.empty()) state.initial_losses.assign(losses.begin(), losses.end());

  GradNormUpdate u;
  u.ratios = loss_ratios(losses, state.initial_losses);
  u.norms.resize(n);
  for (std::size_t i = 0; i < n; ++i) u.norms[i] = state.weights[i] * raw_norms[i];
  const double mean_norm = std::accumulate(u.norms.begin(), u.norms.end(), 0.0) / static_cast<double>(n);
  const double mean_ratio = std::accumulate(u.ratios.begin(), u.ratios.end(), 0.0) / static_cast<double>(n);
  for (double r : u.ratios) u.relative_rates.push_back(mean_ratio > 0 ? r / mean_ratio : 1.0);
  u.targets = gradnorm_targets(u.ratios, mean_norm, state.alpha);
  u.objective = gradnorm_objective(state.weights, raw_norms, u.targets);

  const auto grad = gradnorm_weight_gradient(state.weights, raw_norms, u.targets);
  for (std::size_t i = 0; i < n; ++i) state.weights[i] = std::max(state.weights[i] - state.step_size * grad[i], 1e-6);
  const double total = std::accumulate(state.weights.begin(), state.weights.end(), 0.0);
  for (auto& w : state.weights) w *= state.weight_sum() / total;
  ++state.steps;
  u.weights = state.weights;
  return u;
}

}  // namespace vad::training
