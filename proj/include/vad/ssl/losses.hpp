#pragma once

// The four self-supervised task losses, in two forms: plain value functions over
// spans (used for reporting and as the reference definitions), and differentiable
// versions over nn::Tensor used in training.

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "vad/core/error.hpp"
#include "vad/nn/ops.hpp"

namespace vad::ssl {

// Mean absolute deviation between predicted and true middle frame.
template <typename T>
double middle_frame_l1(std::span<const T> predicted, std::span<const T> target) {
  if (predicted.size() != target.size() || predicted.empty())
    throw ShapeError("middle_frame_l1", std::to_string(target.size()), std::to_string(predicted.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) s += std::fabs(static_cast<double>(predicted[i]) - static_cast<double>(target[i]));
  return s / static_cast<double>(predicted.size());
}

// Mean negative log-probability of the true class; `probs` is row-major [N, classes].
template <typename T>
double irregularity_nll(std::span<const T> probs, std::span<const std::size_t> labels, std::size_t classes = 2) {
  if (labels.empty() || probs.size() != labels.size() * classes)
    throw ShapeError("irregularity_nll", std::to_string(labels.size() * classes), std::to_string(probs.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) s -= std::log(static_cast<double>(probs[i * classes + labels[i]]));
  return s / static_cast<double>(labels.size());
}

// -(1/4) sum_i log p[i, y_i] for one sample; `probs` is [4, 4] (patch, position).
template <typename T>
double jigsaw_nll(std::span<const T> probs, std::span<const std::size_t> labels) {
  if (labels.size() != 4 || probs.size() != 16) throw ShapeError("jigsaw_nll", "[4,4] and 4 labels", std::to_string(probs.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < 4; ++i) s += std::log(static_cast<double>(probs[i * 4 + labels[i]]));
  return -s / 4.0;
}

// Sum over objects of squared Euclidean error; points are row-major [N, 2].
template <typename T>
double social_sse(std::span<const T> predicted, std::span<const T> truth) {
  if (predicted.size() != truth.size() || predicted.size() % 2)
    throw ShapeError("social_sse", std::to_string(truth.size()), std::to_string(predicted.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double d = static_cast<double>(truth[i]) - static_cast<double>(predicted[i]);
    s += d * d;
  }
  return s;
}

// Differentiable counterparts -------------------------------------------------

inline nn::Tensor l1_loss(const nn::Tensor& predicted, const nn::Tensor& target) {
  return nn::mean(nn::abs(nn::sub(predicted, target)));
}

// log_probs [N, K]
inline nn::Tensor nll_loss(const nn::Tensor& log_probs, const std::vector<std::size_t>& labels) {
  return nn::scale(nn::mean(nn::pick(log_probs, labels)), -1.0);
}

// log_probs [B*4, 4], labels of length B*4; averages the per-sample jigsaw loss over B.
inline nn::Tensor jigsaw_loss(const nn::Tensor& log_probs, const std::vector<std::size_t>& labels) {
  return nll_loss(log_probs, labels);
}

inline nn::Tensor sse_loss(const nn::Tensor& predicted, const nn::Tensor& truth) {
  return nn::sum(nn::square(nn::sub(predicted, truth)));
}

}  // namespace vad::ssl
