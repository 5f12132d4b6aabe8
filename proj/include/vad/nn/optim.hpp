#pragma once

#include <cmath>
#include <vector>

#include "vad/nn/layers.hpp"

namespace vad::nn {

// AdamW with decoupled weight decay. Parameters whose entry in `trainable` is false
// are skipped entirely: value, moments and step count stay untouched.
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
    double clip_norm = 5.0;  // global gradient norm clip over trainable params; <= 0 disables
  };

  AdamW() = default;
  AdamW(ParamList params, Options opts) : params_(std::move(params)), opts_(opts) { reset(); }

  void reset() {
    m_.assign(params_.size(), {});
    v_.assign(params_.size(), {});
    steps_.assign(params_.size(), 0);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].tensor.size(), 0.0);
      v_[i].assign(params_[i].tensor.size(), 0.0);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  void step(double lr, const std::vector<char>& trainable) {
    double scale = 1.0;
    if (opts_.clip_norm > 0.0) {
      double sq = 0.0;
      for (std::size_t i = 0; i < params_.size(); ++i)
        if (trainable[i])
          for (double g : params_[i].tensor.grad()) sq += g * g;
      const double norm = std::sqrt(sq);
      if (norm > opts_.clip_norm) scale = opts_.clip_norm / norm;
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!trainable[i]) continue;
      auto grad = params_[i].tensor.grad();
      if (grad.empty()) continue;
      auto value = params_[i].tensor.mutable_data();
      const int t = ++steps_[i];
      const double bc1 = 1.0 - std::pow(opts_.beta1, t);
      const double bc2 = 1.0 - std::pow(opts_.beta2, t);
      for (std::size_t j = 0; j < value.size(); ++j) {
        const double g = grad[j] * scale;
        m_[i][j] = opts_.beta1 * m_[i][j] + (1.0 - opts_.beta1) * g;
        v_[i][j] = opts_.beta2 * v_[i][j] + (1.0 - opts_.beta2) * g * g;
        value[j] -= lr * opts_.weight_decay * value[j];
        value[j] -= lr * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + opts_.eps);
      }
    }
  }

  const ParamList& params() const { return params_; }

 private:
  ParamList params_;
  Options opts_;
  std::vector<std::vector<double>> m_, v_;
  std::vector<int> steps_;
};

}  // namespace vad::nn
