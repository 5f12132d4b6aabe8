#pragma once

#include <span>
#include <string>
#include <vector>

#include "vad/core/error.hpp"
#include "vad/core/jsonl.hpp"

namespace vad::eval {

struct EmsConfig {
  std::size_t vote_window = 5;
  double ema_decay = 0.9;

  void validate() const {
    if (vote_window % 2 == 0) throw ConfigError("vote window must be odd, got " + std::to_string(vote_window));
    if (!(ema_decay > 0.0 && ema_decay < 1.0)) throw ConfigError("ema decay must lie in (0, 1)");
  }
};

inline void to_json(json& j, const EmsConfig& c) { j = json{{"vote_window", c.vote_window}, {"ema_decay", c.ema_decay}}; }
inline void from_json(const json& j, EmsConfig& c) {
  c.vote_window = j.value("vote_window", c.vote_window);
  c.ema_decay = j.value("ema_decay", c.ema_decay);
  c.validate();
}

// Centered majority vote; windows are cut at the series ends. A position is 1
// only when ones are a strict majority of its (possibly truncated) window.
inline std::vector<int> majority_vote(std::span<const int> x, std::size_t window) {
  if (window % 2 == 0) throw ConfigError("vote window must be odd, got " + std::to_string(window));
  const std::size_t h = window / 2, n = x.size();
  std::vector<long> prefix(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + (x[i] != 0);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= h ? i - h : 0, hi = std::min(n, i + h + 1);
    const long ones = prefix[hi] - prefix[lo];
    out[i] = 2 * ones > static_cast<long>(hi - lo) ? 1 : 0;
  }
  return out;
}

// s_0 = c_0, s_t = decay * s_{t-1} + (1 - decay) * c_t.
inline std::vector<double> ema(std::span<const int> c, double decay) {
  std::vector<double> s(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) s[i] = i == 0 ? c[0] : decay * s[i - 1] + (1.0 - decay) * c[i];
  return s;
}

// Vote first, then EMA.
inline std::vector<double> ems_smooth(std::span<const int> raw, const EmsConfig& cfg = {}) {
  cfg.validate();
  if (raw.empty()) throw ConfigError("ems_smooth: empty series");
  const auto cleaned = majority_vote(raw, cfg.vote_window);
  return ema(cleaned, cfg.ema_decay);
}

// Short-term memory: every positive stays positive for the next k samples.
inline std::vector<int> propagate_forward(std::span<const int> raw, std::size_t k) {
  std::vector<int> out(raw.begin(), raw.end());
  std::size_t left = 0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i]) left = k + 1;
    if (left > 0) {
      out[i] = 1;
      --left;
    }
  }
  return out;
}

}  // namespace vad::eval
