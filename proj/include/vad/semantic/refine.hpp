#pragma once

#include <cmath>
#include <cstdlib>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "vad/core/error.hpp"

namespace vad::semantic {

inline constexpr std::size_t kDefaultRefineWindow = 10;

enum class RefineMode { local, global };

inline const char* to_string(RefineMode m) { return m == RefineMode::local ? "local" : "global"; }
inline RefineMode parse_refine_mode(const std::string& s) {
  if (s == "local") return RefineMode::local;
  if (s == "global") return RefineMode::global;
  throw ConfigError("unknown refinement mode '" + s + "'");
}

// Cosine similarity; 0 when either vector is zero.
inline double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine", "dimension " + std::to_string(a.size()), "dimension " + std::to_string(b.size()));
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// A caption available for substitution. `position` is its time coordinate (the
// frame's position in the sampled series).
struct Candidate {
  long position = 0;
  std::string caption;
  std::vector<double> embedding;
};

struct Refinement {
  std::string caption;
  long source_position = 0;
  double similarity = std::numeric_limits<double>::quiet_NaN();
};

// Whether `position` lies in the symmetric window of size `window` around t,
// i.e. within window/2 steps.
inline bool in_window(long position, long t, std::size_t window) {
  return std::labs(position - t) <= static_cast<long>(window / 2);
}

// Picks the candidate whose pooled text embedding is most similar to the frame's
// image embedding. Similarities within a relative 1e-12 count as tied so rounding
// from rescaled embeddings cannot flip the choice; ties go to the candidate
// nearest t, then to the earlier one.
inline Refinement refine_caption(std::span<const double> image_embedding, std::span<const Candidate> candidates, long t,
                                 const std::string& original, RefineMode mode = RefineMode::local,
                                 std::size_t window = kDefaultRefineWindow) {
  std::vector<std::size_t> pool;
  std::vector<double> sims;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (mode == RefineMode::local && !in_window(candidates[i].position, t, window)) continue;
    pool.push_back(i);
    sims.push_back(cosine(image_embedding, candidates[i].embedding));
  }
  if (pool.empty()) return {original, t};
  double best = -std::numeric_limits<double>::infinity();
  for (double s : sims) best = std::max(best, s);
  const double tol = 1e-12 * std::max(1.0, std::abs(best));
  std::size_t pick = pool.size();
  for (std::size_t k = 0; k < pool.size(); ++k) {
    if (sims[k] < best - tol) continue;
    if (pick == pool.size()) {
      pick = k;
      continue;
    }
    const auto& a = candidates[pool[k]];
    const auto& b = candidates[pool[pick]];
    const long da = std::labs(a.position - t), db = std::labs(b.position - t);
    if (da < db || (da == db && a.position < b.position)) pick = k;
  }
  const auto& c = candidates[pool[pick]];
  return {c.caption, c.position, sims[pick]};
}

}  // namespace vad::semantic
