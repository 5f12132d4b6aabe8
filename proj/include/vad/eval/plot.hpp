#pragma once

#include <algorithm>
#include <cmath>

#include "vad/eval/metrics.hpp"
#include "vad/ingest/image.hpp"

namespace vad::eval {

// Score curve of one series: ground-truth anomaly spans shaded, raw verdicts as
// ticks along the bottom, smoothed score as a line.
inline Raster plot_series(const ScoreSeries& s, int col_width = 6, int height = 100) {
  const int n = static_cast<int>(s.smoothed.size());
  const int w = std::max(1, n) * col_width, pad = 4, plot_h = height - 2 * pad - 6;
  Raster img(w, height, 255);
  auto put = [&](int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    if (x < 0 || y < 0 || x >= w || y >= height) return;
    img.at(x, y, 0) = r;
    img.at(x, y, 1) = g;
    img.at(x, y, 2) = b;
  };
  auto y_of = [&](double v) { return pad + static_cast<int>(std::lround((1.0 - std::clamp(v, 0.0, 1.0)) * plot_h)); };
  for (int i = 0; i < n; ++i) {
    const int x0 = i * col_width;
    if (s.labels[i])
      for (int x = x0; x < x0 + col_width; ++x)
        for (int y = pad; y <= pad + plot_h; ++y) put(x, y, 255, 215, 215);
    if (s.raw_binary[i])
      for (int x = x0 + 1; x < x0 + col_width - 1; ++x)
        for (int y = height - 5; y < height - 1; ++y) put(x, y, 40, 40, 40);
  }
  for (int x = 0; x < w; ++x) put(x, y_of(0.5), 200, 200, 200);
  for (int i = 0; i + 1 < n; ++i) {
    const int xa = i * col_width + col_width / 2, xb = xa + col_width;
    const int ya = y_of(s.smoothed[i]), yb = y_of(s.smoothed[i + 1]);
    for (int x = xa; x <= xb; ++x) {
      const int y = ya + (yb - ya) * (x - xa) / std::max(1, xb - xa);
      for (int yy = std::min(y, ya); yy <= std::max(y, ya) && x == xa; ++yy) put(x, yy, 20, 60, 200);
      put(x, y, 20, 60, 200);
      put(x, y + 1, 20, 60, 200);
    }
  }
  if (n == 1) put(col_width / 2, y_of(s.smoothed[0]), 20, 60, 200);
  return img;
}

}  // namespace vad::eval
