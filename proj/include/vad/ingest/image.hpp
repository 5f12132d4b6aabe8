#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "vad/core/error.hpp"

namespace vad {

// 8-bit interleaved RGB raster, row-major (H x W x 3).
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  static constexpr int kChannels = 3;

  Raster() = default;
  Raster(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * kChannels, fill) {}

  bool empty() const { return width <= 0 || height <= 0; }
  std::uint8_t& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * kChannels + c]; }
  std::uint8_t at(int x, int y, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * kChannels + c]; }
  bool operator==(const Raster&) const = default;
};

struct BBox {
  double x = 0;
  double y = 0;
  double w = 0;
  double h = 0;

  double cx() const { return x + 0.5 * w; }
  double cy() const { return y + 0.5 * h; }
  bool operator==(const BBox&) const = default;
};

inline BBox clamp_box(const BBox& b, int width, int height) {
  const double x0 = std::clamp(b.x, 0.0, static_cast<double>(width));
  const double y0 = std::clamp(b.y, 0.0, static_cast<double>(height));
  const double x1 = std::clamp(b.x + b.w, 0.0, static_cast<double>(width));
  const double y1 = std::clamp(b.y + b.h, 0.0, static_cast<double>(height));
  return {x0, y0, std::max(0.0, x1 - x0), std::max(0.0, y1 - y0)};
}

// Pixel-aligned crop of the region covered by `box` (floor/ceil to whole pixels).
inline Raster crop(const Raster& img, const BBox& box) {
  const BBox b = clamp_box(box, img.width, img.height);
  const int x0 = static_cast<int>(std::floor(b.x));
  const int y0 = static_cast<int>(std::floor(b.y));
  const int x1 = std::min(img.width, static_cast<int>(std::ceil(b.x + b.w)));
  const int y1 = std::min(img.height, static_cast<int>(std::ceil(b.y + b.h)));
  Raster out(std::max(0, x1 - x0), std::max(0, y1 - y0));
  for (int y = 0; y < out.height; ++y)
    std::copy_n(&img.pixels[(static_cast<std::size_t>(y0 + y) * img.width + x0) * 3], static_cast<std::size_t>(out.width) * 3,
                &out.pixels[static_cast<std::size_t>(y) * out.width * 3]);
  return out;
}

// Bilinear resampling with half-pixel centers (edge samples clamped).
inline Raster resize_bilinear(const Raster& src, int out_w, int out_h) {
  if (src.empty()) throw ShapeError("resize_bilinear", "non-empty raster", "0x0");
  Raster out(out_w, out_h);
  const double sx = static_cast<double>(src.width) / out_w;
  const double sy = static_cast<double>(src.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = (1 - wx) * src.at(x0, y0, c) + wx * src.at(x1, y0, c);
        const double bot = (1 - wx) * src.at(x0, y1, c) + wx * src.at(x1, y1, c);
        out.at(x, y, c) = static_cast<std::uint8_t>(std::lround(std::clamp((1 - wy) * top + wy * bot, 0.0, 255.0)));
      }
    }
  }
  return out;
}

inline Raster load_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw ArtifactError("cannot decode image " + path.string());
  Raster out(bgr.cols, bgr.rows);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<std::uint8_t>(y);
    for (int x = 0; x < bgr.cols; ++x)
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = row[x * 3 + (2 - c)];
  }
  return out;
}

namespace detail {
inline cv::Mat to_bgr(const Raster& img) {
  cv::Mat bgr(img.height, img.width, CV_8UC3);
  for (int y = 0; y < img.height; ++y) {
    auto* row = bgr.ptr<std::uint8_t>(y);
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) row[x * 3 + (2 - c)] = img.at(x, y, c);
  }
  return bgr;
}
}  // namespace detail

inline void save_png(const Raster& img, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), detail::to_bgr(img))) throw ArtifactError("cannot write " + path.string());
}

inline std::vector<std::uint8_t> encode_png(const Raster& img) {
  std::vector<std::uint8_t> buf;
  if (!cv::imencode(".png", detail::to_bgr(img), buf)) throw Error("png encoding failed");
  return buf;
}

inline std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

}  // namespace vad
