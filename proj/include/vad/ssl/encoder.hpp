#pragma once

#include <memory>
#include <string>
#include <vector>

#include "vad/core/error.hpp"
#include "vad/core/jsonl.hpp"
#include "vad/nn/layers.hpp"

namespace vad::ssl {

enum class EncoderVariant { conv_cvt, hierarchical_former };

inline std::string to_string(EncoderVariant v) {
  return v == EncoderVariant::conv_cvt ? "conv_cvt" : "hierarchical_former";
}

inline EncoderVariant parse_variant(const std::string& s) {
  if (s == "conv_cvt") return EncoderVariant::conv_cvt;
  if (s == "hierarchical_former") return EncoderVariant::hierarchical_former;
  throw ConfigError("unknown encoder variant '" + s + "'");
}

struct EncoderConfig {
  EncoderVariant variant = EncoderVariant::conv_cvt;
  std::vector<std::size_t> channels{16, 32, 48};
  std::vector<std::size_t> depth{1, 1, 1};
  std::size_t half_window_t = 3;
  std::size_t heads = 2;
  std::size_t image_size = 64;

  std::size_t frames() const { return 2 * half_window_t + 1; }
  std::size_t in_channels() const { return 3 * frames(); }
  std::size_t feature_dim() const { return channels.back(); }

  void validate() const {
    if (channels.size() != 3 || depth.size() != 3) throw ConfigError("encoder needs 3 stages of channels and depth");
    if (image_size != 64) throw ConfigError("encoder input must be 64x64");
    for (auto c : channels)
      if (c == 0 || c % heads) throw ConfigError("encoder channels must be positive multiples of heads");
    if (half_window_t < 1) throw ConfigError("half_window_t must be >= 1");
  }
};

inline void to_json(json& j, const EncoderConfig& c) {
  j = json{{"variant", to_string(c.variant)}, {"channels", c.channels}, {"depth", c.depth},
           {"half_window_t", c.half_window_t}, {"heads", c.heads}};
}

inline void from_json(const json& j, EncoderConfig& c) {
  c.variant = parse_variant(j.value("variant", std::string("conv_cvt")));
  c.channels = j.value("channels", c.channels);
  c.depth = j.value("depth", c.depth);
  c.half_window_t = j.value("half_window_t", c.half_window_t);
  c.heads = j.value("heads", c.heads);
}

// What every head sees, independent of the variant: a 4x4 feature map of
// channels[2] plus skip maps at 16x16 (channels[0]) and 8x8 (channels[1]).
struct EncoderOutput {
  nn::Tensor features;
  nn::Tensor skip_hi;
  nn::Tensor skip_mid;
};

class Encoder {
 public:
  explicit Encoder(EncoderConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }
  virtual ~Encoder() = default;

  // x: [B, 3(2t+1), 64, 64], values in [0, 1]
  EncoderOutput operator()(const nn::Tensor& x) const {
    check_input(x);
    return forward(x);
  }

  nn::Shape feature_shape(std::size_t batch) const { return {batch, cfg_.channels[2], 4, 4}; }
  const EncoderConfig& config() const { return cfg_; }

  virtual void collect(nn::ParamList& out, const std::string& prefix) const = 0;
  // Weight of the last shared block; its gradient norm drives task balancing.
  virtual nn::Tensor shared_layer() const = 0;
  virtual std::string shared_layer_id() const = 0;

 protected:
  virtual EncoderOutput forward(const nn::Tensor& x) const = 0;

  void check_input(const nn::Tensor& x) const {
    const nn::Shape want{0, cfg_.in_channels(), cfg_.image_size, cfg_.image_size};
    const auto& got = x.shape();
    if (got.size() != 4 || got[0] == 0 || got[1] != want[1] || got[2] != want[2] || got[3] != want[3])
      throw ShapeError("encoder input", "[B, " + std::to_string(want[1]) + ", 64, 64]", nn::shape_str(got));
  }

  EncoderConfig cfg_;
};

namespace detail {

// 3x3 conv residual block: x + conv(relu(conv(x)))
struct ResidualConv {
  ResidualConv() = default;
  ResidualConv(std::size_t c, Rng& rng) : a(c, c, 3, rng, {1, 1}), b(c, c, 3, rng, {1, 1}) {}
  nn::Tensor operator()(const nn::Tensor& x) const { return nn::relu(nn::add(x, b(nn::relu(a(x))))); }
  void collect(nn::ParamList& out, const std::string& p) const {
    a.collect(out, p + ".a");
    b.collect(out, p + ".b");
  }
  nn::Conv2d a, b;
};

}  // namespace detail

// Convolutional stem with CvT-style stages: convolutional token embedding followed
// by transformer blocks on the flattened map.
class ConvCvtEncoder final : public Encoder {
 public:
  ConvCvtEncoder(EncoderConfig cfg, Rng& rng) : Encoder(std::move(cfg)) {
    const auto& c = cfg_.channels;
    stem_ = nn::Conv2d(cfg_.in_channels(), c[0], 4, rng, {4, 0});
    for (std::size_t i = 0; i < cfg_.depth[0]; ++i) stage1_.emplace_back(c[0], rng);
    embed2_ = nn::Conv2d(c[0], c[1], 3, rng, {2, 1});
    for (std::size_t i = 0; i < cfg_.depth[1]; ++i) stage2_.emplace_back(c[1], cfg_.heads, 2, rng);
    embed3_ = nn::Conv2d(c[1], c[2], 3, rng, {2, 1});
    for (std::size_t i = 0; i < std::max<std::size_t>(1, cfg_.depth[2]); ++i) stage3_.emplace_back(c[2], cfg_.heads, 2, rng);
  }

  void collect(nn::ParamList& out, const std::string& p) const override {
    stem_.collect(out, p + ".stem");
    for (std::size_t i = 0; i < stage1_.size(); ++i) stage1_[i].collect(out, p + ".stage1." + std::to_string(i));
    embed2_.collect(out, p + ".embed2");
    for (std::size_t i = 0; i < stage2_.size(); ++i) stage2_[i].collect(out, p + ".stage2." + std::to_string(i));
    embed3_.collect(out, p + ".embed3");
    for (std::size_t i = 0; i < stage3_.size(); ++i) stage3_[i].collect(out, p + ".stage3." + std::to_string(i));
  }
  nn::Tensor shared_layer() const override { return stage3_.back().fc2.weight; }
  std::string shared_layer_id() const override { return "encoder.stage3." + std::to_string(stage3_.size() - 1) + ".fc2.weight"; }

 protected:
  EncoderOutput forward(const nn::Tensor& x) const override {
    nn::Tensor h = nn::relu(stem_(x));  // 16x16
    for (const auto& blk : stage1_) h = blk(h);
    const nn::Tensor hi = h;
    h = embed2_(h);  // 8x8
    nn::Tensor t = nn::to_tokens(h);
    for (const auto& blk : stage2_) t = blk(t);
    const nn::Tensor mid = nn::from_tokens(t, 8, 8);
    h = embed3_(mid);  // 4x4
    t = nn::to_tokens(h);
    for (const auto& blk : stage3_) t = blk(t);
    return {nn::from_tokens(t, 4, 4), hi, mid};
  }

 private:
  nn::Conv2d stem_;
  std::vector<detail::ResidualConv> stage1_;
  nn::Conv2d embed2_;
  std::vector<nn::TransformerBlock> stage2_;
  nn::Conv2d embed3_;
  std::vector<nn::TransformerBlock> stage3_;
};

// Purely attention-based hierarchy: patch embedding, window attention at the two
// finer scales with strided-conv merging between them, global attention at 4x4.
class HierarchicalFormerEncoder final : public Encoder {
 public:
  static constexpr std::size_t kWindow = 4;

  HierarchicalFormerEncoder(EncoderConfig cfg, Rng& rng) : Encoder(std::move(cfg)) {
    const auto& c = cfg_.channels;
    patch_ = nn::Conv2d(cfg_.in_channels(), c[0], 4, rng, {4, 0});
    embed_norm_ = nn::LayerNorm(c[0]);
    pos_ = nn::uniform_param({256, c[0]}, 0.02, rng);
    for (std::size_t i = 0; i < cfg_.depth[0]; ++i) stage1_.emplace_back(c[0], cfg_.heads, 2, rng);
    merge2_ = nn::Conv2d(c[0], c[1], 2, rng, {2, 0});
    for (std::size_t i = 0; i < cfg_.depth[1]; ++i) stage2_.emplace_back(c[1], cfg_.heads, 2, rng);
    merge3_ = nn::Conv2d(c[1], c[2], 2, rng, {2, 0});
    for (std::size_t i = 0; i < std::max<std::size_t>(1, cfg_.depth[2]); ++i) stage3_.emplace_back(c[2], cfg_.heads, 2, rng);
  }

  void collect(nn::ParamList& out, const std::string& p) const override {
    patch_.collect(out, p + ".patch");
    embed_norm_.collect(out, p + ".embed_norm");
    out.push_back({p + ".pos", pos_});
    for (std::size_t i = 0; i < stage1_.size(); ++i) stage1_[i].collect(out, p + ".stage1." + std::to_string(i));
    merge2_.collect(out, p + ".merge2");
    for (std::size_t i = 0; i < stage2_.size(); ++i) stage2_[i].collect(out, p + ".stage2." + std::to_string(i));
    merge3_.collect(out, p + ".merge3");
    for (std::size_t i = 0; i < stage3_.size(); ++i) stage3_[i].collect(out, p + ".stage3." + std::to_string(i));
  }
  nn::Tensor shared_layer() const override { return stage3_.back().fc2.weight; }
  std::string shared_layer_id() const override { return "encoder.stage3." + std::to_string(stage3_.size() - 1) + ".fc2.weight"; }

 protected:
  EncoderOutput forward(const nn::Tensor& x) const override {
    const std::size_t b = x.dim(0);
    nn::Tensor t = nn::to_tokens(patch_(x));  // [B, 256, c0]
    t = nn::add_broadcast(embed_norm_(t), pos_);
    nn::Tensor h = windowed(nn::from_tokens(t, 16, 16), stage1_, b, 16);
    const nn::Tensor hi = h;
    h = windowed(merge2_(h), stage2_, b, 8);
    const nn::Tensor mid = h;
    t = nn::to_tokens(merge3_(h));
    for (const auto& blk : stage3_) t = blk(t);
    return {nn::from_tokens(t, 4, 4), hi, mid};
  }

 private:
  static nn::Tensor windowed(nn::Tensor h, const std::vector<nn::TransformerBlock>& blocks, std::size_t b, std::size_t side) {
    if (blocks.empty()) return h;
    nn::Tensor w = nn::window_partition(h, kWindow);
    for (const auto& blk : blocks) w = blk(w);
    return nn::window_reverse(w, b, side, side, kWindow);
  }

  nn::Conv2d patch_;
  nn::LayerNorm embed_norm_;
  nn::Tensor pos_;
  std::vector<nn::TransformerBlock> stage1_;
  nn::Conv2d merge2_;
  std::vector<nn::TransformerBlock> stage2_;
  nn::Conv2d merge3_;
  std::vector<nn::TransformerBlock> stage3_;
};

inline std::unique_ptr<Encoder> make_encoder(const EncoderConfig& cfg, Rng& rng) {
  if (cfg.variant == EncoderVariant::conv_cvt) return std::make_unique<ConvCvtEncoder>(cfg, rng);
  return std::make_unique<HierarchicalFormerEncoder>(cfg, rng);
}

}  // namespace vad::ssl
