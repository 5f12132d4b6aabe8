#pragma once

#include <string>
#include <vector>

#include "vad/ingest/sequence.hpp"
#include "vad/nn/layers.hpp"
#include "vad/ssl/encoder.hpp"

namespace vad::ssl {

// A named slice of a head's parameters. Heads list their groups outermost first,
// which is the order they are unfrozen in.
struct LayerGroup {
  std::string name;
  nn::ParamList params;
};

template <typename... Layers>
LayerGroup make_group(const std::string& name, const Layers&... layers) {
  LayerGroup g{name, {}};
  (layers.collect(g.params, name), ...);
  return g;
}

class MemoryBank {
 public:
  MemoryBank() = default;
  MemoryBank(std::size_t num_slots, std::size_t slot_dim, Rng& rng) {
    if (num_slots == 0 || slot_dim == 0) throw ConfigError("memory bank needs positive slots and dim");
    std::vector<double> v(num_slots * slot_dim);
    for (std::size_t s = 0; s < num_slots; ++s) {
      double n2 = 0.0;
      for (std::size_t d = 0; d < slot_dim; ++d) n2 += (v[s * slot_dim + d] = rng.normal()) * v[s * slot_dim + d];
      const double inv = 1.0 / std::sqrt(std::max(n2, 1e-12));
      for (std::size_t d = 0; d < slot_dim; ++d) v[s * slot_dim + d] *= inv;
    }
    slots = nn::Tensor::parameter({num_slots, slot_dim}, std::move(v));
  }

  struct Readout {
    nn::Tensor value;    // [B, D]
    nn::Tensor weights;  // [B, S], rows sum to 1
  };

  Readout read(const nn::Tensor& query) const {
    const nn::Tensor w = nn::softmax(nn::linear(query, slots));
    return {nn::matmul(w, slots), w};
  }
  void collect(nn::ParamList& out, const std::string& p) const { out.push_back({p + ".slots", slots}); }
  std::size_t num_slots() const { return slots.dim(0); }
  std::size_t slot_dim() const { return slots.dim(1); }

  nn::Tensor slots;
};

// Middle-frame prediction: pooled features query the memory, the readout is
// expanded to 4x4 and decoded to 64x64 with skip maps fused at 8x8 and 16x16.
class MiddleFrameHead {
 public:
  MiddleFrameHead() = default;
  MiddleFrameHead(const EncoderConfig& cfg, std::size_t memory_slots, Rng& rng) {
    const auto& c = cfg.channels;
    const std::size_t d = c[2];
    query_ = nn::Linear(d, d, rng);
    memory_ = MemoryBank(memory_slots, d, rng);
    expand_ = nn::Linear(2 * d, d * 16, rng);
    up1_ = nn::Conv2d(d + c[1], 32, 3, rng, {1, 1});
    up2_ = nn::Conv2d(32 + c[0], 16, 3, rng, {1, 1});
    up3_ = nn::Conv2d(16, 8, 3, rng, {1, 1});
    out_ = nn::Conv2d(8, 3, 3, rng, {1, 1});
    dim_ = d;
  }

  struct Output {
    nn::Tensor frame;           // [B, 3, 64, 64] in (0, 1)
    nn::Tensor memory_weights;  // [B, slots]
  };

  Output operator()(const EncoderOutput& enc) const {
    const std::size_t b = enc.features.dim(0);
    const nn::Tensor pooled = nn::global_avg_pool(enc.features);
    const auto mem = memory_.read(query_(pooled));
    nn::Tensor x = nn::reshape(nn::relu(expand_(nn::concat({pooled, mem.value}, 1))), {b, dim_, 4, 4});
    x = nn::relu(up1_(nn::concat({nn::upsample2x(x), enc.skip_mid}, 1)));  // 8x8
    x = nn::relu(up2_(nn::concat({nn::upsample2x(x), enc.skip_hi}, 1)));   // 16x16
    x = nn::relu(up3_(nn::upsample2x(x)));                                  // 32x32
    return {nn::sigmoid(out_(nn::upsample2x(x))), mem.weights};
  }

  std::vector<LayerGroup> layer_groups() const {
    return {make_group("middle.out", out_), make_group("middle.up3", up3_), make_group("middle.up2", up2_),
            make_group("middle.up1", up1_), make_group("middle.expand", expand_), make_group("middle.memory", query_, memory_)};
  }
  const MemoryBank& memory() const { return memory_; }

 private:
  nn::Linear query_;
  MemoryBank memory_;
  nn::Linear expand_;
  nn::Conv2d up1_, up2_, up3_, out_;
  std::size_t dim_ = 0;
};

// Regular vs irregular temporal order: two residual conv blocks and an MLP.
class IrregularityHead {
 public:
  IrregularityHead() = default;
  IrregularityHead(const EncoderConfig& cfg, Rng& rng) {
    const std::size_t d = cfg.channels[2];
    block1_ = detail::ResidualConv(d, rng);
    block2_ = detail::ResidualConv(d, rng);
    fc1_ = nn::Linear(d * 16, 32, rng);
    fc2_ = nn::Linear(32, 2, rng);
  }

  // -> log-probabilities [B, 2] (index 0 regular, 1 irregular)
  nn::Tensor operator()(const nn::Tensor& features) const {
    const std::size_t b = features.dim(0);
    const nn::Tensor h = block2_(block1_(features));
    return nn::log_softmax(fc2_(nn::relu(fc1_(nn::reshape(h, {b, h.size() / b})))));
  }

  std::vector<LayerGroup> layer_groups() const {
    return {make_group("irreg.fc2", fc2_), make_group("irreg.fc1", fc1_), make_group("irreg.block2", block2_),
            make_group("irreg.block1", block1_)};
  }

 private:
  detail::ResidualConv block1_, block2_;
  nn::Linear fc1_, fc2_;
};

// Spatial jigsaw: each of the 2x2 feature cells is classified into its original
// quadrant by a shared MLP.
class JigsawHead {
 public:
  JigsawHead() = default;
  JigsawHead(const EncoderConfig& cfg, Rng& rng, double dropout = 0.1) : dropout_(dropout) {
    const std::size_t d = cfg.channels[2];
    conv_ = nn::Conv2d(d, d, 3, rng, {1, 1});
    fc1_ = nn::Linear(d, 32, rng);
    fc2_ = nn::Linear(32, 4, rng);
  }

  // -> log-probabilities [B*4, 4]; row b*4+i is the distribution for patch position i.
  nn::Tensor operator()(const nn::Tensor& features, Rng* train_rng = nullptr) const {
    const std::size_t b = features.dim(0), d = features.dim(1);
    const nn::Tensor cells = nn::avg_pool2d(nn::relu(conv_(features)), 2);  // [B, d, 2, 2]
    const nn::Tensor rows = nn::reshape(nn::permute(cells, {0, 2, 3, 1}), {b * 4, d});
    return nn::log_softmax(fc2_(nn::dropout(nn::relu(fc1_(rows)), dropout_, train_rng)));
  }

  std::vector<LayerGroup> layer_groups() const {
    return {make_group("jigsaw.fc2", fc2_), make_group("jigsaw.fc1", fc1_), make_group("jigsaw.conv", conv_)};
  }

 private:
  nn::Conv2d conv_;
  nn::Linear fc1_, fc2_;
  double dropout_ = 0.1;
};

// One object's trajectory in normalized image coordinates.
struct Trajectory {
  std::vector<Point> past;                    // 7 positions, oldest first
  std::vector<std::vector<Point>> neighbors;  // N x 7
  Point next;                                 // ground truth for the 8th frame
};

struct TrajectoryBatch {
  std::vector<const Trajectory*> items;
  nn::Tensor object_features;  // [B, C] pooled over the 7-frame stack
};

// Recurrent trajectory predictor. Each target step attends (additively) over the
// neighbors' hidden states at that step; the final hidden state joined with the
// object feature seeds one decoder step that predicts the displacement.
class SocialHead {
 public:
  static constexpr std::size_t kHidden = 16;
  static constexpr std::size_t kEmbed = 16;
  static constexpr std::size_t kAttn = 16;
  static constexpr double kVelocityScale = 10.0;

  SocialHead() = default;
  SocialHead(const EncoderConfig& cfg, Rng& rng) {
    embed_ = nn::Linear(4, kEmbed, rng);
    encoder_ = nn::GRUCell(kEmbed + kHidden, kHidden, rng);
    attn_q_ = nn::Linear(kHidden, kAttn, rng, false);
    attn_k_ = nn::Linear(kHidden, kAttn, rng, false);
    attn_v_ = nn::uniform_param({kAttn}, 1.0 / std::sqrt(static_cast<double>(kAttn)), rng);
    object_ = nn::Linear(cfg.channels[2], kHidden, rng);
    init_ = nn::Linear(2 * kHidden, kHidden, rng);
    decoder_ = nn::GRUCell(kEmbed, kHidden, rng);
    out_ = nn::Linear(kHidden, 2, rng);
  }

  struct Output {
    nn::Tensor next;                              // [B, 2]
    std::vector<nn::Tensor> attention;            // per step [B, M], M = total neighbors
    std::vector<std::vector<std::size_t>> owner;  // neighbor -> batch row
  };

  Output operator()(const TrajectoryBatch& batch) const {
    const std::size_t b = batch.items.size();
    const std::size_t steps = b ? batch.items[0]->past.size() : 0;
    std::vector<std::size_t> owner;
    for (std::size_t i = 0; i < b; ++i) {
      if (batch.items[i]->past.size() != steps) throw ShapeError("social head", std::to_string(steps) + " steps", std::to_string(batch.items[i]->past.size()));
      for (std::size_t n = 0; n < batch.items[i]->neighbors.size(); ++n) owner.push_back(i);
    }
    const std::size_t m = owner.size();
    std::vector<char> mask(b * m, 0);
    for (std::size_t j = 0; j < m; ++j) mask[owner[j] * m + j] = 1;

    auto step_input = [&](auto&& track_of, std::size_t rows, std::size_t s) {
      std::vector<double> v(rows * 4);
      for (std::size_t r = 0; r < rows; ++r) {
        const std::vector<Point>& tr = track_of(r);
        const Point p = tr[s], q = tr[s == 0 ? 0 : s - 1];
        v[r * 4 + 0] = p.x;
        v[r * 4 + 1] = p.y;
        v[r * 4 + 2] = kVelocityScale * (p.x - q.x);
        v[r * 4 + 3] = kVelocityScale * (p.y - q.y);
      }
      return nn::relu(embed_(nn::Tensor::from({rows, 4}, std::move(v))));
    };
    std::vector<const std::vector<Point>*> neighbor_tracks;
    for (const auto* it : batch.items)
      for (const auto& n : it->neighbors) neighbor_tracks.push_back(&n);

    Output out;
    out.owner.assign(b, {});
    for (std::size_t j = 0; j < m; ++j) out.owner[owner[j]].push_back(j);
    nn::Tensor h = nn::Tensor::zeros({b, kHidden});
    nn::Tensor hn = nn::Tensor::zeros({m, kHidden});
    nn::Tensor last_embed;
    for (std::size_t s = 0; s < steps; ++s) {
      const nn::Tensor e = step_input([&](std::size_t r) -> const std::vector<Point>& { return batch.items[r]->past; }, b, s);
      nn::Tensor ctx;
      if (m > 0) {
        const nn::Tensor en = step_input([&](std::size_t r) -> const std::vector<Point>& { return *neighbor_tracks[r]; }, m, s);
        hn = encoder_(nn::concat({en, nn::Tensor::zeros({m, kHidden})}, 1), hn);
        const nn::Tensor att = nn::masked_softmax(nn::additive_scores(attn_q_(h), attn_k_(hn), attn_v_), mask);
        out.attention.push_back(att);
        ctx = nn::matmul(att, hn);
      } else {
        ctx = nn::Tensor::zeros({b, kHidden});
      }
      h = encoder_(nn::concat({e, ctx}, 1), h);
      last_embed = e;
    }
    const nn::Tensor obj = nn::relu(object_(batch.object_features));
    const nn::Tensor h0 = nn::tanh(init_(nn::concat({h, obj}, 1)));
    const nn::Tensor disp = nn::scale(out_(decoder_(last_embed, h0)), 1.0 / kVelocityScale);
    std::vector<double> last(b * 2);
    for (std::size_t i = 0; i < b; ++i) {
      last[i * 2] = batch.items[i]->past.back().x;
      last[i * 2 + 1] = batch.items[i]->past.back().y;
    }
    out.next = nn::add(nn::Tensor::from({b, 2}, std::move(last)), disp);
    return out;
  }

  std::vector<LayerGroup> layer_groups() const {
    LayerGroup attention{"social.attention", {}};
    attn_q_.collect(attention.params, "social.attention.q");
    attn_k_.collect(attention.params, "social.attention.k");
    attention.params.push_back({"social.attention.v", attn_v_});
    return {make_group("social.out", out_),         make_group("social.decoder", decoder_), make_group("social.init", init_),
            make_group("social.object", object_),   std::move(attention),                   make_group("social.encoder", encoder_),
            make_group("social.embed", embed_)};
  }

 private:
  nn::Linear embed_;
  nn::GRUCell encoder_;
  nn::Linear attn_q_, attn_k_;
  nn::Tensor attn_v_;
  nn::Linear object_, init_;
  nn::GRUCell decoder_;
  nn::Linear out_;
};

}  // namespace vad::ssl
