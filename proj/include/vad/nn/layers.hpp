#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vad/core/rng.hpp"
#include "vad/nn/ops.hpp"

namespace vad::nn {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

using ParamList = std::vector<NamedParam>;

inline Tensor uniform_param(Shape shape, double bound, Rng& rng) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::parameter(std::move(shape), std::move(v));
}

inline Tensor const_param(Shape shape, double value) {
  const auto n = numel(shape);
  return Tensor::parameter(std::move(shape), std::vector<double>(n, value));
}

class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool bias = true) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = uniform_param({out, in}, bound, rng);
    if (bias) this->bias = uniform_param({out}, bound, rng);
  }
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
  void collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    if (bias.defined()) out.push_back({prefix + ".bias", bias});
  }
  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }

  Tensor weight;
  Tensor bias;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in, std::size_t out, std::size_t kernel, Rng& rng, Conv2dSpec spec = {})
      : spec(spec) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel));
    weight = uniform_param({out, in, kernel, kernel}, bound, rng);
    bias = uniform_param({out}, bound, rng);
  }
  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, spec); }
  void collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }

  Tensor weight;
  Tensor bias;
  Conv2dSpec spec;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim) : gamma(const_param({dim}, 1.0)), beta(const_param({dim}, 0.0)) {}
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
  void collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
  }

  Tensor gamma;
  Tensor beta;
};

// Standard GRU cell (reset gate applied to the hidden projection).
class GRUCell {
 public:
  GRUCell() = default;
  GRUCell(std::size_t input, std::size_t hidden, Rng& rng)
      : input_proj(input, 3 * hidden, rng), hidden_proj(hidden, 3 * hidden, rng), hidden_(hidden) {}

  // x [N, input], h [N, hidden] -> [N, hidden]
  Tensor operator()(const Tensor& x, const Tensor& h) const {
    const Tensor gi = input_proj(x);
    const Tensor gh = hidden_proj(h);
    const Tensor r = sigmoid(add(slice(gi, 1, 0, hidden_), slice(gh, 1, 0, hidden_)));
    const Tensor z = sigmoid(add(slice(gi, 1, hidden_, hidden_), slice(gh, 1, hidden_, hidden_)));
    const Tensor n = tanh(add(slice(gi, 1, 2 * hidden_, hidden_), mul(r, slice(gh, 1, 2 * hidden_, hidden_))));
    return add(n, mul(z, sub(h, n)));
  }
  void collect(ParamList& out, const std::string& prefix) const {
    input_proj.collect(out, prefix + ".ih");
    hidden_proj.collect(out, prefix + ".hh");
  }
  std::size_t hidden_size() const { return hidden_; }

  Linear input_proj;
  Linear hidden_proj;

 private:
  std::size_t hidden_ = 0;
};

// [B, C, H, W] -> [B, H*W, C]
inline Tensor to_tokens(const Tensor& x) {
  const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  return reshape(permute(x, {0, 2, 3, 1}), {b, h * w, c});
}

// [B, H*W, C] -> [B, C, H, W]
inline Tensor from_tokens(const Tensor& t, std::size_t h, std::size_t w) {
  const std::size_t b = t.dim(0), c = t.dim(2);
  return permute(reshape(t, {b, h, w, c}), {0, 3, 1, 2});
}

// [B, C, H, W] -> [B * (H/ws) * (W/ws), ws*ws, C]
inline Tensor window_partition(const Tensor& x, std::size_t ws) {
  const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % ws || w % ws) throw ShapeError("window_partition", "spatial dims divisible by " + std::to_string(ws), shape_str(x.shape()));
  const Tensor t = reshape(permute(x, {0, 2, 3, 1}), {b, h / ws, ws, w / ws, ws, c});
  return reshape(permute(t, {0, 1, 3, 2, 4, 5}), {b * (h / ws) * (w / ws), ws * ws, c});
}

inline Tensor window_reverse(const Tensor& t, std::size_t b, std::size_t h, std::size_t w, std::size_t ws) {
  const std::size_t c = t.dim(2);
  const Tensor u = reshape(t, {b, h / ws, w / ws, ws, ws, c});
  return permute(reshape(permute(u, {0, 1, 3, 2, 4, 5}), {b, h, w, c}), {0, 3, 1, 2});
}

// Multi-head scaled dot-product self-attention over tokens [B, N, C].
class SelfAttention {
 public:
  SelfAttention() = default;
  SelfAttention(std::size_t dim, std::size_t heads, Rng& rng)
      : qkv(dim, 3 * dim, rng), proj(dim, dim, rng), dim_(dim), heads_(heads) {
    if (dim % heads) throw ConfigError("attention dim " + std::to_string(dim) + " not divisible by heads");
  }

  Tensor operator()(const Tensor& x) const {
    const std::size_t b = x.dim(0), n = x.dim(1), hd = dim_ / heads_;
    const Tensor t = qkv(x);  // [B, N, 3C]
    auto split_heads = [&](std::size_t which) {
      const Tensor part = slice(t, 2, which * dim_, dim_);  // [B, N, C]
      return reshape(permute(reshape(part, {b, n, heads_, hd}), {0, 2, 1, 3}), {b * heads_, n, hd});
    };
    const Tensor q = scale(split_heads(0), 1.0 / std::sqrt(static_cast<double>(hd)));
    const Tensor k = split_heads(1);
    const Tensor v = split_heads(2);
    const Tensor att = softmax(bmm(q, k, true));  // [B*h, N, N]
    const Tensor o = bmm(att, v);                   // [B*h, N, hd]
    const Tensor merged = reshape(permute(reshape(o, {b, heads_, n, hd}), {0, 2, 1, 3}), {b, n, dim_});
    return proj(merged);
  }
  void collect(ParamList& out, const std::string& prefix) const {
    qkv.collect(out, prefix + ".qkv");
    proj.collect(out, prefix + ".proj");
  }

  Linear qkv;
  Linear proj;

 private:
  std::size_t dim_ = 0;
  std::size_t heads_ = 1;
};

// Pre-norm transformer block: x + Attn(LN(x)), then x + MLP(LN(x)).
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(std::size_t dim, std::size_t heads, std::size_t mlp_ratio, Rng& rng)
      : norm1(dim), attn(dim, heads, rng), norm2(dim), fc1(dim, mlp_ratio * dim, rng), fc2(mlp_ratio * dim, dim, rng) {}

  Tensor operator()(const Tensor& x) const {
    const Tensor y = add(x, attn(norm1(x)));
    return add(y, fc2(gelu(fc1(norm2(y)))));
  }
  void collect(ParamList& out, const std::string& prefix) const {
    norm1.collect(out, prefix + ".norm1");
    attn.collect(out, prefix + ".attn");
    norm2.collect(out, prefix + ".norm2");
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
  }

  LayerNorm norm1;
  SelfAttention attn;
  LayerNorm norm2;
  Linear fc1;
  Linear fc2;
};

inline std::size_t parameter_count(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.size();
  return n;
}

}  // namespace vad::nn
