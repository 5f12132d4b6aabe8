#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "vad/nn/layers.hpp"
#include "vad/nn/optim.hpp"

using namespace vad;
using namespace vad::nn;

namespace {

Tensor random_param(Shape s, Rng& rng, double scale = 1.0) {
  std::vector<double> v(numel(s));
  for (auto& x : v) x = scale * rng.normal();
  return Tensor::parameter(std::move(s), std::move(v));
}

// Random projection so every output coordinate contributes to the scalar loss.
Tensor probe(const Tensor& t, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> w(t.size());
  for (auto& x : w) x = rng.normal();
  return sum(mul(t, Tensor::from(t.shape(), w)));
}

void expect_grads_match(const std::function<Tensor()>& f, std::vector<Tensor> params) {
  auto res = vad::test::gradcheck(f, std::move(params), 40, 1e-5);
  EXPECT_EQ(res.passed, res.checked) << "worst rel " << res.worst_rel;
}

}  // namespace

TEST(Autograd, ElementwiseAndReductions) {
  Rng rng(1);
  Tensor a = random_param({3, 4}, rng), b = random_param({3, 4}, rng);
  expect_grads_match([&] { return probe(add(mul(a, b), sub(tanh(a), sigmoid(b))), 11); }, {a, b});
  expect_grads_match([&] { return mean(square(gelu(a))); }, {a});
  expect_grads_match([&] { return probe(sum_lastdim(a), 3); }, {a});
}

TEST(Autograd, LinearMatmulBmm) {
  Rng rng(2);
  Tensor x = random_param({5, 3}, rng), w = random_param({4, 3}, rng), bias = random_param({4}, rng);
  expect_grads_match([&] { return probe(linear(x, w, bias), 5); }, {x, w, bias});
  Tensor m = random_param({3, 6}, rng);
  expect_grads_match([&] { return probe(matmul(x, m), 6); }, {x, m});
  Tensor p = random_param({2, 3, 4}, rng), q = random_param({2, 5, 4}, rng), r = random_param({2, 4, 5}, rng);
  expect_grads_match([&] { return probe(bmm(p, q, true), 7); }, {p, q});
  expect_grads_match([&] { return probe(bmm(p, r), 8); }, {p, r});
}

TEST(Autograd, SoftmaxFamilyAndNorm) {
  Rng rng(3);
  Tensor a = random_param({4, 5}, rng);
  expect_grads_match([&] { return probe(softmax(a), 9); }, {a});
  expect_grads_match([&] { return probe(log_softmax(a), 10); }, {a});
  std::vector<char> mask(20, 1);
  mask[0] = mask[3] = 0;
  for (int j = 5; j < 10; ++j) mask[j] = 0;  // fully masked row
  expect_grads_match([&] { return probe(masked_softmax(a, mask), 12); }, {a});
  Tensor g = random_param({5}, rng), bta = random_param({5}, rng);
  expect_grads_match([&] { return probe(layer_norm(a, g, bta), 13); }, {a, g, bta});
}

TEST(Autograd, MaskedSoftmaxZeroRowAndNormalization) {
  Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto out = masked_softmax(a, {1, 0, 1, 0, 0, 0});
  EXPECT_DOUBLE_EQ(out[1], 0.0);
  EXPECT_NEAR(out[0] + out[2], 1.0, 1e-12);
  for (int j = 3; j < 6; ++j) EXPECT_EQ(out[j], 0.0);
}

TEST(Autograd, ShapeOps) {
  Rng rng(4);
  Tensor a = random_param({2, 3, 4}, rng), b = random_param({2, 2, 4}, rng);
  expect_grads_match([&] { return probe(permute(a, {2, 0, 1}), 14); }, {a});
  expect_grads_match([&] { return probe(concat({a, b}, 1), 15); }, {a, b});
  expect_grads_match([&] { return probe(slice(a, 2, 1, 2), 16); }, {a});
  Tensor x = random_param({3, 4}, rng);
  expect_grads_match([&] { return probe(pick(log_softmax(x), {0, 3, 1}), 17); }, {x});
  Tensor pe = random_param({3, 4}, rng);
  expect_grads_match([&] { return probe(add_broadcast(a, pe), 18); }, {a, pe});
}

TEST(Autograd, PermuteMatchesManualTranspose) {
  Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto t = permute(a, {1, 0});
  EXPECT_EQ(t.shape(), (Shape{3, 2}));
  EXPECT_EQ(std::vector<double>(t.data().begin(), t.data().end()), (std::vector<double>{1, 4, 2, 5, 3, 6}));
}

TEST(Autograd, ConvPoolUpsample) {
  Rng rng(5);
  Tensor x = random_param({2, 3, 6, 6}, rng), w = random_param({4, 3, 3, 3}, rng, 0.3), b = random_param({4}, rng);
  expect_grads_match([&] { return probe(conv2d(x, w, b, {1, 1}), 19); }, {x, w, b});
  expect_grads_match([&] { return probe(conv2d(x, w, b, {2, 0}), 20); }, {x, w, b});
  expect_grads_match([&] { return probe(avg_pool2d(upsample2x(x), 3), 21); }, {x});
  expect_grads_match([&] { return probe(global_avg_pool(x), 22); }, {x});
}

// Direct summation over the kernel, zero padding by bounds test.
TEST(Autograd, ConvMatchesDirectSum) {
  Rng rng(9);
  for (auto [stride, pad, k] : {std::tuple{1, 1, 3}, std::tuple{2, 1, 3}, std::tuple{2, 0, 3}, std::tuple{1, 2, 5}, std::tuple{3, 2, 2}}) {
    const std::size_t bs = 2, c = 3, h = 7, wd = 9, o = 4;
    Tensor x = random_param({bs, c, h, wd}, rng), w = random_param({o, c, std::size_t(k), std::size_t(k)}, rng), b = random_param({o}, rng);
    const Tensor y = conv2d(x, w, b, {std::size_t(stride), std::size_t(pad)});
    const std::size_t ho = y.dim(2), wo = y.dim(3);
    ASSERT_EQ(ho, (h + 2 * pad - k) / stride + 1);
    ASSERT_EQ(wo, (wd + 2 * pad - k) / stride + 1);
    for (std::size_t n = 0; n < bs; ++n)
      for (std::size_t oc = 0; oc < o; ++oc)
        for (std::size_t oy = 0; oy < ho; ++oy)
          for (std::size_t ox = 0; ox < wo; ++ox) {
            double s = b[oc];
            for (std::size_t ci = 0; ci < c; ++ci)
              for (int i = 0; i < k; ++i)
                for (int j = 0; j < k; ++j) {
                  const long iy = long(oy) * stride + i - pad, ix = long(ox) * stride + j - pad;
                  if (iy < 0 || ix < 0 || iy >= long(h) || ix >= long(wd)) continue;
                  s += w[((oc * c + ci) * k + i) * k + j] * x[((n * c + ci) * h + iy) * wd + ix];
                }
            EXPECT_NEAR(y[((n * o + oc) * ho + oy) * wo + ox], s, 1e-12);
          }
    expect_grads_match([&] { return probe(conv2d(x, w, b, {std::size_t(stride), std::size_t(pad)}), 23); }, {x, w, b});
  }
}

TEST(Autograd, WindowPartitionRoundTrip) {
  Rng rng(6);
  Tensor x = random_param({2, 3, 4, 4}, rng);
  auto back = window_reverse(window_partition(x, 2), 2, 4, 4, 2);
  ASSERT_EQ(back.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(back[i], x[i]);
  auto tok = from_tokens(to_tokens(x), 4, 4);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(tok[i], x[i]);
}

TEST(Autograd, AdditiveAttentionScores) {
  Rng rng(7);
  Tensor q = random_param({3, 4}, rng), k = random_param({5, 4}, rng), v = random_param({4}, rng);
  expect_grads_match([&] { return probe(additive_scores(q, k, v), 23); }, {q, k, v});
}

TEST(Layers, GruAndAttentionGradients) {
  Rng rng(8);
  GRUCell cell(3, 4, rng);
  Tensor x = random_param({2, 3}, rng), h = random_param({2, 4}, rng, 0.5);
  ParamList ps;
  cell.collect(ps, "gru");
  std::vector<Tensor> ts{x, h};
  for (auto& p : ps) ts.push_back(p.tensor);
  expect_grads_match([&] { return probe(cell(x, h), 24); }, ts);

  TransformerBlock blk(4, 2, 2, rng);
  Tensor tok = random_param({2, 3, 4}, rng);
  ParamList bp;
  blk.collect(bp, "blk");
  std::vector<Tensor> bts{tok};
  for (auto& p : bp) bts.push_back(p.tensor);
  expect_grads_match([&] { return probe(blk(tok), 25); }, bts);
}

TEST(Autograd, RepeatedBackwardAccumulatesOnLeavesOnly) {
  Tensor a = Tensor::parameter({2}, {1.0, 2.0});
  Tensor y = sum(square(a));
  y.backward();
  y.backward();
  EXPECT_DOUBLE_EQ(a.grad()[0], 4.0);
  EXPECT_DOUBLE_EQ(a.grad()[1], 8.0);
}

TEST(Autograd, NoGradSkipsRecording) {
  Tensor a = Tensor::parameter({2}, {1.0, 2.0});
  NoGradGuard guard;
  Tensor y = sum(a);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Optim, FrozenParametersUntouched) {
  Tensor a = Tensor::parameter({2}, {1.0, 2.0}), b = Tensor::parameter({2}, {3.0, 4.0});
  AdamW opt({{"a", a}, {"b", b}}, {});
  sum(add(square(a), square(b))).backward();
  opt.step(0.1, {1, 0});
  EXPECT_NE(a[0], 1.0);
  EXPECT_EQ(b[0], 3.0);
  EXPECT_EQ(b[1], 4.0);
}
