#pragma once

// Differentiable operations on nn::Tensor. Layouts are row-major; image tensors are
// [batch, channels, height, width].

#include <cblas.h>

#include <algorithm>
#include <utility>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "vad/core/rng.hpp"
#include "vad/nn/tensor.hpp"

namespace vad::nn {

namespace detail {

// C[M,N] = alpha * op(A) op(B) + beta * C
inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
                 const double* a, const double* b, double beta, double* c) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    for (std::size_t i = 0; i < m * n; ++i) c[i] *= beta;
    return;
  }
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(trans_a ? m : k), b, static_cast<int>(trans_b ? k : n), beta, c,
              static_cast<int>(n));
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError(op, shape_str(a.shape()), shape_str(b.shape()));
}

inline void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank)
    throw ShapeError(op, "rank " + std::to_string(rank), shape_str(a.shape()));
}

template <typename F, typename DF>
Tensor unary(const Tensor& a, F f, DF df) {
  std::vector<double> out(a.size());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return make_op(a.shape(), std::move(out), {a}, [df](Node& self) {
    auto* ga = parent_grad(self, 0);
    if (!ga) return;
    const auto& x = parent_value(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i] * df(x[i], self.value[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p)
      if (auto* g = parent_grad(self, p))
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] -= self.grad[i];
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& x = parent_value(self, 0);
    const auto& y = parent_value(self, 1);
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * y[i];
    if (auto* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * x[i];
  });
}

inline Tensor scale(const Tensor& a, double s) {
  return detail::unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  return detail::unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                       [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor tanh(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::tanh(x); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                       [](double, double y) { return y * (1.0 - y); });
}

// tanh approximation
inline Tensor gelu(const Tensor& a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  return detail::unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x))); },
      [](double x, double) {
        const double u = c * (x + 0.044715 * x * x * x);
        const double t = std::tanh(u);
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x);
      });
}

inline Tensor abs(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::fabs(x); },
                       [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Tensor square(const Tensor& a) {
  return detail::unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Tensor log(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

// x of shape [B, rest...] plus p of shape [rest...], broadcast over the leading axis.
inline Tensor add_broadcast(const Tensor& x, const Tensor& p) {
  const std::size_t inner = p.size();
  if (inner == 0 || x.size() % inner != 0 ||
      !std::equal(p.shape().begin(), p.shape().end(), x.shape().end() - static_cast<long>(p.rank())))
    throw ShapeError("add_broadcast", "trailing " + shape_str(p.shape()), shape_str(x.shape()));
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + p[i % inner];
  return make_op(x.shape(), std::move(out), {x, p}, [inner](Node& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i % inner] += self.grad[i];
  });
}

inline Tensor dropout(const Tensor& a, double p, Rng* rng) {
  if (!rng || p <= 0.0) return a;
  std::vector<double> mask(a.size());
  const double keep = 1.0 - p;
  for (auto& m : mask) m = rng->uniform() < keep ? 1.0 / keep : 0.0;
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * mask[i];
  return make_op(a.shape(), std::move(out), {a}, [mask = std::move(mask)](Node& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * mask[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_op({1}, {s}, {a}, [](Node& self) {
    if (auto* g = parent_grad(self, 0))
      for (auto& v : *g) v += self.grad[0];
  });
}

inline Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.size());
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_op({1}, {s / n}, {a}, [n](Node& self) {
    if (auto* g = parent_grad(self, 0))
      for (auto& v : *g) v += self.grad[0] / n;
  });
}

// [N, K] -> [N]
inline Tensor sum_lastdim(const Tensor& a) {
  const std::size_t k = a.shape().back();
  const std::size_t rows = a.size() / k;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < k; ++j) out[r] += a[r * k + j];
  return make_op(out_shape, std::move(out), {a}, [k](Node& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i / k];
  });
}

// Scalar weighted sum of scalars: sum_i c_i * t_i, each t_i of size 1.
inline Tensor weighted_sum(const std::vector<Tensor>& ts, const std::vector<double>& coeffs) {
  double s = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) s += coeffs[i] * ts[i].item();
  return make_op({1}, {s}, ts, [coeffs](Node& self) {
    for (std::size_t i = 0; i < coeffs.size(); ++i)
      if (auto* g = parent_grad(self, i)) (*g)[0] += coeffs[i] * self.grad[0];
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) throw ShapeError("reshape", shape_str(shape), shape_str(a.shape()));
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_op(std::move(shape), std::move(out), {a}, [](Node& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
  });
}

namespace detail {

// For each output linear index, the input linear index under axis permutation `perm`.
inline std::vector<std::size_t> permute_index(const Shape& in_shape, const std::vector<std::size_t>& perm) {
  const std::size_t r = in_shape.size();
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in_shape[i];
  Shape out_shape(r);
  std::vector<std::size_t> stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in_shape[perm[i]];
    stride[i] = in_stride[perm[i]];
  }
  const std::size_t n = numel(in_shape);
  std::vector<std::size_t> idx(n);
  std::vector<std::size_t> counter(r, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < n; ++o) {
    idx[o] = src;
    for (std::size_t d = r; d-- > 0;) {
      ++counter[d];
      src += stride[d];
      if (counter[d] < out_shape[d]) break;
      src -= stride[d] * out_shape[d];
      counter[d] = 0;
    }
  }
  return idx;
}

}  // namespace detail

inline Tensor permute(const Tensor& a, const std::vector<std::size_t>& perm) {
  if (perm.size() != a.rank()) throw ShapeError("permute", "rank " + std::to_string(perm.size()), shape_str(a.shape()));
  Shape out_shape(a.rank());
  for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = a.shape()[perm[i]];
  auto idx = detail::permute_index(a.shape(), perm);
  std::vector<double> out(a.size());
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = a[idx[o]];
  return make_op(std::move(out_shape), std::move(out), {a}, [idx = std::move(idx)](Node& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t o = 0; o < idx.size(); ++o) (*g)[idx[o]] += self.grad[o];
  });
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat", "at least one part", "none");
  const Shape& s0 = parts[0].shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  Shape out_shape = s0;
  out_shape[axis] = 0;
  std::vector<std::size_t> lens;
  for (const auto& p : parts) {
    Shape expect = s0;
    expect[axis] = p.shape()[axis];
    if (p.shape() != expect) throw ShapeError("concat", shape_str(expect), shape_str(p.shape()));
    lens.push_back(p.shape()[axis]);
    out_shape[axis] += p.shape()[axis];
  }
  const std::size_t total = out_shape[axis];
  std::vector<double> out(numel(out_shape));
  std::size_t off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto src = parts[p].data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(src.begin() + static_cast<long>(o * lens[p] * inner), lens[p] * inner,
                  out.begin() + static_cast<long>((o * total + off) * inner));
    off += lens[p];
  }
  return make_op(std::move(out_shape), std::move(out), parts, [outer, inner, total, lens](Node& self) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < lens.size(); ++p) {
      if (auto* g = parent_grad(self, p))
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t j = 0; j < lens[p] * inner; ++j)
            (*g)[o * lens[p] * inner + j] += self.grad[(o * total + off) * inner + j];
      off += lens[p];
    }
  });
}

inline Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t len) {
  const Shape& s = a.shape();
  if (axis >= s.size() || start + len > s[axis])
    throw ShapeError("slice", "range within " + shape_str(s), std::to_string(start) + "+" + std::to_string(len));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t total = s[axis];
  Shape out_shape = s;
  out_shape[axis] = len;
  std::vector<double> out(numel(out_shape));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < len * inner; ++j) out[o * len * inner + j] = a[(o * total + start) * inner + j];
  return make_op(std::move(out_shape), std::move(out), {a}, [outer, inner, total, start, len](Node& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < len * inner; ++j)
          (*g)[(o * total + start) * inner + j] += self.grad[o * len * inner + j];
  });
}

// x[N, K], idx[N] -> [N] with out[n] = x[n, idx[n]]
inline Tensor pick(const Tensor& x, const std::vector<std::size_t>& idx) {
  detail::require_rank("pick", x, 2);
  const std::size_t n = x.dim(0), k = x.dim(1);
  if (idx.size() != n) throw ShapeError("pick", std::to_string(n) + " indices", std::to_string(idx.size()));
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (idx[i] >= k) throw ShapeError("pick", "index < " + std::to_string(k), std::to_string(idx[i]));
    out[i] = x[i * k + idx[i]];
  }
  return make_op({n}, std::move(out), {x}, [idx, k](Node& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < idx.size(); ++i) (*g)[i * k + idx[i]] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

// x[N, in] W[out, in]^T + b[out]
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = {}) {
  detail::require_rank("linear weight", w, 2);
  const std::size_t in = w.dim(1), outd = w.dim(0);
  if (x.shape().back() != in) throw ShapeError("linear", "last dim " + std::to_string(in), shape_str(x.shape()));
  const std::size_t n = x.size() / in;
  Shape out_shape = x.shape();
  out_shape.back() = outd;
  std::vector<double> out(n * outd, 0.0);
  if (b.defined())
    for (std::size_t i = 0; i < n; ++i) std::copy(b.data().begin(), b.data().end(), out.begin() + static_cast<long>(i * outd));
  detail::gemm(false, true, n, outd, in, 1.0, x.data().data(), w.data().data(), b.defined() ? 1.0 : 0.0, out.data());
  std::vector<Tensor> parents{x, w};
  if (b.defined()) parents.push_back(b);
  const bool has_bias = b.defined();
  return make_op(std::move(out_shape), std::move(out), std::move(parents), [n, in, outd, has_bias](Node& self) {
    const auto& xv = parent_value(self, 0);
    const auto& wv = parent_value(self, 1);
    if (auto* g = parent_grad(self, 0)) detail::gemm(false, false, n, in, outd, 1.0, self.grad.data(), wv.data(), 1.0, g->data());
    if (auto* g = parent_grad(self, 1)) detail::gemm(true, false, outd, in, n, 1.0, self.grad.data(), xv.data(), 1.0, g->data());
    if (has_bias)
      if (auto* g = parent_grad(self, 2))
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < outd; ++j) (*g)[j] += self.grad[i * outd + j];
  });
}

// a[N, K] b[K, M]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank("matmul", a, 2);
  detail::require_rank("matmul", b, 2);
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  if (b.dim(0) != k) throw ShapeError("matmul", "rows " + std::to_string(k), shape_str(b.shape()));
  std::vector<double> out(n * m, 0.0);
  detail::gemm(false, false, n, m, k, 1.0, a.data().data(), b.data().data(), 0.0, out.data());
  return make_op({n, m}, std::move(out), {a, b}, [n, k, m](Node& self) {
    const auto& av = parent_value(self, 0);
    const auto& bv = parent_value(self, 1);
    if (auto* g = parent_grad(self, 0)) detail::gemm(false, true, n, k, m, 1.0, self.grad.data(), bv.data(), 1.0, g->data());
    if (auto* g = parent_grad(self, 1)) detail::gemm(true, false, k, m, n, 1.0, av.data(), self.grad.data(), 1.0, g->data());
  });
}

// Batched: a[B, N, K] times b[B, K, M] (or b[B, M, K] with trans_b) -> [B, N, M]
inline Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b = false) {
  detail::require_rank("bmm", a, 3);
  detail::require_rank("bmm", b, 3);
  const std::size_t bs = a.dim(0), n = a.dim(1), k = a.dim(2);
  const std::size_t m = trans_b ? b.dim(1) : b.dim(2);
  if (b.dim(0) != bs || (trans_b ? b.dim(2) : b.dim(1)) != k)
    throw ShapeError("bmm", "compatible with " + shape_str(a.shape()), shape_str(b.shape()));
  std::vector<double> out(bs * n * m, 0.0);
  for (std::size_t i = 0; i < bs; ++i)
    detail::gemm(false, trans_b, n, m, k, 1.0, a.data().data() + i * n * k, b.data().data() + i * k * m, 0.0,
                 out.data() + i * n * m);
  return make_op({bs, n, m}, std::move(out), {a, b}, [bs, n, k, m, trans_b](Node& self) {
    const auto& av = parent_value(self, 0);
    const auto& bv = parent_value(self, 1);
    auto* ga = parent_grad(self, 0);
    auto* gb = parent_grad(self, 1);
    for (std::size_t i = 0; i < bs; ++i) {
      const double* go = self.grad.data() + i * n * m;
      if (ga) detail::gemm(false, !trans_b, n, k, m, 1.0, go, bv.data() + i * k * m, 1.0, ga->data() + i * n * k);
      if (gb) {
        if (trans_b)
          detail::gemm(true, false, m, k, n, 1.0, go, av.data() + i * n * k, 1.0, gb->data() + i * k * m);
        else
          detail::gemm(true, false, k, m, n, 1.0, av.data() + i * n * k, go, 1.0, gb->data() + i * k * m);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Softmax family over the last axis

inline Tensor softmax(const Tensor& a) {
  const std::size_t k = a.shape().back();
  const std::size_t rows = a.size() / k;
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * k;
    double mx = *std::max_element(x, x + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += (out[r * k + j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] /= z;
  }
  return make_op(a.shape(), std::move(out), {a}, [rows, k](Node& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j) dot += self.grad[r * k + j] * self.value[r * k + j];
        for (std::size_t j = 0; j < k; ++j)
          (*g)[r * k + j] += self.value[r * k + j] * (self.grad[r * k + j] - dot);
      }
  });
}

inline Tensor log_softmax(const Tensor& a) {
  const std::size_t k = a.shape().back();
  const std::size_t rows = a.size() / k;
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * k;
    const double mx = *std::max_element(x, x + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(x[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = x[j] - lse;
  }
  return make_op(a.shape(), std::move(out), {a}, [rows, k](Node& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t r = 0; r < rows; ++r) {
        double gs = 0.0;
        for (std::size_t j = 0; j < k; ++j) gs += self.grad[r * k + j];
        for (std::size_t j = 0; j < k; ++j)
          (*g)[r * k + j] += self.grad[r * k + j] - std::exp(self.value[r * k + j]) * gs;
      }
  });
}

// Softmax restricted to entries with mask[i] != 0. Rows with no admissible entry
// come out as all zeros.
inline Tensor masked_softmax(const Tensor& a, const std::vector<char>& mask) {
  if (mask.size() != a.size()) throw ShapeError("masked_softmax", std::to_string(a.size()) + " mask entries", std::to_string(mask.size()));
  const std::size_t k = a.shape().back();
  const std::size_t rows = a.size() / k;
  std::vector<double> out(a.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j)
      if (mask[r * k + j]) mx = std::max(mx, a[r * k + j]);
    if (!std::isfinite(mx)) continue;
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j)
      if (mask[r * k + j]) z += (out[r * k + j] = std::exp(a[r * k + j] - mx));
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] /= z;
  }
  return make_op(a.shape(), std::move(out), {a}, [rows, k](Node& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j) dot += self.grad[r * k + j] * self.value[r * k + j];
        for (std::size_t j = 0; j < k; ++j)
          (*g)[r * k + j] += self.value[r * k + j] * (self.grad[r * k + j] - dot);
      }
  });
}

// Layer normalization over the last axis with affine gamma/beta of that size.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
  const std::size_t c = x.shape().back();
  if (gamma.size() != c || beta.size() != c) throw ShapeError("layer_norm", std::to_string(c), shape_str(gamma.shape()));
  const std::size_t rows = x.size() / c;
  std::vector<double> out(x.size()), xhat(x.size()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* v = x.data().data() + r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += v[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (v[j] - mu) * (v[j] - mu);
    var /= static_cast<double>(c);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[r * c + j] = (v[j] - mu) * inv_std[r];
      out[r * c + j] = xhat[r * c + j] * gamma[j] + beta[j];
    }
  }
  return make_op(x.shape(), std::move(out), {x, gamma, beta},
                 [rows, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                   const auto& gv = parent_value(self, 1);
                   auto* gx = parent_grad(self, 0);
                   auto* gg = parent_grad(self, 1);
                   auto* gb = parent_grad(self, 2);
                   const double cn = static_cast<double>(c);
                   for (std::size_t r = 0; r < rows; ++r) {
                     double s1 = 0.0, s2 = 0.0;
                     for (std::size_t j = 0; j < c; ++j) {
                       const double dy = self.grad[r * c + j];
                       if (gg) (*gg)[j] += dy * xhat[r * c + j];
                       if (gb) (*gb)[j] += dy;
                       const double dxh = dy * gv[j];
                       s1 += dxh;
                       s2 += dxh * xhat[r * c + j];
                     }
                     if (gx)
                       for (std::size_t j = 0; j < c; ++j) {
                         const double dxh = self.grad[r * c + j] * gv[j];
                         (*gx)[r * c + j] += inv_std[r] / cn * (cn * dxh - s1 - xhat[r * c + j] * s2);
                       }
                   }
                 });
}

// score[b, m] = sum_a v[a] * tanh(q[b, a] + k[m, a])
inline Tensor additive_scores(const Tensor& q, const Tensor& k, const Tensor& v) {
  detail::require_rank("additive_scores q", q, 2);
  detail::require_rank("additive_scores k", k, 2);
  const std::size_t bq = q.dim(0), a = q.dim(1), m = k.dim(0);
  if (k.dim(1) != a || v.size() != a) throw ShapeError("additive_scores", "attention dim " + std::to_string(a), shape_str(k.shape()));
  std::vector<double> t(bq * m * a), out(bq * m, 0.0);
  for (std::size_t b = 0; b < bq; ++b)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t d = 0; d < a; ++d) {
        const double th = std::tanh(q[b * a + d] + k[j * a + d]);
        t[(b * m + j) * a + d] = th;
        out[b * m + j] += v[d] * th;
      }
  return make_op({bq, m}, std::move(out), {q, k, v}, [bq, m, a, t = std::move(t)](Node& self) {
    const auto& vv = parent_value(self, 2);
    auto* gq = parent_grad(self, 0);
    auto* gk = parent_grad(self, 1);
    auto* gv = parent_grad(self, 2);
    for (std::size_t b = 0; b < bq; ++b)
      for (std::size_t j = 0; j < m; ++j) {
        const double go = self.grad[b * m + j];
        if (go == 0.0) continue;
        for (std::size_t d = 0; d < a; ++d) {
          const double th = t[(b * m + j) * a + d];
          if (gv) (*gv)[d] += go * th;
          const double dpre = go * vv[d] * (1.0 - th * th);
          if (gq) (*gq)[b * a + d] += dpre;
          if (gk) (*gk)[j * a + d] += dpre;
        }
      }
  });
}

// ---------------------------------------------------------------------------
// Convolution and pooling on [B, C, H, W]

struct Conv2dSpec {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

namespace detail {

// Output columns [lo, hi) whose input column ox*stride + j - pad lies inside [0, w).
inline std::pair<std::size_t, std::size_t> valid_cols(std::size_t j, std::size_t stride, std::size_t pad, std::size_t w, std::size_t wo) {
  std::size_t lo = 0;
  if (pad > j) lo = (pad - j + stride - 1) / stride;
  std::size_t hi = 0;
  if (w + pad > j) hi = std::min(wo, (w + pad - j - 1) / stride + 1);
  return {std::min(lo, hi), hi};
}

inline void im2col(const double* x, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                   std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, double* cols) {
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t i = 0; i < kh; ++i)
      for (std::size_t j = 0; j < kw; ++j) {
        double* row = cols + ((ci * kh + i) * kw + j) * ho * wo;
        const auto [lo, hi] = valid_cols(j, stride, pad, w, wo);
        for (std::size_t oy = 0; oy < ho; ++oy) {
          double* dst = row + oy * wo;
          const long iy = static_cast<long>(oy * stride + i) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(h) || lo >= hi) {
            std::fill(dst, dst + wo, 0.0);
            continue;
          }
          std::fill(dst, dst + lo, 0.0);
          std::fill(dst + hi, dst + wo, 0.0);
          const double* src = x + (ci * h + static_cast<std::size_t>(iy)) * w + (lo * stride + j - pad);
          if (stride == 1)
            std::copy(src, src + (hi - lo), dst + lo);
          else
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[(ox - lo) * stride];
        }
      }
}

inline void col2im(const double* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                   std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, double* x) {
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t i = 0; i < kh; ++i)
      for (std::size_t j = 0; j < kw; ++j) {
        const double* row = cols + ((ci * kh + i) * kw + j) * ho * wo;
        const auto [lo, hi] = valid_cols(j, stride, pad, w, wo);
        if (lo >= hi) continue;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * stride + i) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          double* dst = x + (ci * h + static_cast<std::size_t>(iy)) * w + (lo * stride + j - pad);
          const double* src = row + oy * wo;
          for (std::size_t ox = lo; ox < hi; ++ox) dst[(ox - lo) * stride] += src[ox];
        }
      }
}

}  // namespace detail

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, Conv2dSpec spec = {}) {
  detail::require_rank("conv2d input", x, 4);
  detail::require_rank("conv2d weight", w, 4);
  const std::size_t bs = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != c) throw ShapeError("conv2d", std::to_string(w.dim(1)) + " input channels", shape_str(x.shape()));
  if (h + 2 * spec.pad < kh || wd + 2 * spec.pad < kw) throw ShapeError("conv2d", "input >= kernel", shape_str(x.shape()));
  const std::size_t ho = (h + 2 * spec.pad - kh) / spec.stride + 1;
  const std::size_t wo = (wd + 2 * spec.pad - kw) / spec.stride + 1;
  const std::size_t ckk = c * kh * kw, hw = ho * wo;
  std::vector<double> out(bs * o * hw, 0.0);
  std::vector<double> cols(ckk * hw);
  for (std::size_t n = 0; n < bs; ++n) {
    detail::im2col(x.data().data() + n * c * h * wd, c, h, wd, kh, kw, spec.stride, spec.pad, ho, wo, cols.data());
    double* dst = out.data() + n * o * hw;
    if (b.defined())
      for (std::size_t oc = 0; oc < o; ++oc) std::fill(dst + oc * hw, dst + (oc + 1) * hw, b[oc]);
    detail::gemm(false, false, o, hw, ckk, 1.0, w.data().data(), cols.data(), b.defined() ? 1.0 : 0.0, dst);
  }
  std::vector<Tensor> parents{x, w};
  if (b.defined()) parents.push_back(b);
  const bool has_bias = b.defined();
  return make_op({bs, o, ho, wo}, std::move(out), std::move(parents),
                 [=](Node& self) {
                   const auto& xv = parent_value(self, 0);
                   const auto& wv = parent_value(self, 1);
                   auto* gx = parent_grad(self, 0);
                   auto* gw = parent_grad(self, 1);
                   auto* gb = has_bias ? parent_grad(self, 2) : nullptr;
                   std::vector<double> cols(ckk * hw), dcols(gx ? ckk * hw : 0);
                   for (std::size_t n = 0; n < bs; ++n) {
                     const double* go = self.grad.data() + n * o * hw;
                     if (gb)
                       for (std::size_t oc = 0; oc < o; ++oc)
                         for (std::size_t p = 0; p < hw; ++p) (*gb)[oc] += go[oc * hw + p];
                     if (gw) {
                       detail::im2col(xv.data() + n * c * h * wd, c, h, wd, kh, kw, spec.stride, spec.pad, ho, wo, cols.data());
                       detail::gemm(false, true, o, ckk, hw, 1.0, go, cols.data(), 1.0, gw->data());
                     }
                     if (gx) {
                       detail::gemm(true, false, ckk, hw, o, 1.0, wv.data(), go, 0.0, dcols.data());
                       detail::col2im(dcols.data(), c, h, wd, kh, kw, spec.stride, spec.pad, ho, wo, gx->data() + n * c * h * wd);
                     }
                   }
                 });
}

inline Tensor upsample2x(const Tensor& x) {
  detail::require_rank("upsample2x", x, 4);
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<double> out(planes * 4 * h * w);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xx = 0; xx < 2 * w; ++xx) out[(p * 2 * h + y) * 2 * w + xx] = x[(p * h + y / 2) * w + xx / 2];
  return make_op({x.dim(0), x.dim(1), 2 * h, 2 * w}, std::move(out), {x}, [planes, h, w](Node& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < 2 * h; ++y)
          for (std::size_t xx = 0; xx < 2 * w; ++xx) (*g)[(p * h + y / 2) * w + xx / 2] += self.grad[(p * 2 * h + y) * 2 * w + xx];
  });
}

// Non-overlapping k x k average pooling.
inline Tensor avg_pool2d(const Tensor& x, std::size_t k) {
  detail::require_rank("avg_pool2d", x, 4);
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % k || w % k) throw ShapeError("avg_pool2d", "spatial dims divisible by " + std::to_string(k), shape_str(x.shape()));
  const std::size_t ho = h / k, wo = w / k;
  const double inv = 1.0 / static_cast<double>(k * k);
  std::vector<double> out(planes * ho * wo, 0.0);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) out[(p * ho + y / k) * wo + xx / k] += inv * x[(p * h + y) * w + xx];
  return make_op({x.dim(0), x.dim(1), ho, wo}, std::move(out), {x}, [planes, h, w, k, ho, wo, inv](Node& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t xx = 0; xx < w; ++xx) (*g)[(p * h + y) * w + xx] += inv * self.grad[(p * ho + y / k) * wo + xx / k];
  });
}

// [B, C, H, W] -> [B, C]
inline Tensor global_avg_pool(const Tensor& x) {
  detail::require_rank("global_avg_pool", x, 4);
  const std::size_t planes = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  const double inv = 1.0 / static_cast<double>(hw);
  std::vector<double> out(planes, 0.0);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < hw; ++i) out[p] += inv * x[p * hw + i];
  return make_op({x.dim(0), x.dim(1)}, std::move(out), {x}, [planes, hw, inv](Node& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < hw; ++i) (*g)[p * hw + i] += inv * self.grad[p];
  });
}

}  // namespace vad::nn
