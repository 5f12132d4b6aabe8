#pragma once

// Minimal reverse-mode autodiff over dense double tensors (row-major).
//
// A Tensor is a handle to a graph Node. Ops record their parents and a backward
// closure only while gradient recording is enabled and at least one input requires
// a gradient. Leaves created with Tensor::parameter() accumulate gradients across
// backward() calls until zero_grad().

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vad/core/error.hpp"

namespace vad::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
  os << ')';
  return os.str();
}

namespace detail {
inline thread_local bool grad_enabled = true;
}

inline bool grad_enabled() { return detail::grad_enabled; }

class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
  bool is_leaf() const { return !backward; }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  static Tensor from(Shape shape, std::vector<double> values) {
    if (numel(shape) != values.size()) {
      throw ShapeError("Tensor::from", std::to_string(numel(shape)) + " values",
                       std::to_string(values.size()));
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    return Tensor(std::move(n));
  }
  static Tensor zeros(Shape shape) {
    const auto count = numel(shape);
    return from(std::move(shape), std::vector<double>(count, 0.0));
  }
  static Tensor full(Shape shape, double v) {
    const auto count = numel(shape);
    return from(std::move(shape), std::vector<double>(count, v));
  }
  static Tensor scalar(double v) { return from({1}, {v}); }
  static Tensor parameter(Shape shape, std::vector<double> values) {
    Tensor t = from(std::move(shape), std::move(values));
    t.n_->requires_grad = true;
    return t;
  }

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return n_->shape; }
  std::size_t dim(std::size_t i) const { return n_->shape.at(i); }
  std::size_t rank() const { return n_->shape.size(); }
  std::size_t size() const { return n_->value.size(); }
  bool requires_grad() const { return n_->requires_grad; }

  std::span<const double> data() const { return n_->value; }
  // Direct write access; intended for parameter initialization, optimizers and
  // finite-difference probes.
  std::span<double> mutable_data() { return n_->value; }
  std::span<const double> grad() const { return n_->grad; }
  std::span<double> mutable_grad() {
    n_->ensure_grad();
    return n_->grad;
  }
  double item() const {
    if (size() != 1) throw ShapeError("Tensor::item", "1 element", shape_str(shape()));
    return n_->value[0];
  }
  double operator[](std::size_t i) const { return n_->value[i]; }

  void zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
  }

  // Copy of the value with no graph history.
  Tensor detach() const { return from(shape(), n_->value); }

  Node* node() const { return n_.get(); }
  const std::shared_ptr<Node>& ptr() const { return n_; }

  // Back-propagates from this tensor. Every element of its gradient is seeded with
  // `seed`. Intermediate gradients are reset first, so the same graph may be
  // back-propagated several times; leaf gradients accumulate.
  void backward(double seed = 1.0) const;

 private:
  std::shared_ptr<Node> n_;
};

namespace detail {

inline bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

}  // namespace detail

// Builds an op result. The backward closure is kept only if recording is on and some
// parent needs a gradient.
inline Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                      std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (detail::grad_enabled) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.requires_grad();
    if (needs) {
      n->requires_grad = true;
      n->parents.reserve(parents.size());
      for (auto& p : parents) n->parents.push_back(p.ptr());
      n->backward = std::move(backward);
    }
  }
  return Tensor(std::move(n));
}

inline void Tensor::backward(double seed) const {
  if (!n_->requires_grad) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{n_.get(), 0}};
  seen.insert(n_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* node : order)
    if (!node->is_leaf()) node->grad.assign(node->value.size(), 0.0);
  n_->ensure_grad();
  for (auto& g : n_->grad) g += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!node->is_leaf()) node->backward(*node);
  }
}

// Gradient buffer of parent i, allocated on first use.
inline std::vector<double>* parent_grad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  p.ensure_grad();
  return &p.grad;
}

inline const std::vector<double>& parent_value(const Node& self, std::size_t i) {
  return self.parents[i]->value;
}

}  // namespace vad::nn
