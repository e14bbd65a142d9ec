#pragma once

// Dense float64 tensors with reverse-mode automatic differentiation.
//
// Storage is row-major. Every op returns a fresh tensor; when gradient
// recording is enabled and any operand requires a gradient, the result keeps
// references to its operands plus a backward rule. The graph is therefore
// rebuilt on every forward pass and released when the last tensor that
// references it goes away. There is no implicit broadcasting: apart from the
// scalar helpers (scale, add_scalar) shapes must agree exactly, and `repeat`
// is the explicit way to tile a tensor along a new axis.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fathom/errors.hpp"

namespace fathom {

class Shape {
 public:
  Shape() : dims_{1} {}
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);

  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  std::size_t numel() const noexcept;

  // Product of extents before / after `axis`.
  std::size_t outer(std::size_t axis) const;
  std::size_t inner(std::size_t axis) const;

  std::string to_string() const;
  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  std::vector<std::size_t> dims_;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first touched by backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // empty for leaves

  std::vector<double>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const { return shape().numel(); }
  std::size_t dim(std::size_t axis) const { return shape()[axis]; }

  std::span<const double> values() const;
  // Only leaves are writable; op results are immutable.
  std::span<double> mutable_values();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  // Allocates a zeroed gradient buffer if none exists.
  std::span<double> mutable_grad();
  void zero_grad();

  // New leaf holding a copy of the values.
  Tensor detach(bool requires_grad = false) const;

  // Identity of the underlying node (two handles to the same tensor compare equal).
  bool same_as(const Tensor& other) const noexcept { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend struct TensorAccess;

  std::shared_ptr<detail::Node> node_;
};

// Gradient recording is on by default, per thread.
bool grad_enabled() noexcept;

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// --- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);

Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);
// Gradient passes through inside [lo, hi] and is zero outside.
Tensor clamp(const Tensor& x, double lo, double hi);

// Max-subtracted softmax over `axis`. Throws NumericError on non-finite input.
Tensor softmax(const Tensor& x, std::size_t axis);

Tensor sum(const Tensor& x);   // -> shape {1}
Tensor mean(const Tensor& x);  // -> shape {1}

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor stack(std::span<const Tensor> parts, std::size_t axis);
Tensor reshape(const Tensor& x, Shape shape);
Tensor flatten(const Tensor& x);
// Inserts a new axis of extent `count` at `axis`, tiling the input along it.
Tensor repeat(const Tensor& x, std::size_t axis, std::size_t count);
// Drops `axis`, keeping the slab at `index`.
Tensor select(const Tensor& x, std::size_t axis, std::size_t index);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

// Seeds d(loss)/d(loss) = 1 and propagates to every reachable leaf.
// Leaf gradients accumulate across calls until zero_grad.
void backward(const Tensor& loss);
// Same, with an explicit upstream gradient for a non-scalar root.
void backward(const Tensor& root, std::span<const double> seed);

}  // namespace fathom
