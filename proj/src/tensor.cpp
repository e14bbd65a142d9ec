#include "fathom/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace fathom {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

// --- Shape -----------------------------------------------------------------

Shape::Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  if (dims_.empty()) throw DimensionError("shape must have rank >= 1");
  for (auto d : dims_) {
    if (d == 0) throw DimensionError("shape extents must be >= 1, got " + to_string());
  }
}

std::size_t Shape::numel() const noexcept {
  return std::accumulate(dims_.begin(), dims_.end(), std::size_t{1}, std::multiplies<>());
}

std::size_t Shape::outer(std::size_t axis) const {
  std::size_t n = 1;
  for (std::size_t i = 0; i < axis && i < dims_.size(); ++i) n *= dims_[i];
  return n;
}

std::size_t Shape::inner(std::size_t axis) const {
  std::size_t n = 1;
  for (std::size_t i = axis + 1; i < dims_.size(); ++i) n *= dims_[i];
  return n;
}

std::string Shape::to_string() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "x" : "") << dims_[i];
  os << ')';
  return os.str();
}

// --- grad mode --------------------------------------------------------------

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// --- Tensor ---------------------------------------------------------------

struct TensorAccess {
  static const NodePtr& node(const Tensor& t) {
    if (!t.node_) throw ContractError("use of undefined tensor");
    return t.node_;
  }
  static Tensor wrap(NodePtr n) { return Tensor(std::move(n)); }
};

namespace {

const NodePtr& node_of(const Tensor& t) { return TensorAccess::node(t); }

// Builds an op result. The backward rule is only attached when recording.
Tensor make_result(Shape shape, std::vector<double> values, std::initializer_list<const Tensor*> inputs,
                   std::function<void(Node&)> backward_fn) {
  auto out = std::make_shared<Node>();
  out->shape = std::move(shape);
  out->value = std::move(values);
  if (g_grad_enabled) {
    bool any = false;
    for (const Tensor* in : inputs) any = any || node_of(*in)->requires_grad;
    if (any) {
      out->requires_grad = true;
      for (const Tensor* in : inputs) out->parents.push_back(node_of(*in));
      out->backward_fn = std::move(backward_fn);
    }
  }
  return TensorAccess::wrap(std::move(out));
}

Tensor make_result_n(Shape shape, std::vector<double> values, std::span<const Tensor> inputs,
                     std::function<void(Node&)> backward_fn) {
  auto out = std::make_shared<Node>();
  out->shape = std::move(shape);
  out->value = std::move(values);
  if (g_grad_enabled) {
    bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return node_of(t)->requires_grad; });
    if (any) {
      out->requires_grad = true;
      for (const Tensor& in : inputs) out->parents.push_back(node_of(in));
      out->backward_fn = std::move(backward_fn);
    }
  }
  return TensorAccess::wrap(std::move(out));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape().to_string() + " vs " +
                         b.shape().to_string());
  }
}

void require_axis(const char* op, const Shape& s, std::size_t axis) {
  if (axis >= s.rank()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + s.to_string());
  }
}

template <typename Forward, typename Derivative>
Tensor unary(const Tensor& x, Forward f, Derivative df) {
  const auto in = x.values();
  std::vector<double> out(in.size());
  std::transform(in.begin(), in.end(), out.begin(), f);
  return make_result(x.shape(), std::move(out), {&x}, [df](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(p.value[i], self.value[i]);
  });
}

}  // namespace

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != shape.numel()) {
    throw DimensionError("tensor: " + std::to_string(values.size()) + " values for shape " + shape.to_string());
  }
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape.numel();
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor(Shape{1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_of(*this)->shape; }
std::span<const double> Tensor::values() const { return node_of(*this)->value; }

std::span<double> Tensor::mutable_values() {
  if (!is_leaf()) throw ContractError("values of an op result are immutable");
  return node_of(*this)->value;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape().to_string());
  return values()[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const Shape& s = shape();
  if (index.size() != s.rank()) throw DimensionError("at(): index rank mismatch for " + s.to_string());
  std::size_t flat = 0, axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) throw DimensionError("at(): index out of range for " + s.to_string());
    flat = flat * s[axis] + i;
    ++axis;
  }
  return values()[flat];
}

bool Tensor::requires_grad() const { return node_of(*this)->requires_grad; }
bool Tensor::is_leaf() const { return !node_of(*this)->backward_fn; }
bool Tensor::has_grad() const { return node_of(*this)->grad.size() == numel(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return node_of(*this)->grad;
}

std::span<double> Tensor::mutable_grad() { return node_of(*this)->ensure_grad(); }

void Tensor::zero_grad() {
  auto& g = node_of(*this)->grad;
  std::fill(g.begin(), g.end(), 0.0);
}

Tensor Tensor::detach(bool requires_grad) const {
  return Tensor(shape(), std::vector<double>(values().begin(), values().end()), requires_grad);
}

// --- linear algebra -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.rank() != 2 || sb.rank() != 2 || sa[1] != sb[0]) {
    throw DimensionError("matmul: cannot multiply " + sa.to_string() + " by " + sb.to_string());
  }
  const std::size_t m = sa[0], n = sa[1], p = sb[1];
  const double* av = a.values().data();
  const double* bv = b.values().data();
  std::vector<double> out(m * p, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * p;
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = av[i * n + k];
      const double* brow = bv + k * p;
      for (std::size_t j = 0; j < p; ++j) row[j] += aik * brow[j];
    }
  }
  return make_result(Shape{m, p}, std::move(out), {&a, &b}, [m, n, p](Node& self) {
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    const double* g = self.grad.data();
    if (na.requires_grad) {
      auto& ga = na.ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < n; ++k) {
          const double* brow = nb.value.data() + k * p;
          const double* grow = g + i * p;
          double acc = 0.0;
          for (std::size_t j = 0; j < p; ++j) acc += grow[j] * brow[j];
          ga[i * n + k] += acc;
        }
      }
    }
    if (nb.requires_grad) {
      auto& gb = nb.ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g + i * p;
        for (std::size_t k = 0; k < n; ++k) {
          const double aik = na.value[i * n + k];
          double* gbrow = gb.data() + k * p;
          for (std::size_t j = 0; j < p; ++j) gbrow[j] += aik * grow[j];
        }
      }
    }
  });
}

// --- elementwise --------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  const auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  const auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    if (self.parents[0]->requires_grad) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  const auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    // Two separate passes so that mul(x, x) accumulates both contributions.
    if (na.requires_grad) {
      auto& g = na.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb.value[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na.value[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return unary(
      x, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, [](double, double y) { return y * (1.0 - y); });
}

Tensor log(const Tensor& x) {
  return unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) throw ContractError("clamp: lo must not exceed hi");
  return unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

// --- softmax ------------------------------------------------------------------

Tensor softmax(const Tensor& x, std::size_t axis) {
  const Shape& s = x.shape();
  require_axis("softmax", s, axis);
  const std::size_t outer = s.outer(axis), n = s[axis], inner = s.inner(axis);
  const auto in = x.values();
  for (double v : in) {
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
  }
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      double mx = in[base];
      for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, in[base + k * inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double e = std::exp(in[base + k * inner] - mx);
        out[base + k * inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] /= total;
    }
  }
  return make_result(s, std::move(out), {&x}, [outer, n, inner](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    const auto& y = self.value;
    const auto& gy = self.grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * n * inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < n; ++k) dot += gy[base + k * inner] * y[base + k * inner];
        for (std::size_t k = 0; k < n; ++k) {
          const std::size_t idx = base + k * inner;
          g[idx] += y[idx] * (gy[idx] - dot);
        }
      }
    }
  });
}

// --- reductions ---------------------------------------------------------------

Tensor sum(const Tensor& x) {
  const auto in = x.values();
  double total = 0.0;
  for (double v : in) total += v;
  return make_result(Shape{1}, {total}, {&x}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

// --- structural ---------------------------------------------------------------

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& first = parts[0].shape();
  require_axis("concat", first, axis);
  std::size_t total_axis = 0;
  for (const Tensor& t : parts) {
    const Shape& s = t.shape();
    bool ok = s.rank() == first.rank();
    for (std::size_t d = 0; ok && d < s.rank(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) throw DimensionError("concat: " + s.to_string() + " incompatible with " + first.to_string());
    total_axis += s[axis];
  }
  auto dims = first.dims();
  dims[axis] = total_axis;
  const std::size_t outer = first.outer(axis), inner = first.inner(axis);
  std::vector<double> out(outer * total_axis * inner);
  std::vector<std::size_t> widths;
  for (const Tensor& t : parts) widths.push_back(t.dim(axis) * inner);
  const std::size_t row = total_axis * inner;
  std::size_t offset = 0;
  for (std::size_t j = 0; j < parts.size(); ++j) {
    const auto v = parts[j].values();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(v.begin() + o * widths[j], widths[j], out.begin() + o * row + offset);
    }
    offset += widths[j];
  }
  return make_result_n(Shape(dims), std::move(out), parts, [outer, row, widths](Node& self) {
    std::size_t off = 0;
    for (std::size_t j = 0; j < self.parents.size(); ++j) {
      Node& p = *self.parents[j];
      if (p.requires_grad) {
        auto& g = p.ensure_grad();
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < widths[j]; ++i) g[o * widths[j] + i] += self.grad[o * row + off + i];
        }
      }
      off += widths[j];
    }
  });
}

Tensor stack(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("stack: no inputs");
  const Shape& first = parts[0].shape();
  if (axis > first.rank()) throw DimensionError("stack: axis out of range for " + first.to_string());
  for (const Tensor& t : parts) {
    if (t.shape() != first) throw DimensionError("stack: " + t.shape().to_string() + " vs " + first.to_string());
  }
  auto dims = first.dims();
  dims.insert(dims.begin() + static_cast<std::ptrdiff_t>(axis), parts.size());
  Shape out_shape(dims);
  const std::size_t outer = first.outer(axis), inner = first.numel() / outer, count = parts.size();
  std::vector<double> out(out_shape.numel());
  for (std::size_t j = 0; j < count; ++j) {
    const auto v = parts[j].values();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(v.begin() + o * inner, inner, out.begin() + (o * count + j) * inner);
    }
  }
  return make_result_n(out_shape, std::move(out), parts, [outer, inner, count](Node& self) {
    for (std::size_t j = 0; j < count; ++j) {
      Node& p = *self.parents[j];
      if (!p.requires_grad) continue;
      auto& g = p.ensure_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        const double* src = self.grad.data() + (o * count + j) * inner;
        for (std::size_t i = 0; i < inner; ++i) g[o * inner + i] += src[i];
      }
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape.numel() != x.numel()) {
    throw DimensionError("reshape: " + x.shape().to_string() + " -> " + shape.to_string());
  }
  const auto v = x.values();
  return make_result(std::move(shape), std::vector<double>(v.begin(), v.end()), {&x}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor flatten(const Tensor& x) { return reshape(x, Shape{x.numel()}); }

Tensor repeat(const Tensor& x, std::size_t axis, std::size_t count) {
  const Shape& s = x.shape();
  if (axis > s.rank()) throw DimensionError("repeat: axis out of range for " + s.to_string());
  if (count == 0) throw DimensionError("repeat: count must be >= 1");
  auto dims = s.dims();
  dims.insert(dims.begin() + static_cast<std::ptrdiff_t>(axis), count);
  const std::size_t outer = s.outer(axis), inner = s.numel() / outer;
  const auto v = x.values();
  std::vector<double> out(outer * count * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t r = 0; r < count; ++r) {
      std::copy_n(v.begin() + o * inner, inner, out.begin() + (o * count + r) * inner);
    }
  }
  return make_result(Shape(dims), std::move(out), {&x}, [outer, count, inner](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t r = 0; r < count; ++r) {
        const double* src = self.grad.data() + (o * count + r) * inner;
        for (std::size_t i = 0; i < inner; ++i) g[o * inner + i] += src[i];
      }
    }
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& s = x.shape();
  require_axis("slice", s, axis);
  if (length == 0 || start + length > s[axis]) {
    throw DimensionError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of range for " + s.to_string());
  }
  auto dims = s.dims();
  dims[axis] = length;
  const std::size_t outer = s.outer(axis), inner = s.inner(axis), n = s[axis];
  const auto v = x.values();
  std::vector<double> out(outer * length * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(v.begin() + (o * n + start) * inner, length * inner, out.begin() + o * length * inner);
  }
  return make_result(Shape(dims), std::move(out), {&x}, [outer, inner, n, start, length](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t o = 0; o < outer; ++o) {
      const double* src = self.grad.data() + o * length * inner;
      double* dst = g.data() + (o * n + start) * inner;
      for (std::size_t i = 0; i < length * inner; ++i) dst[i] += src[i];
    }
  });
}

Tensor select(const Tensor& x, std::size_t axis, std::size_t index) {
  const Shape& s = x.shape();
  require_axis("select", s, axis);
  if (s.rank() == 1) throw DimensionError("select: cannot drop the only axis of " + s.to_string());
  auto dims = s.dims();
  dims.erase(dims.begin() + static_cast<std::ptrdiff_t>(axis));
  return reshape(slice(x, axis, index, 1), Shape(dims));
}

// --- backward -----------------------------------------------------------------

namespace {

// Post-order over the recorded graph: operands precede their consumers.
std::vector<Node*> topological_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

void backward(const Tensor& root, std::span<const double> seed) {
  const NodePtr& r = node_of(root);
  if (!r->requires_grad) throw ContractError("backward: root does not require grad");
  if (seed.size() != r->value.size()) {
    throw DimensionError("backward: seed of length " + std::to_string(seed.size()) + " for root " +
                         r->shape.to_string());
  }
  auto order = topological_order(r.get());
  // Interior gradients are per-pass scratch; only leaves accumulate.
  for (Node* n : order) {
    if (n->backward_fn) n->grad.assign(n->value.size(), 0.0);
  }
  auto& g = r->ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) throw ContractError("backward: loss must be scalar, got " + loss.shape().to_string());
  const double one = 1.0;
  backward(loss, std::span<const double>(&one, 1));
}

}  // namespace fathom
