#include "gpvit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "gpvit/errors.hpp"
#include "gpvit/kernels.hpp"

namespace gpvit {

namespace kp = kernels::parallel;
using detail::Node;

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

void check_finite(std::span<const double> values, const std::string& what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      std::ostringstream os;
      os << "non-finite value " << values[i] << " at index " << i << " in " << what;
      throw NumericError(os.str());
    }
  }
}

namespace {

#if defined(__GLIBC__)
// Every step frees and reallocates the same few-MB activation buffers. By
// default glibc serves those with fresh mmaps, paying a page fault per 4 KB
// on each reuse; keeping them on the heap makes a step about 25% faster.
[[maybe_unused]] const bool heap_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  return true;
}();
#endif

std::shared_ptr<Node> new_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (values.size() != shape_numel(shape)) {
    throw DimensionError("tensor of shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  check_finite(values, "tensor " + shape_str(shape));
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

Tensor make_op(const char* op, Shape shape, std::vector<double> data,
               const std::vector<Tensor>& inputs, std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->leaf = false;
  node->op = op;
  for (const Tensor& t : inputs) node->requires_grad = node->requires_grad || t.requires_grad();
  if (node->requires_grad) {
    for (const Tensor& t : inputs) node->parents.push_back(t.node());
    node->backward = std::move(backward_fn);
  }
  return Tensor::from_node(std::move(node));
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw StateError(std::string(op) + ": undefined tensor");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  require_defined(t, op);
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

void require_scalar(const Tensor& t, const char* op) {
  require_defined(t, op);
  if (t.numel() != 1) {
    throw DimensionError(std::string(op) + ": expected a one-element tensor, got " +
                         shape_str(t.shape()));
  }
}

std::size_t last_dim(const Tensor& t) { return t.shape().back(); }

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  return Tensor(new_leaf(std::move(shape), std::move(values), false));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  return Tensor(new_leaf(std::move(shape), std::move(values), true));
}

Tensor Tensor::zeros(Shape shape) {
  const std::size_t n = shape_numel(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(new_leaf({1}, {value}, requires_grad));
}

Tensor Tensor::from_node(std::shared_ptr<Node> node) { return Tensor(std::move(node)); }

const Shape& Tensor::shape() const {
  require_defined(*this, "shape");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw BoundsError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  }
  return node_->shape[axis];
}

std::size_t Tensor::numel() const {
  require_defined(*this, "numel");
  return node_->data.size();
}

std::span<const double> Tensor::values() const {
  require_defined(*this, "values");
  return node_->data;
}

double Tensor::item() const {
  require_scalar(*this, "item");
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return node_ && node_->leaf; }
const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }
bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw StateError("tensor has no gradient; run backward on a loss that uses it");
  return node_->grad;
}

void Tensor::zero_grad() const {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const {
  require_defined(*this, "detach");
  return constant(node_->shape, node_->data);
}

Tensor Tensor::as_leaf(bool requires_grad) const {
  require_defined(*this, "as_leaf");
  return Tensor(new_leaf(node_->shape, node_->data, requires_grad));
}

// ---------------------------------------------------------------------------
// Elementwise and reductions

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_op("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_op("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (self.parents[0]->requires_grad) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul_scalar(const Tensor& x, double factor) {
  require_defined(x, "mul_scalar");
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v *= factor;
  return make_op("mul_scalar", x.shape(), std::move(out), {x}, [factor](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tensor scale(const Tensor& x, const Tensor& s) {
  require_defined(x, "scale");
  require_scalar(s, "scale");
  const double sv = s.item();
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v *= sv;
  return make_op("scale", x.shape(), std::move(out), {x, s}, [](Node& self) {
    Node& x = *self.parents[0];
    Node& s = *self.parents[1];
    if (x.requires_grad) {
      auto& g = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += s.data[0] * self.grad[i];
    }
    if (s.requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * x.data[i];
      s.grad_buffer()[0] += acc;
    }
  });
}

Tensor convex_mix(const Tensor& out, const Tensor& prev, const Tensor& g) {
  require_same_shape(out, prev, "convex_mix");
  require_scalar(g, "convex_mix");
  const double gv = g.item();
  auto ov = out.values();
  auto pv = prev.values();
  std::vector<double> res(ov.size());
  for (std::size_t i = 0; i < res.size(); ++i) res[i] = gv * ov[i] + (1.0 - gv) * pv[i];
  return make_op("convex_mix", out.shape(), std::move(res), {out, prev, g}, [](Node& self) {
    Node& o = *self.parents[0];
    Node& p = *self.parents[1];
    Node& gate = *self.parents[2];
    const double gv = gate.data[0];
    if (o.requires_grad) {
      auto& d = o.grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += gv * self.grad[i];
    }
    if (p.requires_grad) {
      auto& d = p.grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += (1.0 - gv) * self.grad[i];
    }
    if (gate.requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        acc += self.grad[i] * (o.data[i] - p.data[i]);
      gate.grad_buffer()[0] += acc;
    }
  });
}

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return make_op("sum", {1}, {acc}, {x}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  require_defined(x, "mean");
  return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_op("reshape", std::move(shape), std::move(out), {x}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Products

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_rank(b, 2, "matmul");
  if (a.rank() < 2 || last_dim(a) != b.dim(0)) {
    throw DimensionError("matmul: inner dimensions differ for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t k = b.dim(0);
  const std::size_t n = b.dim(1);
  const std::size_t m = a.numel() / k;
  Shape out_shape = a.shape();
  out_shape.back() = n;
  std::vector<double> out(m * n, 0.0);
  kp::gemm_nn(m, n, k, a.values(), b.values(), out);
  return make_op("matmul", std::move(out_shape), std::move(out), {a, b},
                 [m, n, k](Node& self) {
                   Node& a = *self.parents[0];
                   Node& b = *self.parents[1];
                   if (a.requires_grad) kp::gemm_nt(m, k, n, self.grad, b.data, a.grad_buffer());
                   if (b.requires_grad) kp::gemm_tn(k, n, m, a.data, self.grad, b.grad_buffer());
                 });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_defined(x, "linear");
  require_rank(w, 2, "linear");
  require_rank(bias, 1, "linear");
  if (x.rank() < 2 || last_dim(x) != w.dim(0) || bias.dim(0) != w.dim(1)) {
    throw DimensionError("linear: incompatible shapes x" + shape_str(x.shape()) + " w" +
                         shape_str(w.shape()) + " b" + shape_str(bias.shape()));
  }
  const std::size_t k = w.dim(0);
  const std::size_t n = w.dim(1);
  const std::size_t m = x.numel() / k;
  Shape out_shape = x.shape();
  out_shape.back() = n;
  std::vector<double> out(m * n);
  auto bv = bias.values();
  for (std::size_t i = 0; i < m; ++i) std::copy(bv.begin(), bv.end(), out.begin() + i * n);
  kp::gemm_nn(m, n, k, x.values(), w.values(), out);
  return make_op("linear", std::move(out_shape), std::move(out), {x, w, bias},
                 [m, n, k](Node& self) {
                   Node& x = *self.parents[0];
                   Node& w = *self.parents[1];
                   Node& b = *self.parents[2];
                   if (x.requires_grad) kp::gemm_nt(m, k, n, self.grad, w.data, x.grad_buffer());
                   if (w.requires_grad) kp::gemm_tn(k, n, m, x.data, self.grad, w.grad_buffer());
                   if (b.requires_grad) {
                     auto& g = b.grad_buffer();
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
                   }
                 });
}

Tensor bmm_nt(const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "bmm_nt");
  require_rank(b, 3, "bmm_nt");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2)) {
    throw DimensionError("bmm_nt: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t groups = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
  std::vector<double> out(groups * m * n, 0.0);
  kp::batched_gemm_nt(groups, m, n, k, a.values(), b.values(), out);
  return make_op("bmm_nt", {groups, m, n}, std::move(out), {a, b},
                 [groups, m, n, k](Node& self) {
                   Node& a = *self.parents[0];
                   Node& b = *self.parents[1];
                   if (a.requires_grad)
                     kp::batched_gemm_nn(groups, m, k, n, self.grad, b.data, a.grad_buffer());
                   if (b.requires_grad)
                     kp::batched_gemm_tn(groups, n, k, m, self.grad, a.data, b.grad_buffer());
                 });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t groups = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<double> out(groups * m * n, 0.0);
  kp::batched_gemm_nn(groups, m, n, k, a.values(), b.values(), out);
  return make_op("bmm", {groups, m, n}, std::move(out), {a, b},
                 [groups, m, n, k](Node& self) {
                   Node& a = *self.parents[0];
                   Node& b = *self.parents[1];
                   if (a.requires_grad)
                     kp::batched_gemm_nt(groups, m, k, n, self.grad, b.data, a.grad_buffer());
                   if (b.requires_grad)
                     kp::batched_gemm_tn(groups, k, n, m, a.data, self.grad, b.grad_buffer());
                 });
}

Tensor split_heads(const Tensor& x, std::size_t heads) {
  require_rank(x, 3, "split_heads");
  const std::size_t B = x.dim(0), T = x.dim(1), D = x.dim(2);
  if (heads == 0 || D % heads != 0) {
    throw DimensionError("split_heads: width " + std::to_string(D) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  const std::size_t d = D / heads;
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < T; ++t)
        std::copy_n(xv.data() + (b * T + t) * D + h * d, d,
                    out.data() + ((b * heads + h) * T + t) * d);
  return make_op("split_heads", {B * heads, T, d}, std::move(out), {x},
                 [B, T, D, d, heads](Node& self) {
                   auto& g = self.parents[0]->grad_buffer();
                   for (std::size_t b = 0; b < B; ++b)
                     for (std::size_t h = 0; h < heads; ++h)
                       for (std::size_t t = 0; t < T; ++t) {
                         const double* src = self.grad.data() + ((b * heads + h) * T + t) * d;
                         double* dst = g.data() + (b * T + t) * D + h * d;
                         for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                       }
                 });
}

Tensor merge_heads(const Tensor& x, std::size_t heads) {
  require_rank(x, 3, "merge_heads");
  if (heads == 0 || x.dim(0) % heads != 0) {
    throw DimensionError("merge_heads: leading dim " + std::to_string(x.dim(0)) +
                         " not divisible by " + std::to_string(heads) + " heads");
  }
  const std::size_t B = x.dim(0) / heads, T = x.dim(1), d = x.dim(2), D = d * heads;
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < T; ++t)
        std::copy_n(xv.data() + ((b * heads + h) * T + t) * d, d,
                    out.data() + (b * T + t) * D + h * d);
  return make_op("merge_heads", {B, T, D}, std::move(out), {x},
                 [B, T, D, d, heads](Node& self) {
                   auto& g = self.parents[0]->grad_buffer();
                   for (std::size_t b = 0; b < B; ++b)
                     for (std::size_t h = 0; h < heads; ++h)
                       for (std::size_t t = 0; t < T; ++t) {
                         const double* src = self.grad.data() + (b * T + t) * D + h * d;
                         double* dst = g.data() + ((b * heads + h) * T + t) * d;
                         for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                       }
                 });
}

// ---------------------------------------------------------------------------
// Softmax family

Tensor softmax_temp(const Tensor& logits, const Tensor& tau) {
  require_defined(logits, "softmax_temp");
  require_scalar(tau, "softmax_temp");
  const double tv = tau.item();
  if (!(tv > 0.0)) {
    throw DomainError("softmax_temp: temperature must be positive, got " + std::to_string(tv));
  }
  check_finite(logits.values(), "softmax_temp logits");
  const std::size_t cols = last_dim(logits);
  const std::size_t rows = logits.numel() / cols;
  std::vector<double> out(logits.numel());
  kp::softmax_rows(rows, cols, logits.values(), tv, out);
  return make_op("softmax_temp", logits.shape(), std::move(out), {logits, tau},
                 [rows, cols](Node& self) {
                   Node& x = *self.parents[0];
                   Node& t = *self.parents[1];
                   const double tv = t.data[0];
                   std::vector<double>* dx = x.requires_grad ? &x.grad_buffer() : nullptr;
                   double dtau = 0.0;
                   for (std::size_t r = 0; r < rows; ++r) {
                     const double* y = self.data.data() + r * cols;
                     const double* dy = self.grad.data() + r * cols;
                     const double* in = x.data.data() + r * cols;
                     const double mx = *std::max_element(in, in + cols);
                     double dot = 0.0;
                     for (std::size_t j = 0; j < cols; ++j) dot += dy[j] * y[j];
                     for (std::size_t j = 0; j < cols; ++j) {
                       const double ds = y[j] * (dy[j] - dot);  // d/d(x/tau)
                       if (dx) (*dx)[r * cols + j] += ds / tv;
                       dtau -= ds * (in[j] - mx);
                     }
                   }
                   if (t.requires_grad) t.grad_buffer()[0] += dtau / (tv * tv);
                 });
}

Tensor softmax_temp(const Tensor& logits, double tau) {
  return softmax_temp(logits, Tensor::scalar(tau));
}

Tensor softmax(const Tensor& logits) {
  require_defined(logits, "softmax");
  check_finite(logits.values(), "softmax logits");
  const std::size_t cols = last_dim(logits);
  const std::size_t rows = logits.numel() / cols;
  std::vector<double> out(logits.numel());
  kp::softmax_rows(rows, cols, logits.values(), 1.0, out);
  return make_op("softmax", logits.shape(), std::move(out), {logits}, [rows, cols](Node& self) {
    auto& dx = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.data.data() + r * cols;
      const double* dy = self.grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < cols; ++j) dx[r * cols + j] += y[j] * (dy[j] - dot);
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  if (labels.size() != B) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(B) + " rows");
  }
  check_finite(logits.values(), "cross_entropy logits");
  auto xv = logits.values();
  std::vector<double> probs(xv.size());
  double loss = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const auto label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= C) {
      throw BoundsError("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                        std::to_string(C) + ")");
    }
    const double* in = xv.data() + b * C;
    const double mx = *std::max_element(in, in + C);
    double total = 0.0;
    for (std::size_t j = 0; j < C; ++j) total += std::exp(in[j] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < C; ++j) probs[b * C + j] = std::exp(in[j] - lse);
    loss += lse - in[label];
  }
  loss /= static_cast<double>(B);
  std::vector<std::int32_t> lab(labels.begin(), labels.end());
  return make_op("cross_entropy", {1}, {loss}, {logits},
                 [B, C, probs = std::move(probs), lab = std::move(lab)](Node& self) {
                   auto& dx = self.parents[0]->grad_buffer();
                   const double s = self.grad[0] / static_cast<double>(B);
                   for (std::size_t b = 0; b < B; ++b)
                     for (std::size_t j = 0; j < C; ++j) {
                       const double onehot = static_cast<std::size_t>(lab[b]) == j ? 1.0 : 0.0;
                       dx[b * C + j] += s * (probs[b * C + j] - onehot);
                     }
                 });
}

// ---------------------------------------------------------------------------
// Normalization and activations

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_defined(x, "layer_norm");
  require_rank(gamma, 1, "layer_norm");
  require_rank(beta, 1, "layer_norm");
  const std::size_t D = last_dim(x);
  if (gamma.dim(0) != D || beta.dim(0) != D) {
    throw DimensionError("layer_norm: width " + std::to_string(D) + " vs gamma" +
                         shape_str(gamma.shape()) + " beta" + shape_str(beta.shape()));
  }
  const std::size_t rows = x.numel() / D;
  std::vector<double> out(x.numel());
  std::vector<double> mu(rows), rstd(rows);
  kp::layer_norm_rows(rows, D, x.values(), gamma.values(), beta.values(), eps, out, mu, rstd);
  return make_op(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [rows, D, mu = std::move(mu), rstd = std::move(rstd)](Node& self) {
        Node& x = *self.parents[0];
        Node& gm = *self.parents[1];
        Node& bt = *self.parents[2];
        if (x.requires_grad) {
          auto& dx = x.grad_buffer();
          const double inv_n = 1.0 / static_cast<double>(D);
#pragma omp parallel for schedule(static) if (rows * D >= 32768)
          for (std::int64_t r = 0; r < static_cast<std::int64_t>(rows); ++r) {
            const double* in = x.data.data() + r * D;
            const double* dy = self.grad.data() + r * D;
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < D; ++j) {
              const double xhat = (in[j] - mu[r]) * rstd[r];
              const double dxhat = dy[j] * gm.data[j];
              m1 += dxhat;
              m2 += dxhat * xhat;
            }
            m1 *= inv_n;
            m2 *= inv_n;
            for (std::size_t j = 0; j < D; ++j) {
              const double xhat = (in[j] - mu[r]) * rstd[r];
              dx[r * D + j] += rstd[r] * (dy[j] * gm.data[j] - m1 - xhat * m2);
            }
          }
        }
        if (gm.requires_grad || bt.requires_grad) {
          std::vector<double> dg(D, 0.0), db(D, 0.0);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < D; ++j) {
              const double xhat = (x.data[r * D + j] - mu[r]) * rstd[r];
              dg[j] += self.grad[r * D + j] * xhat;
              db[j] += self.grad[r * D + j];
            }
          if (gm.requires_grad) {
            auto& g = gm.grad_buffer();
            for (std::size_t j = 0; j < D; ++j) g[j] += dg[j];
          }
          if (bt.requires_grad) {
            auto& g = bt.grad_buffer();
            for (std::size_t j = 0; j < D; ++j) g[j] += db[j];
          }
        }
      });
}

Tensor gelu(const Tensor& x) {
  require_defined(x, "gelu");
  std::vector<double> out(x.numel());
  auto slope = std::make_shared<std::vector<double>>(x.numel());
  kp::gelu(x.values(), out, *slope);
  return make_op("gelu", x.shape(), std::move(out), {x}, [slope](Node& self) {
    auto& dx = self.parents[0]->grad_buffer();
    const auto& d = *slope;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i] * d[i];
  });
}

Tensor sigmoid(const Tensor& x) {
  require_defined(x, "sigmoid");
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-xv[i]));
  return make_op("sigmoid", x.shape(), std::move(out), {x}, [](Node& self) {
    auto& dx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const double y = self.data[i];
#ifdef GPVIT_INJECT_GRAD_BUG
      dx[i] += self.grad[i] * y;  // missing (1 - y) factor
#else
      dx[i] += self.grad[i] * y * (1.0 - y);
#endif
    }
  });
}

Tensor exp(const Tensor& x) {
  require_defined(x, "exp");
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(xv[i]);
  return make_op("exp", x.shape(), std::move(out), {x}, [](Node& self) {
    auto& dx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i] * self.data[i];
  });
}

// ---------------------------------------------------------------------------
// Token layout

Tensor concat_tokens(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_tokens: nothing to concatenate");
  for (const Tensor& p : parts) require_rank(p, 3, "concat_tokens");
  const std::size_t B = parts[0].dim(0), D = parts[0].dim(2);
  std::vector<std::size_t> widths;
  std::size_t T = 0;
  for (const Tensor& p : parts) {
    if (p.dim(0) != B || p.dim(2) != D) {
      throw DimensionError("concat_tokens: part " + shape_str(p.shape()) +
                           " does not match batch/width of " + shape_str(parts[0].shape()));
    }
    widths.push_back(p.dim(1));
    T += p.dim(1);
  }
  std::vector<double> out(B * T * D);
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const std::size_t w = widths[i];
      std::copy_n(parts[i].values().data() + b * w * D, w * D,
                  out.data() + (b * T + offset) * D);
      offset += w;
    }
  }
  return make_op("concat_tokens", {B, T, D}, std::move(out), parts,
                 [B, T, D, widths](Node& self) {
                   for (std::size_t b = 0; b < B; ++b) {
                     std::size_t offset = 0;
                     for (std::size_t i = 0; i < widths.size(); ++i) {
                       const std::size_t w = widths[i];
                       Node& p = *self.parents[i];
                       if (p.requires_grad) {
                         auto& g = p.grad_buffer();
                         const double* src = self.grad.data() + (b * T + offset) * D;
                         double* dst = g.data() + b * w * D;
                         for (std::size_t j = 0; j < w * D; ++j) dst[j] += src[j];
                       }
                       offset += w;
                     }
                   }
                 });
}

Tensor slice_tokens(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank(x, 3, "slice_tokens");
  const std::size_t B = x.dim(0), T = x.dim(1), D = x.dim(2);
  if (begin >= end || end > T) {
    throw BoundsError("slice_tokens: range [" + std::to_string(begin) + ", " +
                      std::to_string(end) + ") invalid for " + std::to_string(T) + " tokens");
  }
  const std::size_t w = end - begin;
  std::vector<double> out(B * w * D);
  for (std::size_t b = 0; b < B; ++b)
    std::copy_n(x.values().data() + (b * T + begin) * D, w * D, out.data() + b * w * D);
  return make_op("slice_tokens", {B, w, D}, std::move(out), {x},
                 [B, T, D, begin, w](Node& self) {
                   auto& g = self.parents[0]->grad_buffer();
                   for (std::size_t b = 0; b < B; ++b) {
                     const double* src = self.grad.data() + b * w * D;
                     double* dst = g.data() + (b * T + begin) * D;
                     for (std::size_t j = 0; j < w * D; ++j) dst[j] += src[j];
                   }
                 });
}

Tensor expand_batch(const Tensor& x, std::size_t batch) {
  require_rank(x, 2, "expand_batch");
  if (batch == 0) throw DimensionError("expand_batch: batch must be positive");
  const std::size_t N = x.dim(0), D = x.dim(1);
  std::vector<double> out(batch * N * D);
  for (std::size_t b = 0; b < batch; ++b)
    std::copy(x.values().begin(), x.values().end(), out.begin() + b * N * D);
  return make_op("expand_batch", {batch, N, D}, std::move(out), {x},
                 [batch, N, D](Node& self) {
                   auto& g = self.parents[0]->grad_buffer();
                   for (std::size_t b = 0; b < batch; ++b)
                     for (std::size_t j = 0; j < N * D; ++j) g[j] += self.grad[b * N * D + j];
                 });
}

Tensor add_broadcast(const Tensor& x, const Tensor& e) {
  require_rank(x, 3, "add_broadcast");
  require_rank(e, 2, "add_broadcast");
  if (x.dim(1) != e.dim(0) || x.dim(2) != e.dim(1)) {
    throw DimensionError("add_broadcast: " + shape_str(x.shape()) + " + " +
                         shape_str(e.shape()));
  }
  const std::size_t B = x.dim(0), ND = e.numel();
  std::vector<double> out(x.values().begin(), x.values().end());
  auto ev = e.values();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t j = 0; j < ND; ++j) out[b * ND + j] += ev[j];
  return make_op("add_broadcast", x.shape(), std::move(out), {x, e}, [B, ND](Node& self) {
    Node& x = *self.parents[0];
    Node& e = *self.parents[1];
    if (x.requires_grad) {
      auto& g = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (e.requires_grad) {
      auto& g = e.grad_buffer();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t j = 0; j < ND; ++j) g[j] += self.grad[b * ND + j];
    }
  });
}

Tensor extract_patches(const Tensor& images, std::size_t patch) {
  require_rank(images, 4, "extract_patches");
  const std::size_t B = images.dim(0), H = images.dim(1), W = images.dim(2), C = images.dim(3);
  if (patch == 0 || H % patch != 0 || W % patch != 0) {
    throw DimensionError("extract_patches: image " + shape_str(images.shape()) +
                         " not divisible into " + std::to_string(patch) + "-pixel patches");
  }
  const std::size_t gh = H / patch, gw = W / patch, N = gh * gw, F = patch * patch * C;
  // Maps every output element to its pixel index.
  std::vector<std::size_t> src(B * N * F);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t py = 0; py < gh; ++py)
      for (std::size_t px = 0; px < gw; ++px)
        for (std::size_t y = 0; y < patch; ++y)
          for (std::size_t x = 0; x < patch; ++x)
            for (std::size_t c = 0; c < C; ++c) {
              const std::size_t o = ((b * N + py * gw + px) * patch + y) * patch * C + x * C + c;
              src[o] = ((b * H + py * patch + y) * W + px * patch + x) * C + c;
            }
  auto iv = images.values();
  std::vector<double> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = iv[src[i]];
  return make_op("extract_patches", {B, N, F}, std::move(out), {images},
                 [src = std::move(src)](Node& self) {
                   auto& g = self.parents[0]->grad_buffer();
                   for (std::size_t i = 0; i < src.size(); ++i) g[src[i]] += self.grad[i];
                 });
}

Tensor straight_through(const Tensor& soft, std::vector<double> hard) {
  require_defined(soft, "straight_through");
  if (hard.size() != soft.numel()) {
    throw DimensionError("straight_through: " + std::to_string(hard.size()) +
                         " forward values for " + shape_str(soft.shape()));
  }
  return make_op("straight_through", soft.shape(), std::move(hard), {soft}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Tape

ComputationTape ComputationTape::record(const Tensor& root) {
  ComputationTape tape;
  if (!root.defined()) return tape;
  tape.root_ = root.node();
  if (!root.requires_grad()) return tape;
  std::unordered_set<Node*> seen;
  // Iterative post-order DFS; a node is emitted after all of its parents.
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      tape.order_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

void ComputationTape::replay_backward() const {
  if (order_.empty()) throw StateError("backward: tape is empty (root does not require grad)");
  for (Node* n : order_)
    if (!n->leaf) n->grad.clear();
  root_->grad.assign(root_->data.size(), 1.0);
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw StateError("backward: undefined tensor");
  if (loss.numel() != 1) {
    throw StateError("backward: loss must be a single value, got " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw StateError("backward: loss is detached from the tape (nothing requires grad)");
  }
  ComputationTape::record(loss).replay_backward();
}

}  // namespace gpvit
