#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace gpvit {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents.
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Row-major 64-bit dense tensor with reverse-mode autodiff.
///
/// A Tensor is a cheap handle; copies share the underlying node. Values are
/// fixed at creation, only the gradient buffer is ever written afterwards.
/// Results of ops whose inputs all have `requires_grad() == false` are
/// plain constants and are not recorded.
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor parameter(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  std::span<const double> values() const;
  double item() const;
  double operator[](std::size_t i) const { return values()[i]; }

  bool requires_grad() const;
  bool is_leaf() const;
  const char* op_name() const;
  bool has_grad() const;
  /// Throws StateError when no gradient has been accumulated.
  std::span<const double> grad() const;
  void zero_grad() const;

  /// Constant copy cut from the tape.
  Tensor detach() const;
  /// Same values as a fresh trainable (or frozen) leaf.
  Tensor as_leaf(bool requires_grad) const;

  static Tensor from_node(std::shared_ptr<detail::Node> node);
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Throws NumericError naming `what` when any value is NaN or infinite.
void check_finite(std::span<const double> values, const std::string& what);

// ---------------------------------------------------------------------------
// Ops. Token tensors are [B × T × D]; "rows" means all leading dims folded.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul_scalar(const Tensor& x, double factor);
/// x · s for a one-element tensor s.
Tensor scale(const Tensor& x, const Tensor& s);
/// g·out + (1 − g)·prev, evaluated exactly in that form; g is one element.
Tensor convex_mix(const Tensor& out, const Tensor& prev, const Tensor& g);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

/// a[.. × k] · b[k × n]; leading dims of `a` are treated as rows.
Tensor matmul(const Tensor& a, const Tensor& b);
/// x · w + bias, bias broadcast over rows.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
/// a[G × m × k] · b[G × n × k]ᵀ → [G × m × n].
Tensor bmm_nt(const Tensor& a, const Tensor& b);
/// a[G × m × k] · b[G × k × n] → [G × m × n].
Tensor bmm(const Tensor& a, const Tensor& b);
/// [B × T × D] → [B·h × T × D/h].
Tensor split_heads(const Tensor& x, std::size_t heads);
/// [B·h × T × d] → [B × T × h·d].
Tensor merge_heads(const Tensor& x, std::size_t heads);

/// Row-wise softmax(logits / tau) over the last dim, max-subtracted.
Tensor softmax_temp(const Tensor& logits, const Tensor& tau);
Tensor softmax_temp(const Tensor& logits, double tau);
/// Plain row-wise softmax, no temperature involved at all.
Tensor softmax(const Tensor& logits);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
/// Mean cross-entropy of logits [B × C] against integer labels.
Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels);

/// Concatenate [B × Ti × D] parts along the token axis.
Tensor concat_tokens(const std::vector<Tensor>& parts);
/// Tokens [begin, end) of a [B × T × D] tensor.
Tensor slice_tokens(const Tensor& x, std::size_t begin, std::size_t end);
/// [N × D] → [B × N × D] by repetition.
Tensor expand_batch(const Tensor& x, std::size_t batch);
/// x[B × N × D] + e[N × D].
Tensor add_broadcast(const Tensor& x, const Tensor& e);
/// images [B × H × W × C] → [B × N × P·P·C], patches in raster order.
Tensor extract_patches(const Tensor& images, std::size_t patch);

/// Forward value `hard`, gradient passed straight to `soft` (same shape).
Tensor straight_through(const Tensor& soft, std::vector<double> hard);

// ---------------------------------------------------------------------------

/// The recorded graph behind a scalar, in topological order (parents first).
class ComputationTape {
 public:
  static ComputationTape record(const Tensor& root);

  const std::vector<detail::Node*>& order() const { return order_; }
  std::size_t size() const { return order_.size(); }
  /// Seeds d(root)/d(root) = 1 and runs every node's backward once in
  /// reverse order.
  void replay_backward() const;

 private:
  std::vector<detail::Node*> order_;
  std::shared_ptr<detail::Node> root_;
};

/// Populates grads of every requires_grad node reachable from `loss`.
/// Throws StateError if `loss` is not a one-element tensor on the tape.
void backward(const Tensor& loss);

}  // namespace gpvit
