#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cardiofuse {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

/// One recorded value in the define-by-run graph. Leaves have no parents.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient flows here
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense row-major float64 array participating in reverse-mode differentiation.
///
/// A Tensor is a cheap handle; copies share the underlying node. Values are
/// fixed once an op has produced them. Only leaves (parameters, inputs) may be
/// mutated in place, and only through `mutable_data`.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> data() const;
  double operator[](std::size_t flat_index) const { return data()[flat_index]; }
  /// Value of a single-element tensor.
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// In-place access for leaves. Throws ContractError on op outputs.
  std::span<double> mutable_data();
  /// Leaf copy of the current values with no graph history.
  Tensor detach() const;

  const char* op_name() const;
  bool same_node(const Tensor& other) const noexcept { return node_ == other.node_; }
  const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Nodes reachable from a root that carry gradients, in topological order
/// (every node's inputs precede it).
class Tape {
 public:
  static Tape record(const Tensor& root);

  std::size_t size() const noexcept { return nodes_.size(); }
  std::vector<std::string> op_names() const;
  /// Seeds d(root)/d(root) = 1 and visits each node once in reverse order.
  void run_backward() const;

 private:
  std::vector<std::shared_ptr<detail::Node>> nodes_;
};

/// While alive, ops on this thread record no graph (inference mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Accumulates d(loss)/d(t) into every requires_grad tensor reachable from `loss`.
void backward(const Tensor& loss);

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Elementwise. Binary ops require equal shapes unless one side has a single element.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor reciprocal(const Tensor& a);

double stable_sigmoid(double x);

// Row-vector operands applied to every row of an N×M matrix.
Tensor add_rowwise(const Tensor& matrix, const Tensor& row);
Tensor mul_rowwise(const Tensor& matrix, const Tensor& row);

Tensor concat_cols(const Tensor& left, const Tensor& right);
Tensor reshape(const Tensor& a, Shape shape);
/// Rows `indices` of the leading axis, as a new tensor.
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> indices);

// Reductions. The axis forms drop the reduced axis from the shape.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a, std::size_t axis);

/// Valid (unpadded) cross-correlation. `x` is C_in×L or N×C_in×L, `kernels`
/// is C_out×C_in×W, output length floor((L-W)/stride)+1.
Tensor conv1d(const Tensor& x, const Tensor& kernels, std::size_t stride);
/// As above, plus a per-output-channel bias of length C_out.
Tensor conv1d(const Tensor& x, const Tensor& kernels, const Tensor& bias, std::size_t stride);

/// Mean over all elements of max(t,0) - t*y + log(1+exp(-|t|)). `targets` is
/// treated as a constant; its gradient is never computed.
Tensor bce_with_logits_mean(const Tensor& logits, const Tensor& targets);

}  // namespace cardiofuse
