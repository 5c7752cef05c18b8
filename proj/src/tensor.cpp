#include "cardiofuse/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string_view>
#include <unordered_set>
#include <utility>

#include "cardiofuse/errors.hpp"

namespace cardiofuse {

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace detail {

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

}  // namespace detail

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

thread_local bool g_grad_disabled = false;

void require_finite(const std::vector<double>& values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) throw ContractError(std::string("non-finite value produced by ") + op);
  }
}

void validate_shape(const Shape& shape, std::size_t data_size) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + to_string(shape));
  }
  if (element_count(shape) != data_size) {
    throw DimensionError("shape " + to_string(shape) + " needs " + std::to_string(element_count(shape)) +
                         " values, got " + std::to_string(data_size));
  }
}

/// Builds an op output. The backward closure and parent links are kept only
/// when some parent participates in differentiation.
Tensor make_result(const char* op, Shape shape, std::vector<double> data, std::vector<NodePtr> parents,
                   std::function<void(Node&)> backward_fn) {
  require_finite(data, op);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  const bool needs_grad =
      !g_grad_disabled && std::any_of(parents.begin(), parents.end(), [](const NodePtr& p) { return p->requires_grad; });
  if (needs_grad) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward_fn);
  }
  return Tensor::from_node(std::move(node));
}

const NodePtr& checked(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor operand");
  return t.node();
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         to_string(t.shape()));
  }
}

template <typename Forward, typename Derivative>
Tensor unary(const char* op, const Tensor& a, Forward forward, Derivative derivative) {
  const NodePtr& pa = checked(a, op);
  std::vector<double> out(pa->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(pa->data[i]);
  return make_result(op, pa->shape, std::move(out), {pa}, [derivative](Node& self) {
    Node& in = *self.parents[0];
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * derivative(in.data[i], self.data[i]);
  });
}

enum class BinaryKind { kAdd, kSub, kMul };

Tensor binary(const char* op, BinaryKind kind, const Tensor& a, const Tensor& b) {
  const NodePtr& pa = checked(a, op);
  const NodePtr& pb = checked(b, op);
  const bool a_scalar = pa->data.size() == 1;
  const bool b_scalar = pb->data.size() == 1;
  Shape shape;
  if (pa->shape == pb->shape) {
    shape = pa->shape;
  } else if (b_scalar) {
    shape = pa->shape;
  } else if (a_scalar) {
    shape = pb->shape;
  } else {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(pa->shape) + " vs " +
                         to_string(pb->shape));
  }
  const std::size_t n = element_count(shape);
  const bool broadcast_a = a_scalar && n != 1;
  const bool broadcast_b = b_scalar && n != 1;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = pa->data[broadcast_a ? 0 : i];
    const double y = pb->data[broadcast_b ? 0 : i];
    switch (kind) {
      case BinaryKind::kAdd: out[i] = x + y; break;
      case BinaryKind::kSub: out[i] = x - y; break;
      case BinaryKind::kMul: out[i] = x * y; break;
    }
  }
  return make_result(op, std::move(shape), std::move(out), {pa, pb},
                     [kind, broadcast_a, broadcast_b](Node& self) {
                       Node& na = *self.parents[0];
                       Node& nb = *self.parents[1];
                       const std::size_t count = self.grad.size();
                       if (na.requires_grad) {
                         auto& ga = na.grad_buffer();
                         for (std::size_t i = 0; i < count; ++i) {
                           const double local = kind == BinaryKind::kMul ? nb.data[broadcast_b ? 0 : i] : 1.0;
                           ga[broadcast_a ? 0 : i] += self.grad[i] * local;
                         }
                       }
                       if (nb.requires_grad) {
                         auto& gb = nb.grad_buffer();
                         for (std::size_t i = 0; i < count; ++i) {
                           double local = 1.0;
                           if (kind == BinaryKind::kSub) local = -1.0;
                           if (kind == BinaryKind::kMul) local = na.data[broadcast_a ? 0 : i];
                           gb[broadcast_b ? 0 : i] += self.grad[i] * local;
                         }
                       }
                     });
}

struct AxisSplit {
  std::size_t outer;
  std::size_t extent;
  std::size_t inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Tensor reduce_axis(const char* op, const Tensor& a, std::size_t axis, double factor_scale) {
  const NodePtr& pa = checked(a, op);
  if (axis >= pa->shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                         to_string(pa->shape));
  }
  const AxisSplit s = split_axis(pa->shape, axis);
  const double factor = factor_scale > 0 ? 1.0 / static_cast<double>(s.extent) : 1.0;
  Shape out_shape;
  for (std::size_t i = 0; i < pa->shape.size(); ++i) {
    if (i != axis) out_shape.push_back(pa->shape[i]);
  }
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < s.extent; ++j) {
      const double* src = pa->data.data() + (o * s.extent + j) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  }
  for (double& v : out) v *= factor;
  return make_result(op, std::move(out_shape), std::move(out), {pa}, [s, factor](Node& self) {
    Node& in = *self.parents[0];
    auto& g = in.grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      const double* up = self.grad.data() + o * s.inner;
      for (std::size_t j = 0; j < s.extent; ++j) {
        double* dst = g.data() + (o * s.extent + j) * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) dst[i] += up[i] * factor;
      }
    }
  });
}

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_disabled) { g_grad_disabled = true; }
NoGradGuard::~NoGradGuard() { g_grad_disabled = previous_; }

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  validate_shape(shape, data.size());
  require_finite(data, "tensor construction");
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = element_count(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = element_count(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

const Shape& Tensor::shape() const { return checked(*this, "shape")->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + to_string(s));
  return s[axis];
}

std::size_t Tensor::size() const { return checked(*this, "size")->data.size(); }

std::span<const double> Tensor::data() const { return checked(*this, "data")->data; }

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return checked(*this, "requires_grad")->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) throw ContractError("requires_grad can only be changed on leaf tensors");
  node_->requires_grad = flag;
}

bool Tensor::is_leaf() const { return std::string_view(checked(*this, "is_leaf")->op) == "leaf"; }

bool Tensor::has_grad() const { return !checked(*this, "has_grad")->grad.empty(); }

std::span<const double> Tensor::grad() const { return checked(*this, "grad")->grad; }

void Tensor::zero_grad() { checked(*this, "zero_grad")->grad.clear(); }

std::span<double> Tensor::mutable_data() {
  if (!is_leaf()) throw ContractError(std::string("cannot mutate output of op '") + node_->op + "'");
  return node_->data;
}

Tensor Tensor::detach() const {
  const NodePtr& n = checked(*this, "detach");
  return Tensor(n->shape, n->data);
}

const char* Tensor::op_name() const { return checked(*this, "op_name")->op; }

Tape Tape::record(const Tensor& root) {
  Tape tape;
  const NodePtr& start = checked(root, "Tape::record");
  if (!start->requires_grad) return tape;
  std::unordered_set<const Node*> visited;
  // Iterative post-order DFS; a node is emitted after all of its parents.
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  stack.emplace_back(start, 0);
  visited.insert(start.get());
  while (!stack.empty()) {
    auto& [node, next_parent] = stack.back();
    if (next_parent < node->parents.size()) {
      NodePtr parent = node->parents[next_parent++];
      if (parent->requires_grad && visited.insert(parent.get()).second) stack.emplace_back(std::move(parent), 0);
    } else {
      tape.nodes_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

std::vector<std::string> Tape::op_names() const {
  std::vector<std::string> names;
  names.reserve(nodes_.size());
  for (const auto& n : nodes_) names.emplace_back(n->op);
  return names;
}

void Tape::run_backward() const {
  if (nodes_.empty()) return;
  // Intermediate gradients are recomputed from scratch; leaf gradients accumulate.
  for (const auto& n : nodes_) {
    if (n->backward) n->grad.assign(n->data.size(), 0.0);
  }
  Node& root = *nodes_.back();
  root.grad_buffer()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (n.backward && !n.grad.empty()) n.backward(n);
  }
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward: undefined loss tensor");
  if (loss.size() != 1) throw ContractError("backward: loss must be scalar, got shape " + to_string(loss.shape()));
  Tape::record(loss).run_backward();
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const NodePtr& pa = checked(a, "matmul");
  const NodePtr& pb = checked(b, "matmul");
  if (pa->shape.size() != 2 || pb->shape.size() != 2 || pa->shape[1] != pb->shape[0]) {
    throw DimensionError("matmul: incompatible shapes " + to_string(pa->shape) + " and " + to_string(pb->shape));
  }
  const std::size_t n = pa->shape[0], k = pa->shape[1], m = pb->shape[1];
  std::vector<double> out(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = pa->data[i * k + p];
      const double* brow = pb->data.data() + p * m;
      double* orow = out.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
    }
  }
  return make_result("matmul", {n, m}, std::move(out), {pa, pb}, [n, k, m](Node& self) {
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    const double* g = self.grad.data();
    if (na.requires_grad) {
      auto& ga = na.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = nb.data.data() + p * m;
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += g[i * m + j] * brow[j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (nb.requires_grad) {
      auto& gb = nb.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = na.data[i * k + p];
          double* grow = gb.data() + p * m;
          for (std::size_t j = 0; j < m; ++j) grow[j] += aip * g[i * m + j];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  const NodePtr& pa = checked(a, "transpose");
  require_rank(a, 2, "transpose");
  const std::size_t r = pa->shape[0], c = pa->shape[1];
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = pa->data[i * c + j];
  return make_result("transpose", {c, r}, std::move(out), {pa}, [r, c](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) { return binary("add", BinaryKind::kAdd, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary("sub", BinaryKind::kSub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary("mul", BinaryKind::kMul, a, b); }

Tensor scale(const Tensor& a, double factor) {
  return unary("scale", a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double offset) {
  return unary("add_scalar", a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) {
  return unary("neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor relu(const Tensor& a) {
  return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor sigmoid(const Tensor& a) {
  return unary("sigmoid", a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor log(const Tensor& a) {
  for (double v : checked(a, "log")->data) {
    if (!(v > 0.0)) throw DomainError("log: non-positive argument " + std::to_string(v));
  }
  return unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor square(const Tensor& a) {
  return unary("square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor sqrt(const Tensor& a) {
  for (double v : checked(a, "sqrt")->data) {
    if (!(v > 0.0)) throw DomainError("sqrt: argument must be positive, got " + std::to_string(v));
  }
  return unary("sqrt", a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor reciprocal(const Tensor& a) {
  for (double v : checked(a, "reciprocal")->data) {
    if (v == 0.0) throw DomainError("reciprocal: zero argument");
  }
  return unary("reciprocal", a, [](double x) { return 1.0 / x; }, [](double, double y) { return -y * y; });
}

namespace {

Tensor rowwise(const char* op, bool multiply, const Tensor& matrix, const Tensor& row) {
  const NodePtr& pm = checked(matrix, op);
  const NodePtr& pr = checked(row, op);
  if (pm->shape.size() != 2 || pr->shape.size() != 1 || pr->shape[0] != pm->shape[1]) {
    throw DimensionError(std::string(op) + ": expected N×M and M, got " + to_string(pm->shape) + " and " +
                         to_string(pr->shape));
  }
  const std::size_t n = pm->shape[0], m = pm->shape[1];
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      out[i * m + j] = multiply ? pm->data[i * m + j] * pr->data[j] : pm->data[i * m + j] + pr->data[j];
  return make_result(op, {n, m}, std::move(out), {pm, pr}, [n, m, multiply](Node& self) {
    Node& nm = *self.parents[0];
    Node& nr = *self.parents[1];
    if (nm.requires_grad) {
      auto& g = nm.grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) g[i * m + j] += self.grad[i * m + j] * (multiply ? nr.data[j] : 1.0);
    }
    if (nr.requires_grad) {
      auto& g = nr.grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) g[j] += self.grad[i * m + j] * (multiply ? nm.data[i * m + j] : 1.0);
    }
  });
}

}  // namespace

Tensor add_rowwise(const Tensor& matrix, const Tensor& row) { return rowwise("add_rowwise", false, matrix, row); }
Tensor mul_rowwise(const Tensor& matrix, const Tensor& row) { return rowwise("mul_rowwise", true, matrix, row); }

Tensor concat_cols(const Tensor& left, const Tensor& right) {
  const NodePtr& pl = checked(left, "concat_cols");
  const NodePtr& pr = checked(right, "concat_cols");
  if (pl->shape.size() != 2 || pr->shape.size() != 2 || pl->shape[0] != pr->shape[0]) {
    throw DimensionError("concat_cols: row counts differ, " + to_string(pl->shape) + " and " + to_string(pr->shape));
  }
  const std::size_t n = pl->shape[0], a = pl->shape[1], b = pr->shape[1];
  std::vector<double> out(n * (a + b));
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(pl->data.begin() + i * a, a, out.begin() + i * (a + b));
    std::copy_n(pr->data.begin() + i * b, b, out.begin() + i * (a + b) + a);
  }
  return make_result("concat_cols", {n, a + b}, std::move(out), {pl, pr}, [n, a, b](Node& self) {
    Node& nl = *self.parents[0];
    Node& nr = *self.parents[1];
    for (std::size_t i = 0; i < n; ++i) {
      const double* g = self.grad.data() + i * (a + b);
      if (nl.requires_grad) {
        double* dst = nl.grad_buffer().data() + i * a;
        for (std::size_t j = 0; j < a; ++j) dst[j] += g[j];
      }
      if (nr.requires_grad) {
        double* dst = nr.grad_buffer().data() + i * b;
        for (std::size_t j = 0; j < b; ++j) dst[j] += g[a + j];
      }
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  const NodePtr& pa = checked(a, "reshape");
  validate_shape(shape, pa->data.size());
  return make_result("reshape", std::move(shape), pa->data, {pa}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> indices) {
  const NodePtr& pa = checked(a, "gather_rows");
  if (pa->shape.empty()) throw DimensionError("gather_rows: scalar input");
  if (indices.empty()) throw DimensionError("gather_rows: empty index list");
  const std::size_t rows = pa->shape[0];
  const std::size_t stride = pa->data.size() / rows;
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  std::vector<double> out(idx.size() * stride);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= rows) throw DimensionError("gather_rows: index " + std::to_string(idx[r]) + " out of range");
    std::copy_n(pa->data.begin() + idx[r] * stride, stride, out.begin() + r * stride);
  }
  Shape shape = pa->shape;
  shape[0] = idx.size();
  return make_result("gather_rows", std::move(shape), std::move(out), {pa}, [idx, stride](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < stride; ++j) g[idx[r] * stride + j] += self.grad[r * stride + j];
  });
}

Tensor sum(const Tensor& a) {
  const NodePtr& pa = checked(a, "sum");
  double total = 0.0;
  for (double v : pa->data) total += v;
  return make_result("sum", {}, {total}, {pa}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  const NodePtr& pa = checked(a, "mean");
  double total = 0.0;
  for (double v : pa->data) total += v;
  const double inv = 1.0 / static_cast<double>(pa->data.size());
  return make_result("mean", {}, {total * inv}, {pa}, [inv](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (double& v : g) v += self.grad[0] * inv;
  });
}

Tensor sum(const Tensor& a, std::size_t axis) { return reduce_axis("sum_axis", a, axis, 0.0); }
Tensor mean(const Tensor& a, std::size_t axis) { return reduce_axis("mean_axis", a, axis, 1.0); }

Tensor conv1d(const Tensor& x, const Tensor& kernels, std::size_t stride) { return conv1d(x, kernels, Tensor(), stride); }

Tensor conv1d(const Tensor& x, const Tensor& kernels, const Tensor& bias, std::size_t stride) {
  const NodePtr& px = checked(x, "conv1d");
  const NodePtr& pk = checked(kernels, "conv1d");
  if (stride == 0) throw ConfigError("conv1d: stride must be >= 1");
  if (pk->shape.size() != 3) throw DimensionError("conv1d: kernels must be C_out×C_in×W, got " + to_string(pk->shape));
  const bool batched = px->shape.size() == 3;
  if (!batched && px->shape.size() != 2) {
    throw DimensionError("conv1d: input must be C×L or N×C×L, got " + to_string(px->shape));
  }
  const std::size_t batch = batched ? px->shape[0] : 1;
  const std::size_t c_in = px->shape[batched ? 1 : 0];
  const std::size_t len = px->shape[batched ? 2 : 1];
  const std::size_t c_out = pk->shape[0], width = pk->shape[2];
  if (pk->shape[1] != c_in) {
    throw DimensionError("conv1d: input " + to_string(px->shape) + " has " + std::to_string(c_in) +
                         " channels but kernels " + to_string(pk->shape) + " expect " + std::to_string(pk->shape[1]));
  }
  if (width > len) {
    throw ConfigError("conv1d: kernel width " + std::to_string(width) + " exceeds sequence length " +
                      std::to_string(len));
  }
  NodePtr pb;
  if (bias.defined()) {
    pb = bias.node();
    if (pb->shape != Shape{c_out}) throw DimensionError("conv1d: bias must have shape [" + std::to_string(c_out) + "]");
  }
  const std::size_t out_len = (len - width) / stride + 1;
  std::vector<double> out(batch * c_out * out_len, 0.0);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t co = 0; co < c_out; ++co) {
      double* dst = out.data() + (n * c_out + co) * out_len;
      if (pb) std::fill_n(dst, out_len, pb->data[co]);
      for (std::size_t ci = 0; ci < c_in; ++ci) {
        const double* src = px->data.data() + (n * c_in + ci) * len;
        const double* w = pk->data.data() + (co * c_in + ci) * width;
        for (std::size_t k = 0; k < width; ++k) {
          const double wk = w[k];
          const double* s = src + k;
          for (std::size_t j = 0; j < out_len; ++j) dst[j] += wk * s[j * stride];
        }
      }
    }
  }
  Shape shape = batched ? Shape{batch, c_out, out_len} : Shape{c_out, out_len};
  std::vector<NodePtr> parents{px, pk};
  if (pb) parents.push_back(pb);
  return make_result("conv1d", std::move(shape), std::move(out), std::move(parents),
                     [=](Node& self) {
                       Node& nx = *self.parents[0];
                       Node& nk = *self.parents[1];
                       const double* g = self.grad.data();
                       if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
                         auto& gb = self.parents[2]->grad_buffer();
                         for (std::size_t n = 0; n < batch; ++n)
                           for (std::size_t co = 0; co < c_out; ++co) {
                             const double* gr = g + (n * c_out + co) * out_len;
                             double acc = 0.0;
                             for (std::size_t j = 0; j < out_len; ++j) acc += gr[j];
                             gb[co] += acc;
                           }
                       }
                       double* gx = nx.requires_grad ? nx.grad_buffer().data() : nullptr;
                       double* gk = nk.requires_grad ? nk.grad_buffer().data() : nullptr;
                       if (!gx && !gk) return;
                       for (std::size_t n = 0; n < batch; ++n) {
                         for (std::size_t co = 0; co < c_out; ++co) {
                           const double* gr = g + (n * c_out + co) * out_len;
                           for (std::size_t ci = 0; ci < c_in; ++ci) {
                             const std::size_t xoff = (n * c_in + ci) * len;
                             const std::size_t koff = (co * c_in + ci) * width;
                             for (std::size_t k = 0; k < width; ++k) {
                               if (gk) {
                                 const double* s = nx.data.data() + xoff + k;
                                 double acc = 0.0;
                                 for (std::size_t j = 0; j < out_len; ++j) acc += gr[j] * s[j * stride];
                                 gk[koff + k] += acc;
                               }
                               if (gx) {
                                 const double wk = nk.data[koff + k];
                                 double* d = gx + xoff + k;
                                 for (std::size_t j = 0; j < out_len; ++j) d[j * stride] += wk * gr[j];
                               }
                             }
                           }
                         }
                       }
                     });
}

Tensor bce_with_logits_mean(const Tensor& logits, const Tensor& targets) {
  const NodePtr& pl = checked(logits, "bce_with_logits");
  const NodePtr& pt = checked(targets, "bce_with_logits");
  if (pl->shape != pt->shape) {
    throw DimensionError("bce_with_logits: logits " + to_string(pl->shape) + " vs targets " + to_string(pt->shape));
  }
  const std::size_t n = pl->data.size();
  const double inv = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = pl->data[i];
    const double y = pt->data[i];
    total += std::max(t, 0.0) - t * y + std::log1p(std::exp(-std::abs(t)));
  }
  std::vector<double> target_copy = pt->data;
  return make_result("bce_with_logits", {}, {total * inv}, {pl}, [inv, target_copy](Node& self) {
    Node& nl = *self.parents[0];
    auto& g = nl.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[0] * inv * (stable_sigmoid(nl.data[i]) - target_copy[i]);
    }
  });
}

}  // namespace cardiofuse
