#pragma once

// Minimal reverse-mode automatic differentiation over dense float64 arrays.
//
// Graphs are built eagerly: every operation computes its value immediately and,
// when any input requires a gradient, records a closure that maps the output
// gradient to input gradients. backward() walks the recorded graph in reverse
// topological order. A graph must stay on one thread while it is being built
// or differentiated; distinct graphs share nothing.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace grerank::diff {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array. Rank 0 (shape {}) is a scalar holding one entry.
class Array {
 public:
  Array() : data_(1, 0.0) {}
  explicit Array(Shape shape, double fill = 0.0);
  Array(Shape shape, std::vector<double> data);

  static Array scalar(double v);
  static Array vector(std::vector<double> v);
  static Array matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const;

  std::span<const double> values() const noexcept { return data_; }
  std::span<double> values() noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double at(std::size_t row, std::size_t col) const;
  double& at(std::size_t row, std::size_t col);

  /// The single entry of a size-1 array.
  double item() const;
  bool all_finite() const noexcept;

  friend bool operator==(const Array&, const Array&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

namespace detail {
struct NodeData;
}

/// Handle to a node of the computation graph. Copies share the node.
class Node {
 public:
  Node() = default;

  bool valid() const noexcept { return data_ != nullptr; }
  const Array& value() const;
  const Array& grad() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  double item() const { return value().item(); }
  bool requires_grad() const;
  std::string_view op() const;

  /// Parents in the order the producing operation received them. Nodes that
  /// do not require a gradient keep no parent references.
  std::vector<Node> parents() const;

  /// Writable value of a leaf; used by optimizers to update parameters in place.
  Array& mutable_value();
  /// Zeroes this node's accumulated gradient.
  void zero_grad();

  /// Identity comparison (same graph node).
  friend bool operator==(const Node& a, const Node& b) noexcept { return a.data_ == b.data_; }

 private:
  explicit Node(std::shared_ptr<detail::NodeData> data) : data_(std::move(data)) {}
  std::shared_ptr<detail::NodeData> data_;

  friend struct detail::NodeData;
  friend Node make_node(std::string_view, Array, std::vector<Node>,
                        std::function<void(const Node&, const Array&, std::span<Array*>)>);
  friend void backward(const Node&);
  friend void reset_grad(const Node&);
  friend std::vector<Node> topological_order(const Node&);
};

/// Backward closure: (output node, output gradient, parent gradient buffers).
/// A parent buffer is null when that parent does not require a gradient.
using BackwardFn = std::function<void(const Node&, const Array&, std::span<Array*>)>;

/// Low-level constructor used by the operations below and by callers that
/// need a custom differentiable primitive. The closure is dropped when no
/// parent requires a gradient.
Node make_node(std::string_view op, Array value, std::vector<Node> parents, BackwardFn fn);

/// Leaf that accumulates a gradient.
Node parameter(Array value);
/// Leaf that does not.
Node constant(Array value);
Node constant(double value);

// Elementwise binary operations. Operands must share a shape, or one of them
// must hold a single entry (broadcast as a scalar).
Node add(const Node& a, const Node& b);
Node sub(const Node& a, const Node& b);
Node mul(const Node& a, const Node& b);
/// Throws DomainError naming the first zero divisor entry.
Node divide(const Node& a, const Node& b);

Node operator+(const Node& a, const Node& b);
Node operator-(const Node& a, const Node& b);
Node operator*(const Node& a, const Node& b);
Node operator/(const Node& a, const Node& b);

Node scale(const Node& a, double c);
Node add_scalar(const Node& a, double c);
Node neg(const Node& a);

Node exp(const Node& a);
/// Throws DomainError naming the first nonpositive entry.
Node log(const Node& a);
Node tanh(const Node& a);
Node sigmoid(const Node& a);
Node sqrt(const Node& a);

/// Matrix product of rank-2 operands, or rank-1 × rank-2 (row vector) and
/// rank-2 × rank-1 (column vector) contractions.
Node matmul(const Node& a, const Node& b);
Node transpose(const Node& a);

/// Sum over one axis; the axis is removed from the shape.
Node sum(const Node& a, std::size_t axis);
/// Sum over every entry; result is a scalar.
Node sum(const Node& a);
Node mean(const Node& a);
Node mean(const Node& a, std::size_t axis);
/// Largest entry, as a scalar. The gradient goes to the lowest-index maximiser.
Node max(const Node& a);

/// Softmax along an axis, stabilised by subtracting the maximum of each slice.
Node softmax(const Node& a, std::size_t axis);

/// log(softmax(a)) along an axis, computed without forming the softmax.
Node log_softmax(const Node& a, std::size_t axis);
/// log(sum(exp(a))) over every entry; result is a scalar.
Node logsumexp(const Node& a);

/// Elementwise maximum of same-shaped arguments. Each output entry's gradient
/// is routed entirely to the argument that attained the maximum; ties go to
/// the lowest-index argument.
Node max_elementwise(std::span<const Node> args);
Node max_elementwise(std::initializer_list<Node> args);

Node reshape(const Node& a, Shape shape);
/// Concatenate along an axis; all other extents must agree.
Node concat(std::span<const Node> parts, std::size_t axis);
Node concat(std::initializer_list<Node> parts, std::size_t axis);

/// Rows of a rank-2 table. A negative index yields a zero row.
Node gather_rows(const Node& table, std::span<const std::ptrdiff_t> rows);
/// Flat entries a[indices[i]].
Node take(const Node& a, std::span<const std::size_t> indices);
/// out[indices[i]] += a[i] for a rank-1 a; result has `size` entries. Each
/// slot sums its terms in ascending order, independent of input order.
Node index_add(const Node& a, std::span<const std::size_t> indices, std::size_t size);
/// Contiguous row range [begin, end) of a rank-2 array, or entries of a rank-1 array.
Node slice(const Node& a, std::size_t begin, std::size_t end);

/// Accumulates d(root)/d(node) into every reachable node that requires a
/// gradient. Root must hold exactly one entry. Repeated calls accumulate.
void backward(const Node& root);
/// Zeroes the gradient of every node reachable from root.
void reset_grad(const Node& root);
/// Parents-before-children ordering of every node reachable from root.
/// Throws ContractError if the graph contains a cycle.
std::vector<Node> topological_order(const Node& root);

}  // namespace grerank::diff
