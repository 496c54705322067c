#include "grerank/diff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <utility>

#include "grerank/error.hpp"

namespace grerank::diff {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

void check_extents(const Shape& shape) {
  for (std::size_t e : shape) {
    if (e == 0) throw ContractError("array extents must be positive, got " + shape_string(shape));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Array

Array::Array(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_size(shape_), fill);
}

Array::Array(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (data_.size() != shape_size(shape_)) {
    throw ContractError("data length " + std::to_string(data_.size()) + " does not match shape " +
                        shape_string(shape_));
  }
}

Array Array::scalar(double v) { return Array(Shape{}, std::vector<double>{v}); }

Array Array::vector(std::vector<double> v) {
  const std::size_t n = v.size();
  return Array(Shape{n}, std::move(v));
}

Array Array::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Array(Shape{rows, cols}, std::move(data));
}

std::size_t Array::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ContractError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
  }
  return shape_[axis];
}

double Array::at(std::size_t row, std::size_t col) const { return data_[row * shape_[1] + col]; }
double& Array::at(std::size_t row, std::size_t col) { return data_[row * shape_[1] + col]; }

double Array::item() const {
  if (data_.size() != 1) {
    throw ContractError("item() on array of shape " + shape_string(shape_));
  }
  return data_[0];
}

bool Array::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

// ---------------------------------------------------------------------------
// Graph nodes

namespace detail {

struct NodeData {
  std::string op;
  Array value;
  mutable Array grad_storage;
  mutable bool grad_ready = false;
  std::vector<Node> parents;
  BackwardFn fn;
  bool requires_grad = false;
  // Scratch slot used while a single backward pass runs.
  std::size_t slot = 0;

  const Array& grad() const {
    if (!grad_ready) {
      grad_storage = Array(value.shape(), 0.0);
      grad_ready = true;
    }
    return grad_storage;
  }
  Array& grad_mut() {
    grad();
    return grad_storage;
  }
  static const std::shared_ptr<NodeData>& of(const Node& n) { return n.data_; }
};

}  // namespace detail

namespace {

const detail::NodeData& checked(const std::shared_ptr<detail::NodeData>& d) {
  if (!d) throw ContractError("use of an empty Node handle");
  return *d;
}

}  // namespace

const Array& Node::value() const { return checked(data_).value; }
const Array& Node::grad() const { return checked(data_).grad(); }
bool Node::requires_grad() const { return checked(data_).requires_grad; }
std::string_view Node::op() const { return checked(data_).op; }
std::vector<Node> Node::parents() const { return checked(data_).parents; }

Array& Node::mutable_value() {
  if (!data_) throw ContractError("use of an empty Node handle");
  if (!data_->parents.empty() || data_->fn) throw ContractError("mutable_value() on a non-leaf node");
  return data_->value;
}

void Node::zero_grad() {
  auto& d = *data_;
  if (d.grad_ready) std::fill(d.grad_storage.values().begin(), d.grad_storage.values().end(), 0.0);
}

Node make_node(std::string_view op, Array value, std::vector<Node> parents, BackwardFn fn) {
  auto data = std::make_shared<detail::NodeData>();
  data->op = std::string(op);
  data->value = std::move(value);
  for (const Node& p : parents) checked(detail::NodeData::of(p));
  data->requires_grad =
      std::any_of(parents.begin(), parents.end(), [](const Node& p) { return p.requires_grad(); });
  if (data->requires_grad) {
    data->fn = std::move(fn);
    data->parents = std::move(parents);
  }
  return Node(std::move(data));
}

Node parameter(Array value) {
  Node n = make_node("parameter", std::move(value), {}, nullptr);
  detail::NodeData::of(n)->requires_grad = true;
  return n;
}

Node constant(Array value) { return make_node("constant", std::move(value), {}, nullptr); }
Node constant(double value) { return constant(Array::scalar(value)); }

namespace {

// Iterative DFS. only_grad prunes subgraphs that cannot carry a gradient.
std::vector<Node> topo(const Node& root, bool only_grad) {
  checked(detail::NodeData::of(root));
  std::vector<Node> order;
  enum : unsigned char { kGray, kBlack };
  std::unordered_map<const detail::NodeData*, unsigned char> color;

  struct Frame {
    Node node;
    std::size_t next;
  };
  std::vector<Frame> stack;
  stack.push_back({root, 0});
  color[detail::NodeData::of(root).get()] = kGray;
  while (!stack.empty()) {
    Frame& f = stack.back();
    const auto& d = *detail::NodeData::of(f.node);
    if (f.next < d.parents.size()) {
      const Node& p = d.parents[f.next++];
      const auto* pd = detail::NodeData::of(p).get();
      if (only_grad && !pd->requires_grad) continue;
      auto it = color.find(pd);
      if (it == color.end()) {
        color[pd] = kGray;
        stack.push_back({p, 0});
      } else if (it->second == kGray) {
        throw ContractError("computation graph contains a cycle");
      }
    } else {
      color[&d] = kBlack;
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

std::vector<Node> topological_order(const Node& root) { return topo(root, false); }

void backward(const Node& root) {
  const auto& rd = checked(detail::NodeData::of(root));
  if (rd.value.size() != 1) {
    throw ContractError("backward() requires a scalar root, got shape " + shape_string(rd.value.shape()));
  }
  if (!rd.requires_grad) return;
  std::vector<Node> order = topo(root, true);
  for (std::size_t i = 0; i < order.size(); ++i) detail::NodeData::of(order[i])->slot = i;

  std::vector<Array> pass(order.size(), Array(Shape{}, 0.0));
  std::vector<bool> live(order.size(), false);
  pass.back() = Array(rd.value.shape(), 1.0);
  live.back() = true;

  std::vector<Array*> buffers;
  for (std::size_t i = order.size(); i-- > 0;) {
    if (!live[i]) continue;
    auto& d = *detail::NodeData::of(order[i]);
    if (d.fn) {
      buffers.assign(d.parents.size(), nullptr);
      for (std::size_t p = 0; p < d.parents.size(); ++p) {
        const auto& pd = *detail::NodeData::of(d.parents[p]);
        if (!pd.requires_grad) continue;
        if (!live[pd.slot]) {
          pass[pd.slot] = Array(pd.value.shape(), 0.0);
          live[pd.slot] = true;
        }
        buffers[p] = &pass[pd.slot];
      }
      d.fn(order[i], pass[i], buffers);
    }
    auto g = d.grad_mut().values();
    auto src = pass[i].values();
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += src[k];
    // Intermediate buffers are not needed once propagated.
    if (d.fn) pass[i] = Array(Shape{}, 0.0);
  }
}

void reset_grad(const Node& root) {
  for (const Node& n : topo(root, false)) {
    auto& d = *detail::NodeData::of(n);
    if (d.grad_ready) std::fill(d.grad_storage.values().begin(), d.grad_storage.values().end(), 0.0);
  }
}

// ---------------------------------------------------------------------------
// Elementwise operations

namespace {

struct Broadcast {
  Shape shape;
  bool a_scalar;
  bool b_scalar;
};

Broadcast broadcast(std::string_view op, const Array& a, const Array& b) {
  if (a.shape() == b.shape()) return {a.shape(), false, false};
  if (a.size() == 1 && b.size() == 1) {
    return {a.rank() >= b.rank() ? a.shape() : b.shape(), false, false};
  }
  if (a.size() == 1) return {b.shape(), true, false};
  if (b.size() == 1) return {a.shape(), false, true};
  throw ContractError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                      shape_string(b.shape()));
}

template <class F, class DA, class DB>
Node binary(std::string_view op, const Node& a, const Node& b, F f, DA da, DB db) {
  const Array& av = a.value();
  const Array& bv = b.value();
  Broadcast bc = broadcast(op, av, bv);
  Array out(bc.shape);
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = f(av[bc.a_scalar ? 0 : i], bv[bc.b_scalar ? 0 : i]);
  }
  return make_node(op, std::move(out), {a, b},
                   [bc, da, db](const Node& self, const Array& g, std::span<Array*> pg) {
                     const auto parents = self.parents();
                     const Array& x = parents[0].value();
                     const Array& y = parents[1].value();
                     const Array& z = self.value();
                     const std::size_t n = g.size();
                     for (std::size_t i = 0; i < n; ++i) {
                       const double xi = x[bc.a_scalar ? 0 : i];
                       const double yi = y[bc.b_scalar ? 0 : i];
                       if (pg[0]) (*pg[0])[bc.a_scalar ? 0 : i] += g[i] * da(xi, yi, z[i]);
                       if (pg[1]) (*pg[1])[bc.b_scalar ? 0 : i] += g[i] * db(xi, yi, z[i]);
                     }
                   });
}

template <class F, class D>
Node unary(std::string_view op, const Node& a, F f, D d) {
  const Array& av = a.value();
  Array out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  return make_node(op, std::move(out), {a}, [d](const Node& self, const Array& g, std::span<Array*> pg) {
    const Array& x = self.parents()[0].value();
    const Array& z = self.value();
    Array& dx = *pg[0];
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * d(x[i], z[i]);
  });
}

}  // namespace

Node add(const Node& a, const Node& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Node sub(const Node& a, const Node& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Node mul(const Node& a, const Node& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Node divide(const Node& a, const Node& b) {
  const Array& bv = b.value();
  for (std::size_t i = 0; i < bv.size(); ++i) {
    if (bv[i] == 0.0) throw DomainError("divide: zero divisor", i);
  }
  return binary(
      "divide", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; }, [](double, double y, double z) { return -z / y; });
}

Node operator+(const Node& a, const Node& b) { return add(a, b); }
Node operator-(const Node& a, const Node& b) { return sub(a, b); }
Node operator*(const Node& a, const Node& b) { return mul(a, b); }
Node operator/(const Node& a, const Node& b) { return divide(a, b); }

Node scale(const Node& a, double c) {
  return unary(
      "scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Node add_scalar(const Node& a, double c) {
  return unary(
      "add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Node neg(const Node& a) { return scale(a, -1.0); }

Node exp(const Node& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double z) { return z; });
}

Node log(const Node& a) {
  const Array& av = a.value();
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (!(av[i] > 0.0)) throw DomainError("log: nonpositive input", i);
  }
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Node tanh(const Node& a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); }, [](double, double z) { return 1.0 - z * z; });
}

Node sigmoid(const Node& a) {
  return unary(
      "sigmoid", a,
      [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
      [](double, double z) { return z * (1.0 - z); });
}

Node sqrt(const Node& a) {
  const Array& av = a.value();
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (av[i] < 0.0) throw DomainError("sqrt: negative input", i);
  }
  return unary(
      "sqrt", a, [](double x) { return std::sqrt(x); }, [](double, double z) { return 0.5 / z; });
}

// ---------------------------------------------------------------------------
// Contractions and reductions

namespace {

// C[m,n] += A[m,k] * B[k,n], optionally with A or B transposed in storage.
void gemm(std::size_t m, std::size_t k, std::size_t n, const double* a, bool ta, const double* b, bool tb,
          double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ta ? a[p * m + i] : a[i * k + p];
      if (aip == 0.0) continue;
      if (!tb) {
        const double* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      } else {
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * b[j * k + p];
      }
    }
  }
}

struct MatDims {
  std::size_t m, k, n;
  Shape out;
};

MatDims matmul_dims(const Array& a, const Array& b) {
  if (a.rank() < 1 || a.rank() > 2 || b.rank() < 1 || b.rank() > 2) {
    throw ContractError("matmul: operands must be rank 1 or 2, got " + shape_string(a.shape()) + " and " +
                        shape_string(b.shape()));
  }
  const std::size_t m = a.rank() == 2 ? a.dim(0) : 1;
  const std::size_t ka = a.rank() == 2 ? a.dim(1) : a.dim(0);
  const std::size_t kb = b.dim(0);
  const std::size_t n = b.rank() == 2 ? b.dim(1) : 1;
  if (ka != kb) {
    throw ContractError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " x " +
                        shape_string(b.shape()));
  }
  Shape out;
  if (a.rank() == 2) out.push_back(m);
  if (b.rank() == 2) out.push_back(n);
  return {m, ka, n, out};
}

// Splits a shape around `axis` into (outer, extent, inner) strides.
struct AxisSplit {
  std::size_t outer, extent, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, std::string_view op) {
  if (axis >= shape.size()) {
    throw ContractError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                        shape_string(shape));
  }
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Node matmul(const Node& a, const Node& b) {
  const MatDims d = matmul_dims(a.value(), b.value());
  Array out(d.out);
  gemm(d.m, d.k, d.n, a.value().values().data(), false, b.value().values().data(), false,
       out.values().data());
  return make_node("matmul", std::move(out), {a, b}, [d](const Node& self, const Array& g, std::span<Array*> pg) {
    const auto parents = self.parents();
    const double* av = parents[0].value().values().data();
    const double* bv = parents[1].value().values().data();
    const double* gv = g.values().data();
    // dA[m,k] = G[m,n] B^T ; dB[k,n] = A^T G
    if (pg[0]) gemm(d.m, d.n, d.k, gv, false, bv, true, pg[0]->values().data());
    if (pg[1]) gemm(d.k, d.m, d.n, av, true, gv, false, pg[1]->values().data());
  });
}

Node transpose(const Node& a) {
  const Array& av = a.value();
  if (av.rank() != 2) throw ContractError("transpose: rank-2 operand required, got " + shape_string(av.shape()));
  const std::size_t r = av.dim(0), c = av.dim(1);
  Array out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = av.at(i, j);
  return make_node("transpose", std::move(out), {a}, [r, c](const Node&, const Array& g, std::span<Array*> pg) {
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) pg[0]->at(i, j) += g.at(j, i);
  });
}

Node sum(const Node& a, std::size_t axis) {
  const Array& av = a.value();
  const AxisSplit s = split_axis(av.shape(), axis, "sum");
  Shape shape = av.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Array out(shape, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += av[(o * s.extent + e) * s.inner + i];
  return make_node("sum", std::move(out), {a}, [s](const Node&, const Array& g, std::span<Array*> pg) {
    Array& dx = *pg[0];
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t e = 0; e < s.extent; ++e)
        for (std::size_t i = 0; i < s.inner; ++i) dx[(o * s.extent + e) * s.inner + i] += g[o * s.inner + i];
  });
}

Node sum(const Node& a) {
  const Array& av = a.value();
  double total = 0.0;
  for (double x : av.values()) total += x;
  return make_node("sum_all", Array::scalar(total), {a}, [](const Node&, const Array& g, std::span<Array*> pg) {
    const double gi = g[0];
    for (double& x : pg[0]->values()) x += gi;
  });
}

Node mean(const Node& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Node mean(const Node& a, std::size_t axis) {
  return scale(sum(a, axis), 1.0 / static_cast<double>(a.value().dim(axis)));
}

Node max(const Node& a) {
  const Array& av = a.value();
  std::size_t best = 0;
  for (std::size_t i = 1; i < av.size(); ++i) {
    if (av[i] > av[best]) best = i;
  }
  return make_node("max", Array::scalar(av[best]), {a},
                   [best](const Node&, const Array& g, std::span<Array*> pg) { (*pg[0])[best] += g[0]; });
}

Node softmax(const Node& a, std::size_t axis) {
  const Array& av = a.value();
  const AxisSplit s = split_axis(av.shape(), axis, "softmax");
  Array out(av.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      auto at = [&](std::size_t e) { return (o * s.extent + e) * s.inner + i; };
      double hi = -std::numeric_limits<double>::infinity();
      for (std::size_t e = 0; e < s.extent; ++e) hi = std::max(hi, av[at(e)]);
      double z = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        out[at(e)] = std::exp(av[at(e)] - hi);
        z += out[at(e)];
      }
      for (std::size_t e = 0; e < s.extent; ++e) out[at(e)] /= z;
    }
  }
  return make_node("softmax", std::move(out), {a}, [s](const Node& self, const Array& g, std::span<Array*> pg) {
    const Array& y = self.value();
    Array& dx = *pg[0];
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        auto at = [&](std::size_t e) { return (o * s.extent + e) * s.inner + i; };
        double dot = 0.0;
        for (std::size_t e = 0; e < s.extent; ++e) dot += g[at(e)] * y[at(e)];
        for (std::size_t e = 0; e < s.extent; ++e) dx[at(e)] += y[at(e)] * (g[at(e)] - dot);
      }
    }
  });
}

Node log_softmax(const Node& a, std::size_t axis) {
  const Array& av = a.value();
  const AxisSplit s = split_axis(av.shape(), axis, "log_softmax");
  Array out(av.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      auto at = [&](std::size_t e) { return (o * s.extent + e) * s.inner + i; };
      double hi = -std::numeric_limits<double>::infinity();
      for (std::size_t e = 0; e < s.extent; ++e) hi = std::max(hi, av[at(e)]);
      double z = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) z += std::exp(av[at(e)] - hi);
      const double lz = hi + std::log(z);
      for (std::size_t e = 0; e < s.extent; ++e) out[at(e)] = av[at(e)] - lz;
    }
  }
  return make_node("log_softmax", std::move(out), {a},
                   [s](const Node& self, const Array& g, std::span<Array*> pg) {
                     const Array& y = self.value();
                     Array& dx = *pg[0];
                     for (std::size_t o = 0; o < s.outer; ++o) {
                       for (std::size_t i = 0; i < s.inner; ++i) {
                         auto at = [&](std::size_t e) { return (o * s.extent + e) * s.inner + i; };
                         double total = 0.0;
                         for (std::size_t e = 0; e < s.extent; ++e) total += g[at(e)];
                         for (std::size_t e = 0; e < s.extent; ++e) {
                           dx[at(e)] += g[at(e)] - std::exp(y[at(e)]) * total;
                         }
                       }
                     }
                   });
}

Node logsumexp(const Node& a) {
  const Array& av = a.value();
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : av.values()) hi = std::max(hi, x);
  double z = 0.0;
  for (double x : av.values()) z += std::exp(x - hi);
  const double out = hi + std::log(z);
  return make_node("logsumexp", Array::scalar(out), {a}, [](const Node& self, const Array& g, std::span<Array*> pg) {
    const double lz = self.value()[0];
    const Array& x = self.parents()[0].value();
    Array& dx = *pg[0];
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[0] * std::exp(x[i] - lz);
  });
}

Node max_elementwise(std::span<const Node> args) {
  if (args.empty()) throw ContractError("max_elementwise: no arguments");
  const Shape& shape = args[0].shape();
  for (const Node& x : args) {
    if (x.shape() != shape) {
      throw ContractError("max_elementwise: shape mismatch " + shape_string(shape) + " vs " +
                          shape_string(x.shape()));
    }
  }
  Array out = args[0].value();
  auto winner = std::make_shared<std::vector<std::size_t>>(out.size(), 0);
  for (std::size_t j = 1; j < args.size(); ++j) {
    const Array& v = args[j].value();
    for (std::size_t i = 0; i < out.size(); ++i) {
      // Strict comparison keeps ties on the lowest-index argument.
      if (v[i] > out[i]) {
        out[i] = v[i];
        (*winner)[i] = j;
      }
    }
  }
  return make_node("max_elementwise", std::move(out), std::vector<Node>(args.begin(), args.end()),
                   [winner](const Node&, const Array& g, std::span<Array*> pg) {
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       Array* dst = pg[(*winner)[i]];
                       if (dst) (*dst)[i] += g[i];
                     }
                   });
}

Node max_elementwise(std::initializer_list<Node> args) {
  return max_elementwise(std::span<const Node>(args.begin(), args.size()));
}

// ---------------------------------------------------------------------------
// Shape manipulation and indexing

Node reshape(const Node& a, Shape shape) {
  check_extents(shape);
  if (shape_size(shape) != a.size()) {
    throw ContractError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  }
  Array out(std::move(shape), std::vector<double>(a.value().values().begin(), a.value().values().end()));
  return make_node("reshape", std::move(out), {a}, [](const Node&, const Array& g, std::span<Array*> pg) {
    auto dst = pg[0]->values();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

Node concat(std::span<const Node> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no parts");
  Shape shape = parts[0].shape();
  if (axis >= shape.size()) throw ContractError("concat: axis out of range for " + shape_string(shape));
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const Node& p : parts) {
    Shape ps = p.shape();
    if (ps.size() != shape.size()) throw ContractError("concat: rank mismatch");
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (i != axis && ps[i] != shape[i]) {
        throw ContractError("concat: shape mismatch " + shape_string(shape) + " vs " + shape_string(ps));
      }
    }
    extents.push_back(ps[axis]);
    total += ps[axis];
  }
  shape[axis] = total;
  const AxisSplit s = split_axis(shape, axis, "concat");
  Array out(shape);
  std::size_t offset = 0;
  for (std::size_t j = 0; j < parts.size(); ++j) {
    const Array& v = parts[j].value();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t e = 0; e < extents[j]; ++e)
        for (std::size_t i = 0; i < s.inner; ++i)
          out[(o * s.extent + offset + e) * s.inner + i] = v[(o * extents[j] + e) * s.inner + i];
    offset += extents[j];
  }
  return make_node("concat", std::move(out), std::vector<Node>(parts.begin(), parts.end()),
                   [s, extents](const Node&, const Array& g, std::span<Array*> pg) {
                     std::size_t offset = 0;
                     for (std::size_t j = 0; j < extents.size(); ++j) {
                       if (pg[j]) {
                         Array& dx = *pg[j];
                         for (std::size_t o = 0; o < s.outer; ++o)
                           for (std::size_t e = 0; e < extents[j]; ++e)
                             for (std::size_t i = 0; i < s.inner; ++i)
                               dx[(o * extents[j] + e) * s.inner + i] += g[(o * s.extent + offset + e) * s.inner + i];
                       }
                       offset += extents[j];
                     }
                   });
}

Node concat(std::initializer_list<Node> parts, std::size_t axis) {
  return concat(std::span<const Node>(parts.begin(), parts.size()), axis);
}

Node gather_rows(const Node& table, std::span<const std::ptrdiff_t> rows) {
  const Array& tv = table.value();
  if (tv.rank() != 2) throw ContractError("gather_rows: rank-2 table required, got " + shape_string(tv.shape()));
  if (rows.empty()) throw ContractError("gather_rows: no rows requested");
  const auto nrows = static_cast<std::ptrdiff_t>(tv.dim(0));
  const std::size_t cols = tv.dim(1);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= nrows) throw ContractError("gather_rows: row " + std::to_string(rows[r]) + " out of range");
  }
  Array out(Shape{rows.size(), cols}, 0.0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0) continue;
    std::copy_n(tv.values().begin() + rows[r] * static_cast<std::ptrdiff_t>(cols), cols,
                out.values().begin() + static_cast<std::ptrdiff_t>(r * cols));
  }
  std::vector<std::ptrdiff_t> idx(rows.begin(), rows.end());
  return make_node("gather_rows", std::move(out), {table},
                   [idx = std::move(idx), cols](const Node&, const Array& g, std::span<Array*> pg) {
                     Array& dt = *pg[0];
                     for (std::size_t r = 0; r < idx.size(); ++r) {
                       if (idx[r] < 0) continue;
                       const std::size_t base = static_cast<std::size_t>(idx[r]) * cols;
                       for (std::size_t c = 0; c < cols; ++c) dt[base + c] += g[r * cols + c];
                     }
                   });
}

Node take(const Node& a, std::span<const std::size_t> indices) {
  const Array& av = a.value();
  if (indices.empty()) throw ContractError("take: no indices");
  Array out(Shape{indices.size()});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= av.size()) throw ContractError("take: index " + std::to_string(indices[i]) + " out of range");
    out[i] = av[indices[i]];
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return make_node("take", std::move(out), {a}, [idx = std::move(idx)](const Node&, const Array& g, std::span<Array*> pg) {
    for (std::size_t i = 0; i < idx.size(); ++i) (*pg[0])[idx[i]] += g[i];
  });
}

Node index_add(const Node& a, std::span<const std::size_t> indices, std::size_t size) {
  const Array& av = a.value();
  if (av.size() != indices.size()) {
    throw ContractError("index_add: " + std::to_string(indices.size()) + " indices for " +
                        std::to_string(av.size()) + " entries");
  }
  // Each slot sums its terms in ascending order.
  std::vector<std::pair<std::size_t, double>> terms(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size) throw ContractError("index_add: index " + std::to_string(indices[i]) + " out of range");
    terms[i] = {indices[i], av[i]};
  }
  std::sort(terms.begin(), terms.end());
  Array out(Shape{size}, 0.0);
  for (const auto& [slot, v] : terms) out[slot] += v;
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return make_node("index_add", std::move(out), {a},
                   [idx = std::move(idx)](const Node&, const Array& g, std::span<Array*> pg) {
                     for (std::size_t i = 0; i < idx.size(); ++i) (*pg[0])[i] += g[idx[i]];
                   });
}

Node slice(const Node& a, std::size_t begin, std::size_t end) {
  const Array& av = a.value();
  if (av.rank() < 1 || av.rank() > 2 || begin >= end || end > av.dim(0)) {
    throw ContractError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                        ") invalid for shape " + shape_string(av.shape()));
  }
  const std::size_t width = av.rank() == 2 ? av.dim(1) : 1;
  Shape shape = av.shape();
  shape[0] = end - begin;
  Array out(shape);
  std::copy(av.values().begin() + static_cast<std::ptrdiff_t>(begin * width),
            av.values().begin() + static_cast<std::ptrdiff_t>(end * width), out.values().begin());
  return make_node("slice", std::move(out), {a}, [begin, width](const Node&, const Array& g, std::span<Array*> pg) {
    for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[begin * width + i] += g[i];
  });
}

}  // namespace grerank::diff
