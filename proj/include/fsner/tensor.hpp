#pragma once

// Dense double-precision tensors with a tape-based reverse-mode autodiff.
//
// A Graph owns every value computed during one forward pass. Leaves are
// copied in (parameters or constants), ops append nodes in topological order,
// and backward() walks the tape once in reverse. Tensors are row-major; most
// ops work on rank-2 tensors, with rank-1 [m] treated as a 1 x m row.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fsner/error.hpp"

namespace fsner {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape) noexcept;
std::string shape_str(const Shape& shape);

struct Tensor {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::optional<std::vector<double>> grad;

  Tensor() = default;
  // Throws NumericError when product(shape) != values.size().
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  std::size_t size() const noexcept { return values.size(); }
  std::size_t rank() const noexcept { return shape.size(); }
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
  std::span<const double> row(std::size_t r) const {
    return {values.data() + r * cols(), cols()};
  }
  double item() const;
};

// Raised on any op whose operand shapes violate its shape rule.
class ShapeError : public NumericError {
 public:
  ShapeError(std::string_view op, const Shape& lhs, const Shape& rhs);
  ShapeError(std::string_view op, const Shape& operand, const std::string& detail);
};

enum class OpKind : std::uint8_t {
  Leaf,
  MatMul,
  Add,
  AddScalar,
  Mul,
  Scale,
  Exp,
  Log,
  Softplus,
  Reciprocal,
  Square,
  Gelu,
  Tanh,
  Sum,
  SumAll,
  RowSoftmax,
  RowLogSumExp,
  GatherRows,
  Concat,
  SliceCols,
  Transpose,
  LayerNorm,
  Dropout,
};

std::string_view op_name(OpKind kind) noexcept;

// Row-major per-entry inclusion mask (1 = included). Shared so a mask can be
// reused across heads without copying.
using Mask = std::shared_ptr<const std::vector<std::uint8_t>>;

class Graph;

class Var {
 public:
  Var() = default;

  Graph* graph() const noexcept { return graph_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double item() const { return value().item(); }

 private:
  friend class Graph;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  struct Node {
    OpKind kind = OpKind::Leaf;
    std::vector<std::size_t> inputs;
    Tensor value;
    std::vector<double> grad;
    double scalar = 0.0;
    std::size_t axis = 0;
    std::size_t extent = 0;
    std::vector<std::size_t> indices;
    Mask mask;
    std::vector<double> saved;
  };

  explicit Graph(std::uint64_t dropout_seed = 0) : dropout_seed_(dropout_seed) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaf that receives a gradient.
  Var parameter(Tensor value);
  Var constant(Tensor value);

  const Tensor& value(Var v) const;
  // Gradient of the last backward root w.r.t. v. Leaves that did not
  // influence the root report exact zeros.
  std::span<const double> grad(Var v) const;
  Tensor grad_tensor(Var v) const;

  // Root must be a single-element tensor. A graph can be differentiated once.
  void backward(Var root);

  bool consumed() const noexcept { return consumed_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }

  // Used by op implementations.
  Var record(Node node);
  Node& node_mut(std::size_t id) { return nodes_.at(id); }
  std::uint64_t next_dropout_stream() noexcept { return dropout_calls_++; }
  std::uint64_t dropout_seed() const noexcept { return dropout_seed_; }

 private:
  void backward_node(std::size_t id);

  std::vector<Node> nodes_;
  std::uint64_t dropout_seed_;
  std::uint64_t dropout_calls_ = 0;
  bool consumed_ = false;
};

namespace ag {

Var matmul(Var a, Var b);
// b is either the same shape as a or a single row broadcast over a's rows.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_scalar(Var a, double c);
Var scale(Var a, double c);
Var exp(Var a);
Var log(Var a);
Var softplus(Var a);
Var reciprocal(Var a);
Var square(Var a);
Var gelu(Var a);
Var tanh(Var a);
// axis 0 -> [1, cols], axis 1 -> [rows, 1].
Var sum(Var a, std::size_t axis);
Var mean(Var a, std::size_t axis);
Var sum_all(Var a);
Var mean_all(Var a);
// Masked-out entries get probability exactly zero; a fully masked row is all
// zeros.
Var row_softmax(Var a, const Mask& mask = nullptr);
// [rows, 1]; a fully masked row yields 0 with zero gradient.
Var row_logsumexp(Var a, const Mask& mask = nullptr);
Var gather_rows(Var a, std::vector<std::size_t> indices);
Var concat(std::span<const Var> parts, std::size_t axis);
Var slice_cols(Var a, std::size_t start, std::size_t count);
Var transpose(Var a);
// Per-row standardization without affine parameters.
Var layer_norm(Var a, double eps = 1e-12);
// Identity when !train or rate == 0. The keep mask is drawn from the graph's
// counter-based stream, indexed by (call number, flat element index).
Var dropout(Var a, double rate, bool train);

}  // namespace ag

// Central-difference gradient check. Returns
//   max_i |analytic_i - numeric_i| / max(1, |numeric_i|).
using ScalarFn = std::function<Var(Graph&, Var)>;
using MultiScalarFn = std::function<Var(Graph&, std::span<const Var>)>;

double finite_diff_check(const ScalarFn& fn, const Tensor& point, double step);
double finite_diff_check(const MultiScalarFn& fn, std::span<const Tensor> points, double step);

}  // namespace fsner
