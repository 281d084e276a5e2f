#include "fsner/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "fsner/random.hpp"

namespace fsner {

std::size_t numel(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
  if (numel(shape) != values.size()) {
    throw NumericError("tensor shape " + shape_str(shape) + " does not match " +
                       std::to_string(values.size()) + " values");
  }
}

Tensor Tensor::zeros(Shape s) { return full(std::move(s), 0.0); }

Tensor Tensor::full(Shape s, double v) {
  const auto n = numel(s);
  return Tensor(std::move(s), std::vector<double>(n, v));
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

std::size_t Tensor::rows() const noexcept {
  if (shape.size() < 2) return 1;
  return shape[0];
}

std::size_t Tensor::cols() const noexcept {
  if (shape.empty()) return 1;
  return shape.back();
}

double Tensor::item() const {
  if (values.size() != 1) throw ShapeError("item", shape, "expected a single element");
  return values[0];
}

ShapeError::ShapeError(std::string_view op, const Shape& lhs, const Shape& rhs)
    : NumericError("shape mismatch in " + std::string(op) + ": " + shape_str(lhs) + " vs " +
                   shape_str(rhs)) {}

ShapeError::ShapeError(std::string_view op, const Shape& operand, const std::string& detail)
    : NumericError("bad shape in " + std::string(op) + ": " + shape_str(operand) + " (" + detail +
                   ")") {}

std::string_view op_name(OpKind kind) noexcept {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Softplus: return "softplus";
    case OpKind::Reciprocal: return "reciprocal";
    case OpKind::Square: return "square";
    case OpKind::Gelu: return "gelu";
    case OpKind::Tanh: return "tanh";
    case OpKind::Sum: return "sum";
    case OpKind::SumAll: return "sum_all";
    case OpKind::RowSoftmax: return "row_softmax";
    case OpKind::RowLogSumExp: return "row_logsumexp";
    case OpKind::GatherRows: return "gather_rows";
    case OpKind::Concat: return "concat";
    case OpKind::SliceCols: return "slice_cols";
    case OpKind::Transpose: return "transpose";
    case OpKind::LayerNorm: return "layer_norm";
    case OpKind::Dropout: return "dropout";
  }
  return "unknown";
}

const Tensor& Var::value() const {
  if (!graph_) throw NumericError("use of an unbound Var");
  return graph_->value(*this);
}

// --- Graph ------------------------------------------------------------------

Var Graph::parameter(Tensor value) {
  Node n;
  n.kind = OpKind::Leaf;
  value.requires_grad = true;
  value.grad.reset();
  n.value = std::move(value);
  return record(std::move(n));
}

Var Graph::constant(Tensor value) {
  Node n;
  n.kind = OpKind::Leaf;
  value.requires_grad = false;
  value.grad.reset();
  n.value = std::move(value);
  return record(std::move(n));
}

const Tensor& Graph::value(Var v) const {
  if (v.graph() != this) throw NumericError("Var belongs to a different graph");
  return nodes_.at(v.id()).value;
}

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;

[[maybe_unused]] bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

Var Graph::record(Node node) {
  if (consumed_) throw NumericError("graph already consumed by backward; build a new one");
  bool needs_grad = node.kind == OpKind::Leaf && node.value.requires_grad;
  for (auto in : node.inputs) needs_grad = needs_grad || nodes_[in].value.requires_grad;
  node.value.requires_grad = needs_grad;
#ifndef NDEBUG
  if (node.kind != OpKind::Leaf && !all_finite(node.value.values)) {
    bool inputs_finite = true;
    for (auto in : node.inputs) inputs_finite = inputs_finite && all_finite(nodes_[in].value.values);
    if (inputs_finite) {
      throw NumericError("op " + std::string(op_name(node.kind)) +
                         " produced non-finite values from finite inputs");
    }
  }
#endif
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

std::span<const double> Graph::grad(Var v) const {
  if (v.graph() != this) throw NumericError("Var belongs to a different graph");
  const auto& n = nodes_.at(v.id());
  if (!n.value.requires_grad) throw NumericError("grad requested for a node without requires_grad");
  if (!consumed_) throw NumericError("grad requested before backward");
  return n.grad;
}

Tensor Graph::grad_tensor(Var v) const {
  auto g = grad(v);
  return Tensor(value(v).shape, std::vector<double>(g.begin(), g.end()));
}

void Graph::backward(Var root) {
  if (root.graph() != this) throw NumericError("backward root belongs to a different graph");
  if (consumed_) throw NumericError("backward called twice on the same graph");
  const auto& r = nodes_.at(root.id());
  if (r.value.size() != 1) throw ShapeError("backward", r.value.shape, "root must be scalar");
  for (auto& n : nodes_) {
    if (n.value.requires_grad) n.grad.assign(n.value.size(), 0.0);
  }
  consumed_ = true;
  if (!r.value.requires_grad) return;
  nodes_[root.id()].grad[0] = 1.0;
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    if (nodes_[id].kind != OpKind::Leaf && nodes_[id].value.requires_grad) backward_node(id);
  }
}

// --- ops --------------------------------------------------------------------

namespace ag {
namespace {

Graph& same_graph(Var a, Var b) {
  if (!a.valid() || a.graph() != b.graph()) throw NumericError("operands belong to different graphs");
  return *a.graph();
}

void require_rank2(std::string_view op, const Tensor& t) {
  if (t.rank() != 2) throw ShapeError(op, t.shape, "expected rank 2");
}

// b broadcasts over a's rows when it is a single row with a's column count.
bool row_broadcast(const Tensor& a, const Tensor& b) {
  if (a.shape == b.shape) return false;
  if (a.rank() == 2 && ((b.rank() == 1 && b.shape[0] == a.shape[1]) ||
                        (b.rank() == 2 && b.shape[0] == 1 && b.shape[1] == a.shape[1]))) {
    return true;
  }
  return false;
}

Var unary(Var a, OpKind kind, double (*f)(double)) {
  Graph& g = *a.graph();
  const Tensor& x = a.value();
  Graph::Node n;
  n.kind = kind;
  n.inputs = {a.id()};
  n.value = Tensor(x.shape, std::vector<double>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) n.value.values[i] = f(x.values[i]);
  return g.record(std::move(n));
}

double softplus_fn(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double gelu_fn(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

Mask check_mask(std::string_view op, const Tensor& x, const Mask& mask) {
  if (mask && mask->size() != x.size()) {
    throw ShapeError(op, x.shape, "mask has " + std::to_string(mask->size()) + " entries");
  }
  return mask;
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 2 || y.rank() != 2 || x.shape[1] != y.shape[0]) {
    throw ShapeError("matmul", x.shape, y.shape);
  }
  const std::size_t n = x.shape[0], k = x.shape[1], m = y.shape[1];
  Graph::Node node;
  node.kind = OpKind::MatMul;
  node.inputs = {a.id(), b.id()};
  node.value = Tensor({n, m}, std::vector<double>(n * m, 0.0));
  double* out = node.value.values.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x.values[i * k + p];
      if (xv == 0.0) continue;
      const double* yr = y.values.data() + p * m;
      double* orow = out + i * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += xv * yr[j];
    }
  }
  return g.record(std::move(node));
}

Var add(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const bool bc = row_broadcast(x, y);
  if (!bc && x.shape != y.shape) throw ShapeError("add", x.shape, y.shape);
  Graph::Node n;
  n.kind = OpKind::Add;
  n.inputs = {a.id(), b.id()};
  n.value = x;
  n.value.requires_grad = false;
  const std::size_t m = y.size();
  for (std::size_t i = 0; i < x.size(); ++i) n.value.values[i] += y.values[bc ? i % m : i];
  return g.record(std::move(n));
}

Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var mul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const bool bc = row_broadcast(x, y);
  if (!bc && x.shape != y.shape) throw ShapeError("mul", x.shape, y.shape);
  Graph::Node n;
  n.kind = OpKind::Mul;
  n.inputs = {a.id(), b.id()};
  n.value = x;
  n.value.requires_grad = false;
  const std::size_t m = y.size();
  for (std::size_t i = 0; i < x.size(); ++i) n.value.values[i] *= y.values[bc ? i % m : i];
  return g.record(std::move(n));
}

Var add_scalar(Var a, double c) {
  Graph& g = *a.graph();
  Graph::Node n;
  n.kind = OpKind::AddScalar;
  n.inputs = {a.id()};
  n.scalar = c;
  n.value = a.value();
  n.value.requires_grad = false;
  for (auto& v : n.value.values) v += c;
  return g.record(std::move(n));
}

Var scale(Var a, double c) {
  Graph& g = *a.graph();
  Graph::Node n;
  n.kind = OpKind::Scale;
  n.inputs = {a.id()};
  n.scalar = c;
  n.value = a.value();
  n.value.requires_grad = false;
  for (auto& v : n.value.values) v *= c;
  return g.record(std::move(n));
}

Var exp(Var a) { return unary(a, OpKind::Exp, [](double x) { return std::exp(x); }); }
Var log(Var a) { return unary(a, OpKind::Log, [](double x) { return std::log(x); }); }
Var softplus(Var a) { return unary(a, OpKind::Softplus, softplus_fn); }
Var reciprocal(Var a) { return unary(a, OpKind::Reciprocal, [](double x) { return 1.0 / x; }); }
Var square(Var a) { return unary(a, OpKind::Square, [](double x) { return x * x; }); }
Var gelu(Var a) { return unary(a, OpKind::Gelu, gelu_fn); }
Var tanh(Var a) { return unary(a, OpKind::Tanh, [](double x) { return std::tanh(x); }); }

Var sum(Var a, std::size_t axis) {
  Graph& g = *a.graph();
  const Tensor& x = a.value();
  require_rank2("sum", x);
  if (axis > 1) throw ShapeError("sum", x.shape, "axis must be 0 or 1");
  const std::size_t r = x.shape[0], c = x.shape[1];
  Graph::Node n;
  n.kind = OpKind::Sum;
  n.inputs = {a.id()};
  n.axis = axis;
  n.value = axis == 0 ? Tensor::zeros({1, c}) : Tensor::zeros({r, 1});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) n.value.values[axis == 0 ? j : i] += x.values[i * c + j];
  }
  return g.record(std::move(n));
}

Var mean(Var a, std::size_t axis) {
  const auto& s = a.shape();
  if (s.size() != 2) throw ShapeError("mean", s, "expected rank 2");
  const double count = static_cast<double>(axis == 0 ? s[0] : s[1]);
  return scale(sum(a, axis), 1.0 / count);
}

Var sum_all(Var a) {
  Graph& g = *a.graph();
  Graph::Node n;
  n.kind = OpKind::SumAll;
  n.inputs = {a.id()};
  double total = 0.0;
  for (double v : a.value().values) total += v;
  n.value = Tensor::scalar(total);
  return g.record(std::move(n));
}

Var mean_all(Var a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size())); }

Var row_softmax(Var a, const Mask& mask) {
  Graph& g = *a.graph();
  const Tensor& x = a.value();
  require_rank2("row_softmax", x);
  Graph::Node n;
  n.kind = OpKind::RowSoftmax;
  n.inputs = {a.id()};
  n.mask = check_mask("row_softmax", x, mask);
  n.value = Tensor::zeros(x.shape);
  const std::size_t r = x.shape[0], c = x.shape[1];
  for (std::size_t i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) {
      if (!mask || (*mask)[i * c + j]) mx = std::max(mx, x.values[i * c + j]);
    }
    if (mx == -std::numeric_limits<double>::infinity()) continue;
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (!mask || (*mask)[i * c + j]) {
        const double e = std::exp(x.values[i * c + j] - mx);
        n.value.values[i * c + j] = e;
        z += e;
      }
    }
    for (std::size_t j = 0; j < c; ++j) n.value.values[i * c + j] /= z;
  }
  return g.record(std::move(n));
}

Var row_logsumexp(Var a, const Mask& mask) {
  Graph& g = *a.graph();
  const Tensor& x = a.value();
  require_rank2("row_logsumexp", x);
  Graph::Node n;
  n.kind = OpKind::RowLogSumExp;
  n.inputs = {a.id()};
  n.mask = check_mask("row_logsumexp", x, mask);
  const std::size_t r = x.shape[0], c = x.shape[1];
  n.value = Tensor::zeros({r, 1});
  // saved holds softmax weights for the backward pass.
  n.saved.assign(x.size(), 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) {
      if (!mask || (*mask)[i * c + j]) mx = std::max(mx, x.values[i * c + j]);
    }
    if (mx == -std::numeric_limits<double>::infinity()) continue;
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (!mask || (*mask)[i * c + j]) {
        const double e = std::exp(x.values[i * c + j] - mx);
        n.saved[i * c + j] = e;
        z += e;
      }
    }
    for (std::size_t j = 0; j < c; ++j) n.saved[i * c + j] /= z;
    n.value.values[i] = mx + std::log(z);
  }
  return g.record(std::move(n));
}

Var gather_rows(Var a, std::vector<std::size_t> indices) {
  Graph& g = *a.graph();
  const Tensor& x = a.value();
  require_rank2("gather_rows", x);
  const std::size_t r = x.shape[0], c = x.shape[1];
  Graph::Node n;
  n.kind = OpKind::GatherRows;
  n.inputs = {a.id()};
  n.value = Tensor::zeros({indices.size(), c});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= r) {
      throw ShapeError("gather_rows", x.shape, "row index " + std::to_string(indices[k]) + " out of range");
    }
    std::copy_n(x.values.data() + indices[k] * c, c, n.value.values.data() + k * c);
  }
  n.indices = std::move(indices);
  return g.record(std::move(n));
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw NumericError("concat of zero tensors");
  if (axis > 1) throw ShapeError("concat", parts[0].shape(), "axis must be 0 or 1");
  Graph& g = *parts[0].graph();
  const Tensor& first = parts[0].value();
  require_rank2("concat", first);
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.graph() != &g) throw NumericError("operands belong to different graphs");
    const Tensor& t = p.value();
    require_rank2("concat", t);
    const std::size_t other = axis == 0 ? 1 : 0;
    if (t.shape[other] != first.shape[other]) throw ShapeError("concat", first.shape, t.shape);
    total += t.shape[axis];
  }
  Graph::Node n;
  n.kind = OpKind::Concat;
  n.axis = axis;
  for (const auto& p : parts) n.inputs.push_back(p.id());
  if (axis == 0) {
    n.value = Tensor::zeros({total, first.shape[1]});
    std::size_t off = 0;
    for (const auto& p : parts) {
      const auto& v = p.value().values;
      std::copy(v.begin(), v.end(), n.value.values.begin() + static_cast<std::ptrdiff_t>(off));
      off += v.size();
    }
  } else {
    const std::size_t r = first.shape[0];
    n.value = Tensor::zeros({r, total});
    std::size_t col = 0;
    for (const auto& p : parts) {
      const Tensor& t = p.value();
      const std::size_t c = t.shape[1];
      for (std::size_t i = 0; i < r; ++i) {
        std::copy_n(t.values.data() + i * c, c, n.value.values.data() + i * total + col);
      }
      col += c;
    }
  }
  return g.record(std::move(n));
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
  Graph& g = *a.graph();
  const Tensor& x = a.value();
  require_rank2("slice_cols", x);
  const std::size_t r = x.shape[0], c = x.shape[1];
  if (start + count > c) throw ShapeError("slice_cols", x.shape, "column range out of bounds");
  Graph::Node n;
  n.kind = OpKind::SliceCols;
  n.inputs = {a.id()};
  n.axis = start;
  n.extent = count;
  n.value = Tensor::zeros({r, count});
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(x.values.data() + i * c + start, count, n.value.values.data() + i * count);
  }
  return g.record(std::move(n));
}

Var transpose(Var a) {
  Graph& g = *a.graph();
  const Tensor& x = a.value();
  require_rank2("transpose", x);
  const std::size_t r = x.shape[0], c = x.shape[1];
  Graph::Node n;
  n.kind = OpKind::Transpose;
  n.inputs = {a.id()};
  n.value = Tensor::zeros({c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) n.value.values[j * r + i] = x.values[i * c + j];
  }
  return g.record(std::move(n));
}

Var layer_norm(Var a, double eps) {
  Graph& g = *a.graph();
  const Tensor& x = a.value();
  require_rank2("layer_norm", x);
  const std::size_t r = x.shape[0], c = x.shape[1];
  Graph::Node n;
  n.kind = OpKind::LayerNorm;
  n.inputs = {a.id()};
  n.scalar = eps;
  n.value = Tensor::zeros(x.shape);
  n.saved.assign(r, 0.0);  // inverse std per row
  for (std::size_t i = 0; i < r; ++i) {
    const double* xr = x.values.data() + i * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xr[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    n.saved[i] = inv;
    for (std::size_t j = 0; j < c; ++j) n.value.values[i * c + j] = (xr[j] - mu) * inv;
  }
  return g.record(std::move(n));
}

Var dropout(Var a, double rate, bool train) {
  if (!train || rate <= 0.0) return a;
  if (rate >= 1.0) throw NumericError("dropout rate must be in [0, 1)");
  Graph& g = *a.graph();
  const Tensor& x = a.value();
  const std::uint64_t stream = derive_seed(g.dropout_seed(), "dropout", g.next_dropout_stream());
  auto keep = std::make_shared<std::vector<std::uint8_t>>(x.size());
  Graph::Node n;
  n.kind = OpKind::Dropout;
  n.inputs = {a.id()};
  n.scalar = 1.0 / (1.0 - rate);
  n.value = x;
  n.value.requires_grad = false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    (*keep)[i] = counter_uniform(stream, i) >= rate ? 1 : 0;
    n.value.values[i] = (*keep)[i] ? x.values[i] * n.scalar : 0.0;
  }
  n.mask = std::move(keep);
  return g.record(std::move(n));
}

}  // namespace ag

// --- backward ---------------------------------------------------------------

void Graph::backward_node(std::size_t id) {
  Node& n = nodes_[id];
  const std::vector<double>& go = n.grad;
  auto wants = [&](std::size_t k) { return nodes_[n.inputs[k]].value.requires_grad; };
  auto in_grad = [&](std::size_t k) -> std::vector<double>& { return nodes_[n.inputs[k]].grad; };
  auto in_val = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };

  switch (n.kind) {
    case OpKind::Leaf:
      break;
    case OpKind::MatMul: {
      const Tensor& x = in_val(0);
      const Tensor& y = in_val(1);
      const std::size_t r = x.shape[0], k = x.shape[1], m = y.shape[1];
      if (wants(0)) {
        auto& gx = in_grad(0);
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) acc += go[i * m + j] * y.values[p * m + j];
            gx[i * k + p] += acc;
          }
        }
      }
      if (wants(1)) {
        auto& gy = in_grad(1);
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const double xv = x.values[i * k + p];
            if (xv == 0.0) continue;
            for (std::size_t j = 0; j < m; ++j) gy[p * m + j] += xv * go[i * m + j];
          }
        }
      }
      break;
    }
    case OpKind::Add: {
      if (wants(0)) {
        auto& gx = in_grad(0);
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
      }
      if (wants(1)) {
        auto& gy = in_grad(1);
        const std::size_t m = gy.size();
        for (std::size_t i = 0; i < go.size(); ++i) gy[i % m] += go[i];
      }
      break;
    }
    case OpKind::Mul: {
      const Tensor& x = in_val(0);
      const Tensor& y = in_val(1);
      const std::size_t m = y.size();
      if (wants(0)) {
        auto& gx = in_grad(0);
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * y.values[i % m];
      }
      if (wants(1)) {
        auto& gy = in_grad(1);
        for (std::size_t i = 0; i < go.size(); ++i) gy[i % m] += go[i] * x.values[i];
      }
      break;
    }
    case OpKind::AddScalar: {
      auto& gx = in_grad(0);
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
      break;
    }
    case OpKind::Scale: {
      auto& gx = in_grad(0);
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * n.scalar;
      break;
    }
    case OpKind::Exp: {
      auto& gx = in_grad(0);
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * n.value.values[i];
      break;
    }
    case OpKind::Log: {
      auto& gx = in_grad(0);
      const auto& x = in_val(0).values;
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] / x[i];
      break;
    }
    case OpKind::Softplus: {
      auto& gx = in_grad(0);
      const auto& x = in_val(0).values;
      for (std::size_t i = 0; i < go.size(); ++i) {
        const double s = x[i] >= 0 ? 1.0 / (1.0 + std::exp(-x[i])) : std::exp(x[i]) / (1.0 + std::exp(x[i]));
        gx[i] += go[i] * s;
      }
      break;
    }
    case OpKind::Reciprocal: {
      auto& gx = in_grad(0);
      const auto& y = n.value.values;
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] -= go[i] * y[i] * y[i];
      break;
    }
    case OpKind::Square: {
      auto& gx = in_grad(0);
      const auto& x = in_val(0).values;
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * 2.0 * x[i];
      break;
    }
    case OpKind::Gelu: {
      auto& gx = in_grad(0);
      const auto& x = in_val(0).values;
      constexpr double inv_sqrt_2pi = 0.3989422804014327;
      for (std::size_t i = 0; i < go.size(); ++i) {
        const double cdf = 0.5 * (1.0 + std::erf(x[i] * kInvSqrt2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x[i] * x[i]);
        gx[i] += go[i] * (cdf + x[i] * pdf);
      }
      break;
    }
    case OpKind::Tanh: {
      auto& gx = in_grad(0);
      const auto& y = n.value.values;
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * (1.0 - y[i] * y[i]);
      break;
    }
    case OpKind::Sum: {
      auto& gx = in_grad(0);
      const Tensor& x = in_val(0);
      const std::size_t r = x.shape[0], c = x.shape[1];
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += go[n.axis == 0 ? j : i];
      }
      break;
    }
    case OpKind::SumAll: {
      auto& gx = in_grad(0);
      for (auto& v : gx) v += go[0];
      break;
    }
    case OpKind::RowSoftmax: {
      auto& gx = in_grad(0);
      const std::size_t r = n.value.shape[0], c = n.value.shape[1];
      const auto& y = n.value.values;
      for (std::size_t i = 0; i < r; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += go[i * c + j] * y[i * c + j];
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += y[i * c + j] * (go[i * c + j] - dot);
      }
      break;
    }
    case OpKind::RowLogSumExp: {
      auto& gx = in_grad(0);
      const Tensor& x = in_val(0);
      const std::size_t r = x.shape[0], c = x.shape[1];
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += go[i] * n.saved[i * c + j];
      }
      break;
    }
    case OpKind::GatherRows: {
      auto& gx = in_grad(0);
      const std::size_t c = n.value.shape[1];
      for (std::size_t k = 0; k < n.indices.size(); ++k) {
        for (std::size_t j = 0; j < c; ++j) gx[n.indices[k] * c + j] += go[k * c + j];
      }
      break;
    }
    case OpKind::Concat: {
      if (n.axis == 0) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const std::size_t sz = in_val(k).size();
          if (wants(k)) {
            auto& gx = in_grad(k);
            for (std::size_t i = 0; i < sz; ++i) gx[i] += go[off + i];
          }
          off += sz;
        }
      } else {
        const std::size_t r = n.value.shape[0], total = n.value.shape[1];
        std::size_t col = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const std::size_t c = in_val(k).shape[1];
          if (wants(k)) {
            auto& gx = in_grad(k);
            for (std::size_t i = 0; i < r; ++i) {
              for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += go[i * total + col + j];
            }
          }
          col += c;
        }
      }
      break;
    }
    case OpKind::SliceCols: {
      auto& gx = in_grad(0);
      const std::size_t r = n.value.shape[0], cnt = n.extent;
      const std::size_t c = in_val(0).shape[1];
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < cnt; ++j) gx[i * c + n.axis + j] += go[i * cnt + j];
      }
      break;
    }
    case OpKind::Transpose: {
      auto& gx = in_grad(0);
      const std::size_t r = n.value.shape[0], c = n.value.shape[1];
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) gx[j * r + i] += go[i * c + j];
      }
      break;
    }
    case OpKind::LayerNorm: {
      auto& gx = in_grad(0);
      const std::size_t r = n.value.shape[0], c = n.value.shape[1];
      const auto& y = n.value.values;
      const double inv_c = 1.0 / static_cast<double>(c);
      for (std::size_t i = 0; i < r; ++i) {
        double mean_g = 0.0, mean_gy = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          mean_g += go[i * c + j];
          mean_gy += go[i * c + j] * y[i * c + j];
        }
        mean_g *= inv_c;
        mean_gy *= inv_c;
        for (std::size_t j = 0; j < c; ++j) {
          gx[i * c + j] += n.saved[i] * (go[i * c + j] - mean_g - y[i * c + j] * mean_gy);
        }
      }
      break;
    }
    case OpKind::Dropout: {
      auto& gx = in_grad(0);
      for (std::size_t i = 0; i < go.size(); ++i) {
        if ((*n.mask)[i]) gx[i] += go[i] * n.scalar;
      }
      break;
    }
  }
}

// --- finite differences -----------------------------------------------------

double finite_diff_check(const MultiScalarFn& fn, std::span<const Tensor> points, double step) {
  if (!(step > 0.0)) throw UsageError("finite difference step must be positive");

  std::vector<std::vector<double>> analytic;
  {
    Graph g;
    std::vector<Var> leaves;
    for (const auto& p : points) leaves.push_back(g.parameter(p));
    Var root = fn(g, leaves);
    if (!std::isfinite(root.item())) throw NumericError("gradient check: function value is not finite");
    g.backward(root);
    for (const auto& leaf : leaves) {
      auto gr = g.grad(leaf);
      analytic.emplace_back(gr.begin(), gr.end());
    }
  }

  auto evaluate = [&](std::size_t which, std::size_t coord, double delta) {
    Graph g;
    std::vector<Var> leaves;
    for (std::size_t k = 0; k < points.size(); ++k) {
      Tensor t = points[k];
      if (k == which) t.values[coord] += delta;
      leaves.push_back(g.constant(std::move(t)));
    }
    const double v = fn(g, leaves).item();
    if (!std::isfinite(v)) throw NumericError("gradient check: function value is not finite");
    return v;
  };

  double worst = 0.0;
  for (std::size_t k = 0; k < points.size(); ++k) {
    for (std::size_t i = 0; i < points[k].size(); ++i) {
      const double numeric = (evaluate(k, i, step) - evaluate(k, i, -step)) / (2.0 * step);
      const double err = std::abs(analytic[k][i] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

double finite_diff_check(const ScalarFn& fn, const Tensor& point, double step) {
  MultiScalarFn wrapped = [&](Graph& g, std::span<const Var> leaves) { return fn(g, leaves[0]); };
  return finite_diff_check(wrapped, std::span<const Tensor>(&point, 1), step);
}

}  // namespace fsner
