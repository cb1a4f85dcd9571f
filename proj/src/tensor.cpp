#include "opencos/tensor.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace opencos {

namespace {

std::size_t product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

[[noreturn]] void shape_fail(OpKind kind, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op_name(kind)) + ": shapes " + shape_string(a) + " and " + shape_string(b) +
                   " do not conform");
}

[[noreturn]] void shape_fail(OpKind kind, const Shape& a, const std::string& why) {
  throw ShapeError(std::string(op_name(kind)) + ": shape " + shape_string(a) + " " + why);
}

enum class Broadcast { kSame, kRow, kScalar };

Broadcast broadcast_kind(OpKind kind, const Array& a, const Array& b) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.size() == 1) return Broadcast::kScalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
  shape_fail(kind, a.shape(), b.shape());
}

double broadcast_at(const Array& b, Broadcast mode, std::size_t i, std::size_t cols) {
  switch (mode) {
    case Broadcast::kSame:
      return b[i];
    case Broadcast::kRow:
      return b[i % cols];
    case Broadcast::kScalar:
      return b[0];
  }
  return 0.0;
}

// Reduces a gradient of a's shape down to b's broadcast shape.
void accumulate_broadcast(Array& target, const Array& grad, Broadcast mode, std::size_t cols) {
  auto out = target.data();
  auto in = grad.data();
  switch (mode) {
    case Broadcast::kSame:
      for (std::size_t i = 0; i < in.size(); ++i) out[i] += in[i];
      break;
    case Broadcast::kRow:
      for (std::size_t i = 0; i < in.size(); ++i) out[i % cols] += in[i];
      break;
    case Broadcast::kScalar:
      for (double v : in) out[0] += v;
      break;
  }
}

void add_into(Array& target, const Array& grad) {
  auto out = target.data();
  auto in = grad.data();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] += in[i];
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Array::Array(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.empty()) throw ShapeError("array: empty shape");
  for (std::size_t d : shape_) {
    if (d == 0) throw ShapeError("array: zero extent in shape " + shape_string(shape_));
  }
  if (product(shape_) != data_.size()) {
    throw ShapeError("array: shape " + shape_string(shape_) + " needs " + std::to_string(product(shape_)) +
                     " values, got " + std::to_string(data_.size()));
  }
}

Array Array::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Array Array::filled(Shape shape, double value) {
  const std::size_t n = product(shape);
  return Array(std::move(shape), std::vector<double>(n, value));
}

Array Array::scalar(double value) { return Array({1}, {value}); }

Array Array::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Array({rows, cols}, std::move(data));
}

Array Array::row(std::vector<double> data) {
  const std::size_t n = data.size();
  return Array({1, n}, std::move(data));
}

double Array::item() const {
  if (data_.size() != 1) throw ShapeError("item: array of shape " + shape_string(shape_) + " is not a scalar");
  return data_[0];
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kConstant: return "constant";
    case OpKind::kVariable: return "variable";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kScale: return "scale";
    case OpKind::kRelu: return "relu";
    case OpKind::kMean: return "mean";
    case OpKind::kSum: return "sum";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kSoftmaxRows: return "softmax-rows";
    case OpKind::kLogSoftmaxRows: return "log-softmax-rows";
    case OpKind::kL2NormalizeRows: return "l2-normalize-rows";
    case OpKind::kMul: return "elementwise-mul";
    case OpKind::kConcatRows: return "concat-rows";
    case OpKind::kSliceRows: return "slice-rows";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kStandardizeColumns: return "standardize-columns";
  }
  return "unknown";
}

NodeId Graph::constant(Array value) {
  nodes_.push_back(Node{OpKind::kConstant, {}, {}, std::move(value), {}, false});
  return nodes_.size() - 1;
}

NodeId Graph::variable(Array value) {
  nodes_.push_back(Node{OpKind::kVariable, {}, {}, std::move(value), {}, true});
  return nodes_.size() - 1;
}

NodeId Graph::apply(OpKind kind, std::span<const NodeId> inputs, OpAttrs attrs) {
  for (NodeId id : inputs) {
    if (id >= nodes_.size()) throw std::out_of_range(std::string(op_name(kind)) + ": unknown node id");
  }
  auto arity = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw std::invalid_argument(std::string(op_name(kind)) + ": expected " + std::to_string(n) + " inputs, got " +
                                  std::to_string(inputs.size()));
    }
  };

  Node node{kind, std::vector<NodeId>(inputs.begin(), inputs.end()), attrs, {}, {}, false};
  for (NodeId id : inputs) node.needs_grad = node.needs_grad || nodes_[id].needs_grad;

  switch (kind) {
    case OpKind::kConstant:
    case OpKind::kVariable:
      throw std::invalid_argument("apply: leaves are created with constant() or variable()");

    case OpKind::kMatMul: {
      arity(2);
      const Array& a = nodes_[inputs[0]].value;
      const Array& b = nodes_[inputs[1]].value;
      if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) shape_fail(kind, a.shape(), b.shape());
      const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
      std::vector<double> out(n * m, 0.0);
      auto ad = a.data();
      auto bd = b.data();
      for (std::size_t i = 0; i < n; ++i) {
        double* orow = out.data() + i * m;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = ad[i * k + p];
          if (av == 0.0) continue;
          const double* brow = bd.data() + p * m;
          for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
      }
      node.value = Array::matrix(n, m, std::move(out));
      break;
    }

    case OpKind::kAdd:
    case OpKind::kMul: {
      arity(2);
      const Array& a = nodes_[inputs[0]].value;
      const Array& b = nodes_[inputs[1]].value;
      const Broadcast mode = broadcast_kind(kind, a, b);
      Array out = a;
      auto od = out.data();
      const std::size_t cols = a.cols();
      if (kind == OpKind::kAdd) {
        for (std::size_t i = 0; i < od.size(); ++i) od[i] += broadcast_at(b, mode, i, cols);
      } else {
        for (std::size_t i = 0; i < od.size(); ++i) od[i] *= broadcast_at(b, mode, i, cols);
      }
      node.value = std::move(out);
      break;
    }

    case OpKind::kScale: {
      arity(1);
      Array out = nodes_[inputs[0]].value;
      for (double& v : out.data()) v *= attrs.scalar;
      node.value = std::move(out);
      break;
    }

    case OpKind::kRelu: {
      arity(1);
      Array out = nodes_[inputs[0]].value;
      // NaN passes through so a non-finite input stays visible downstream
      for (double& v : out.data()) {
        if (v < 0.0) v = 0.0;
      }
      node.value = std::move(out);
      break;
    }

    case OpKind::kMean:
    case OpKind::kSum: {
      arity(1);
      const Array& a = nodes_[inputs[0]].value;
      double total = 0.0;
      for (double v : a.data()) total += v;
      if (kind == OpKind::kMean) total /= static_cast<double>(a.size());
      node.value = Array::scalar(total);
      break;
    }

    case OpKind::kExp: {
      arity(1);
      Array out = nodes_[inputs[0]].value;
      for (double& v : out.data()) v = std::exp(v);
      node.value = std::move(out);
      break;
    }

    case OpKind::kLog: {
      arity(1);
      Array out = nodes_[inputs[0]].value;
      for (double& v : out.data()) {
        if (!(v > 0.0)) throw std::domain_error("log: non-positive input " + std::to_string(v));
        v = std::log(v);
      }
      node.value = std::move(out);
      break;
    }

    case OpKind::kSoftmaxRows:
    case OpKind::kLogSoftmaxRows: {
      arity(1);
      Array out = nodes_[inputs[0]].value;
      for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row_span(r);
        const double mx = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (double v : row) z += std::exp(v - mx);
        if (kind == OpKind::kSoftmaxRows) {
          for (double& v : row) v = std::exp(v - mx) / z;
        } else {
          const double log_z = std::log(z);
          for (double& v : row) v = (v - mx) - log_z;
        }
      }
      node.value = std::move(out);
      break;
    }

    case OpKind::kL2NormalizeRows: {
      arity(1);
      Array out = nodes_[inputs[0]].value;
      std::vector<double> norms(out.rows());
      for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row_span(r);
        double sq = 0.0;
        for (double v : row) sq += v * v;
        const double norm = std::sqrt(sq);
        norms[r] = norm;
        if (norm < 1e-12) {
          std::fill(row.begin(), row.end(), 0.0);
        } else {
          for (double& v : row) v /= norm;
        }
      }
      const std::size_t rows = norms.size();
      node.saved = Array({rows}, std::move(norms));
      node.value = std::move(out);
      break;
    }

    case OpKind::kConcatRows: {
      if (inputs.empty()) throw std::invalid_argument("concat-rows: needs at least one input");
      const Array& first = nodes_[inputs[0]].value;
      std::size_t rows = 0;
      std::vector<double> out;
      for (NodeId id : inputs) {
        const Array& part = nodes_[id].value;
        if (part.cols() != first.cols()) shape_fail(kind, first.shape(), part.shape());
        rows += part.rows();
        out.insert(out.end(), part.data().begin(), part.data().end());
      }
      node.value = Array::matrix(rows, first.cols(), std::move(out));
      break;
    }

    case OpKind::kSliceRows: {
      arity(1);
      const Array& a = nodes_[inputs[0]].value;
      if (attrs.begin >= attrs.end || attrs.end > a.rows()) {
        shape_fail(kind, a.shape(), "cannot take rows [" + std::to_string(attrs.begin) + ", " +
                                        std::to_string(attrs.end) + ")");
      }
      auto d = a.data();
      const std::size_t c = a.cols();
      node.value = Array::matrix(attrs.end - attrs.begin, c,
                                 std::vector<double>(d.begin() + attrs.begin * c, d.begin() + attrs.end * c));
      break;
    }

    case OpKind::kTranspose: {
      arity(1);
      const Array& a = nodes_[inputs[0]].value;
      if (a.rank() != 2) shape_fail(kind, a.shape(), "is not a matrix");
      Array out = Array::zeros({a.cols(), a.rows()});
      for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t c = 0; c < a.cols(); ++c) out.at(c, r) = a.at(r, c);
      }
      node.value = std::move(out);
      break;
    }

    case OpKind::kStandardizeColumns: {
      arity(1);
      const Array& a = nodes_[inputs[0]].value;
      if (a.rank() != 2) shape_fail(kind, a.shape(), "is not a matrix");
      const std::size_t n = a.rows(), c = a.cols();
      std::vector<double> mean(c, 0.0), inv_std(c, 0.0);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < c; ++j) mean[j] += a.at(r, j);
      }
      for (double& m : mean) m /= static_cast<double>(n);
      std::vector<double> var(c, 0.0);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < c; ++j) {
          const double d = a.at(r, j) - mean[j];
          var[j] += d * d;
        }
      }
      for (std::size_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] / static_cast<double>(n) + attrs.scalar);
      Array out = Array::zeros({n, c});
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < c; ++j) out.at(r, j) = (a.at(r, j) - mean[j]) * inv_std[j];
      }
      node.saved = Array({c}, std::move(inv_std));
      node.value = std::move(out);
      break;
    }
  }

  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

Gradients Graph::backward(NodeId root) const {
  if (root >= nodes_.size()) throw std::out_of_range("backward: unknown root node");
  if (nodes_[root].value.size() != 1) {
    throw ShapeError("backward: root must be scalar, got shape " + shape_string(nodes_[root].value.shape()));
  }
  std::vector<Array> grads(nodes_.size());
  grads[root] = Array::filled(nodes_[root].value.shape(), 1.0);
  for (std::size_t i = root + 1; i-- > 0;) {
    if (grads[i].size() == 0) continue;
    const Node& node = nodes_[i];
    if (!node.needs_grad || node.inputs.empty()) continue;
    backprop_node(node, grads[i], grads);
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (grads[i].size() == 0) grads[i] = Array::zeros(nodes_[i].value.shape());
  }
  return Gradients(std::move(grads));
}

void Graph::backprop_node(const Node& node, const Array& grad, std::vector<Array>& grads) const {
  auto slot = [&](NodeId id) -> Array* {
    if (!nodes_[id].needs_grad) return nullptr;
    if (grads[id].size() == 0) grads[id] = Array::zeros(nodes_[id].value.shape());
    return &grads[id];
  };
  const Array& y = node.value;

  switch (node.kind) {
    case OpKind::kConstant:
    case OpKind::kVariable:
      return;

    case OpKind::kMatMul: {
      const Array& a = nodes_[node.inputs[0]].value;
      const Array& b = nodes_[node.inputs[1]].value;
      const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
      if (Array* ga = slot(node.inputs[0])) {
        // dA = dY * B^T
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) acc += grad[i * m + j] * b[p * m + j];
            (*ga)[i * k + p] += acc;
          }
        }
      }
      if (Array* gb = slot(node.inputs[1])) {
        // dB = A^T * dY
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < m; ++j) (*gb)[p * m + j] += av * grad[i * m + j];
          }
        }
      }
      return;
    }

    case OpKind::kAdd: {
      const Array& a = nodes_[node.inputs[0]].value;
      const Array& b = nodes_[node.inputs[1]].value;
      const Broadcast mode = broadcast_kind(node.kind, a, b);
      if (Array* ga = slot(node.inputs[0])) add_into(*ga, grad);
      if (Array* gb = slot(node.inputs[1])) accumulate_broadcast(*gb, grad, mode, a.cols());
      return;
    }

    case OpKind::kMul: {
      const Array& a = nodes_[node.inputs[0]].value;
      const Array& b = nodes_[node.inputs[1]].value;
      const Broadcast mode = broadcast_kind(node.kind, a, b);
      const std::size_t cols = a.cols();
      if (Array* ga = slot(node.inputs[0])) {
        for (std::size_t i = 0; i < grad.size(); ++i) (*ga)[i] += grad[i] * broadcast_at(b, mode, i, cols);
      }
      if (Array* gb = slot(node.inputs[1])) {
        Array local = grad;
        for (std::size_t i = 0; i < local.size(); ++i) local[i] *= a[i];
        accumulate_broadcast(*gb, local, mode, cols);
      }
      return;
    }

    case OpKind::kScale: {
      if (Array* ga = slot(node.inputs[0])) {
        for (std::size_t i = 0; i < grad.size(); ++i) (*ga)[i] += grad[i] * node.attrs.scalar;
      }
      return;
    }

    case OpKind::kRelu: {
      const Array& a = nodes_[node.inputs[0]].value;
      if (Array* ga = slot(node.inputs[0])) {
        // subgradient at 0 is 0
        for (std::size_t i = 0; i < grad.size(); ++i) {
          if (a[i] > 0.0) (*ga)[i] += grad[i];
        }
      }
      return;
    }

    case OpKind::kMean:
    case OpKind::kSum: {
      if (Array* ga = slot(node.inputs[0])) {
        double g = grad[0];
        if (node.kind == OpKind::kMean) g /= static_cast<double>(ga->size());
        for (double& v : ga->data()) v += g;
      }
      return;
    }

    case OpKind::kExp: {
      if (Array* ga = slot(node.inputs[0])) {
        for (std::size_t i = 0; i < grad.size(); ++i) (*ga)[i] += grad[i] * y[i];
      }
      return;
    }

    case OpKind::kLog: {
      const Array& a = nodes_[node.inputs[0]].value;
      if (Array* ga = slot(node.inputs[0])) {
        for (std::size_t i = 0; i < grad.size(); ++i) (*ga)[i] += grad[i] / a[i];
      }
      return;
    }

    case OpKind::kSoftmaxRows: {
      if (Array* ga = slot(node.inputs[0])) {
        const std::size_t c = y.cols();
        for (std::size_t r = 0; r < y.rows(); ++r) {
          double dot = 0.0;
          for (std::size_t j = 0; j < c; ++j) dot += grad[r * c + j] * y[r * c + j];
          for (std::size_t j = 0; j < c; ++j) (*ga)[r * c + j] += y[r * c + j] * (grad[r * c + j] - dot);
        }
      }
      return;
    }

    case OpKind::kLogSoftmaxRows: {
      if (Array* ga = slot(node.inputs[0])) {
        const std::size_t c = y.cols();
        for (std::size_t r = 0; r < y.rows(); ++r) {
          double total = 0.0;
          for (std::size_t j = 0; j < c; ++j) total += grad[r * c + j];
          for (std::size_t j = 0; j < c; ++j) (*ga)[r * c + j] += grad[r * c + j] - std::exp(y[r * c + j]) * total;
        }
      }
      return;
    }

    case OpKind::kL2NormalizeRows: {
      if (Array* ga = slot(node.inputs[0])) {
        const std::size_t c = y.cols();
        for (std::size_t r = 0; r < y.rows(); ++r) {
          const double norm = node.saved[r];
          if (norm < 1e-12) continue;
          double dot = 0.0;
          for (std::size_t j = 0; j < c; ++j) dot += grad[r * c + j] * y[r * c + j];
          for (std::size_t j = 0; j < c; ++j) {
            (*ga)[r * c + j] += (grad[r * c + j] - y[r * c + j] * dot) / norm;
          }
        }
      }
      return;
    }

    case OpKind::kConcatRows: {
      std::size_t offset = 0;
      for (NodeId id : node.inputs) {
        const std::size_t n = nodes_[id].value.size();
        if (Array* ga = slot(id)) {
          for (std::size_t i = 0; i < n; ++i) (*ga)[i] += grad[offset + i];
        }
        offset += n;
      }
      return;
    }

    case OpKind::kSliceRows: {
      if (Array* ga = slot(node.inputs[0])) {
        const std::size_t start = node.attrs.begin * y.cols();
        for (std::size_t i = 0; i < grad.size(); ++i) (*ga)[start + i] += grad[i];
      }
      return;
    }

    case OpKind::kTranspose: {
      if (Array* ga = slot(node.inputs[0])) {
        for (std::size_t r = 0; r < y.rows(); ++r) {
          for (std::size_t c = 0; c < y.cols(); ++c) ga->at(c, r) += grad.at(r, c);
        }
      }
      return;
    }

    case OpKind::kStandardizeColumns: {
      if (Array* ga = slot(node.inputs[0])) {
        const std::size_t n = y.rows(), c = y.cols();
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t j = 0; j < c; ++j) {
          double sum_g = 0.0, sum_gy = 0.0;
          for (std::size_t r = 0; r < n; ++r) {
            sum_g += grad.at(r, j);
            sum_gy += grad.at(r, j) * y.at(r, j);
          }
          const double inv_std = node.saved[j];
          for (std::size_t r = 0; r < n; ++r) {
            ga->at(r, j) += inv_std * (grad.at(r, j) - inv_n * sum_g - y.at(r, j) * inv_n * sum_gy);
          }
        }
      }
      return;
    }
  }
}

namespace ops {

NodeId matmul(Graph& g, NodeId a, NodeId b) { return g.apply(OpKind::kMatMul, {a, b}); }
NodeId add(Graph& g, NodeId a, NodeId b) { return g.apply(OpKind::kAdd, {a, b}); }
NodeId sub(Graph& g, NodeId a, NodeId b) { return add(g, a, scale(g, b, -1.0)); }
NodeId scale(Graph& g, NodeId a, double factor) { return g.apply(OpKind::kScale, {a}, {.scalar = factor}); }
NodeId relu(Graph& g, NodeId a) { return g.apply(OpKind::kRelu, {a}); }
NodeId mean(Graph& g, NodeId a) { return g.apply(OpKind::kMean, {a}); }
NodeId sum(Graph& g, NodeId a) { return g.apply(OpKind::kSum, {a}); }
NodeId exp(Graph& g, NodeId a) { return g.apply(OpKind::kExp, {a}); }
NodeId log(Graph& g, NodeId a) { return g.apply(OpKind::kLog, {a}); }
NodeId softmax_rows(Graph& g, NodeId a) { return g.apply(OpKind::kSoftmaxRows, {a}); }
NodeId log_softmax_rows(Graph& g, NodeId a) { return g.apply(OpKind::kLogSoftmaxRows, {a}); }
NodeId l2_normalize_rows(Graph& g, NodeId a) { return g.apply(OpKind::kL2NormalizeRows, {a}); }
NodeId mul(Graph& g, NodeId a, NodeId b) { return g.apply(OpKind::kMul, {a, b}); }
NodeId concat_rows(Graph& g, std::span<const NodeId> parts) { return g.apply(OpKind::kConcatRows, parts); }
NodeId slice_rows(Graph& g, NodeId a, std::size_t begin, std::size_t end) {
  return g.apply(OpKind::kSliceRows, {a}, {.begin = begin, .end = end});
}
NodeId transpose(Graph& g, NodeId a) { return g.apply(OpKind::kTranspose, {a}); }
NodeId standardize_columns(Graph& g, NodeId a, double epsilon) {
  return g.apply(OpKind::kStandardizeColumns, {a}, {.scalar = epsilon});
}

NodeId soft_cross_entropy(Graph& g, NodeId logits, const Array& target) {
  const Shape shape = g.value(logits).shape();
  if (shape != target.shape()) {
    throw ShapeError("soft-cross-entropy: shapes " + shape_string(shape) + " and " + shape_string(target.shape()) +
                     " do not conform");
  }
  const double rows = static_cast<double>(target.rows());
  const NodeId log_p = log_softmax_rows(g, logits);
  const NodeId weighted = mul(g, log_p, g.constant(target));
  return scale(g, sum(g, weighted), -1.0 / rows);
}

}  // namespace ops

double grad_check(const ScalarFn& fn, const Array& point, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  auto evaluate = [&](const Array& x) {
    Graph g;
    const NodeId root = fn(g, g.variable(x));
    const double v = g.value(root).item();
    if (!std::isfinite(v)) throw std::domain_error("grad_check: non-finite function value");
    return v;
  };

  Graph g;
  const NodeId x = g.variable(point);
  const NodeId root = fn(g, x);
  if (!std::isfinite(g.value(root).item())) throw std::domain_error("grad_check: non-finite function value");
  const Array analytic = g.backward(root)[x];

  double worst = 0.0;
  Array probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    probe[i] = point[i] + eps;
    const double up = evaluate(probe);
    probe[i] = point[i] - eps;
    const double down = evaluate(probe);
    probe[i] = point[i];
    const double central = (up - down) / (2.0 * eps);
    const double err = std::abs(analytic[i] - central) / std::max(1e-12, std::abs(analytic[i]) + std::abs(central));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace opencos
