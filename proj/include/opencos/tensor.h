#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace opencos {

/// Raised when operand shapes do not conform for an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles.
///
/// Row-wise operations treat the last dimension as columns and every leading
/// dimension as rows, so a vector of length n is a single row.
class Array {
 public:
  Array() = default;
  Array(Shape shape, std::vector<double> data);

  static Array zeros(Shape shape);
  static Array filled(Shape shape, double value);
  static Array scalar(double value);
  static Array matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Array row(std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : data_.size() / cols(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  std::span<const double> row_span(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols(), cols());
  }
  std::span<double> row_span(std::size_t r) { return std::span<double>(data_).subspan(r * cols(), cols()); }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double item() const;

  bool operator==(const Array& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

enum class OpKind {
  kConstant,
  kVariable,
  kMatMul,
  kAdd,
  kScale,
  kRelu,
  kMean,
  kSum,
  kExp,
  kLog,
  kSoftmaxRows,
  kLogSoftmaxRows,
  kL2NormalizeRows,
  kMul,
  kConcatRows,
  kSliceRows,
  kTranspose,
  kStandardizeColumns,
};

const char* op_name(OpKind kind);

/// Extra operands for kinds that need them: the factor for kScale, the half-open
/// row range for kSliceRows, and the variance epsilon for kStandardizeColumns.
struct OpAttrs {
  double scalar = 0.0;
  std::size_t begin = 0;
  std::size_t end = 0;
};

using NodeId = std::size_t;

class Gradients {
 public:
  explicit Gradients(std::vector<Array> grads) : grads_(std::move(grads)) {}
  const Array& operator[](NodeId id) const { return grads_.at(id); }
  std::size_t size() const { return grads_.size(); }

 private:
  std::vector<Array> grads_;
};

/// Append-only computation tape. Node ids are positions in the tape, so the
/// node order is always a valid topological order.
class Graph {
 public:
  NodeId constant(Array value);
  NodeId variable(Array value);
  NodeId apply(OpKind kind, std::span<const NodeId> inputs, OpAttrs attrs = {});
  NodeId apply(OpKind kind, std::initializer_list<NodeId> inputs, OpAttrs attrs = {}) {
    return apply(kind, std::span<const NodeId>(inputs.begin(), inputs.size()), attrs);
  }

  const Array& value(NodeId id) const { return nodes_.at(id).value; }
  OpKind kind(NodeId id) const { return nodes_.at(id).kind; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse-mode sweep from a scalar root. Nodes the root does not depend on
  /// receive zero gradients.
  Gradients backward(NodeId root) const;

 private:
  struct Node {
    OpKind kind;
    std::vector<NodeId> inputs;
    OpAttrs attrs;
    Array value;
    Array saved;  // per-kind forward byproduct (row norms, inverse std)
    bool needs_grad = false;
  };

  void backprop_node(const Node& node, const Array& grad, std::vector<Array>& grads) const;

  std::vector<Node> nodes_;
};

// Thin builders over Graph::apply.
namespace ops {
NodeId matmul(Graph& g, NodeId a, NodeId b);
NodeId add(Graph& g, NodeId a, NodeId b);
NodeId sub(Graph& g, NodeId a, NodeId b);
NodeId scale(Graph& g, NodeId a, double factor);
NodeId relu(Graph& g, NodeId a);
NodeId mean(Graph& g, NodeId a);
NodeId sum(Graph& g, NodeId a);
NodeId exp(Graph& g, NodeId a);
NodeId log(Graph& g, NodeId a);
NodeId softmax_rows(Graph& g, NodeId a);
NodeId log_softmax_rows(Graph& g, NodeId a);
NodeId l2_normalize_rows(Graph& g, NodeId a);
NodeId mul(Graph& g, NodeId a, NodeId b);
NodeId concat_rows(Graph& g, std::span<const NodeId> parts);
NodeId slice_rows(Graph& g, NodeId a, std::size_t begin, std::size_t end);
NodeId transpose(Graph& g, NodeId a);
NodeId standardize_columns(Graph& g, NodeId a, double epsilon);

/// Mean over rows of -sum_c target[r,c] * log_softmax(logits)[r,c]. The
/// target is a constant distribution per row.
NodeId soft_cross_entropy(Graph& g, NodeId logits, const Array& target);
}  // namespace ops

using ScalarFn = std::function<NodeId(Graph&, NodeId)>;

/// Max over coordinates of |analytic - central| / max(1e-12, |analytic| + |central|).
double grad_check(const ScalarFn& fn, const Array& point, double eps);

}  // namespace opencos
