#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <vector>

#include "cirlab/tensor.hpp"

namespace cirlab {

// Reverse-mode tape over dense tensors. Nodes are recorded in construction
// order; backward() walks the tape in reverse, accumulating gradients (+=) at
// fan-out. One Graph instance per training step; values are immutable once
// recorded.
class Graph {
 public:
  using NodeId = std::int32_t;

  NodeId input(Tensor value, bool requires_grad = false);
  NodeId constant(Tensor value) { return input(std::move(value), false); }
  NodeId constant_scalar(double v) { return constant(Tensor::scalar(v)); }

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);  // elementwise
  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  NodeId relu(NodeId a);
  NodeId log_softmax(NodeId a);  // row-wise over a matrix
  NodeId mean(NodeId a);         // scalar
  NodeId sum(NodeId a);          // scalar
  NodeId sum_sq(NodeId a);       // scalar
  NodeId scale(NodeId a, double s);
  NodeId add_scalar(NodeId a, double s);
  NodeId add_row(NodeId a, NodeId row);  // matrix + length-cols row vector
  NodeId concat_rows(NodeId a, NodeId b);
  NodeId reshape(NodeId a, Shape s);
  NodeId row_normalize(NodeId a);  // each row divided by sqrt(|row|^2 + 1e-12)

  const Tensor& value(NodeId id) const { return node(id).value; }
  const Tensor& grad(NodeId id) const;
  bool requires_grad(NodeId id) const { return node(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // root must be a scalar (one element). Fills gradient slots of every node
  // that requires grad; leaves not reachable from root keep zero gradients.
  void backward(NodeId root);

  // Smallest |x| feeding any ReLU in this graph. Lets callers keep
  // finite-difference probes away from the kink.
  double min_abs_relu_input() const;

 private:
  enum class Op : std::uint8_t {
    Input, Add, Sub, Mul, MatMul, Transpose, Relu, LogSoftmax,
    Mean, Sum, SumSq, Scale, AddScalar, AddRow, ConcatRows, Reshape, RowNormalize
  };
  struct Node {
    Op op = Op::Input;
    Tensor value;
    Tensor grad;  // allocated lazily by backward()
    std::array<NodeId, 2> parent{-1, -1};
    double scalar_arg = 0.0;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;  // deque: node references stay valid as the tape grows
  bool grads_valid_ = false;

  NodeId push(Node n);
  Node& node(NodeId id);
  const Node& node(NodeId id) const;
  void check_same_shape(const char* op, NodeId a, NodeId b) const;
};

}  // namespace cirlab
