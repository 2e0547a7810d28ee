#include "cirlab/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace cirlab {

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace

Graph::NodeId Graph::push(Node n) {
  if (grads_valid_) grads_valid_ = false;
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

Graph::Node& Graph::node(NodeId id) {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) throw std::out_of_range("bad node id");
  return nodes_[static_cast<std::size_t>(id)];
}

const Graph::Node& Graph::node(NodeId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) throw std::out_of_range("bad node id");
  return nodes_[static_cast<std::size_t>(id)];
}

void Graph::check_same_shape(const char* op, NodeId a, NodeId b) const {
  if (node(a).value.shape != node(b).value.shape) shape_error(op, node(a).value.shape, node(b).value.shape);
}

Graph::NodeId Graph::input(Tensor value, bool requires_grad) {
  Node n;
  n.op = Op::Input;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Graph::NodeId Graph::add(NodeId a, NodeId b) {
  check_same_shape("add", a, b);
  Node n;
  n.op = Op::Add;
  n.parent = {a, b};
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  n.value = node(a).value;
  const auto& bd = node(b).value.data;
  for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] += bd[i];
  return push(std::move(n));
}

Graph::NodeId Graph::sub(NodeId a, NodeId b) {
  check_same_shape("sub", a, b);
  Node n;
  n.op = Op::Sub;
  n.parent = {a, b};
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  n.value = node(a).value;
  const auto& bd = node(b).value.data;
  for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] -= bd[i];
  return push(std::move(n));
}

Graph::NodeId Graph::mul(NodeId a, NodeId b) {
  check_same_shape("mul", a, b);
  Node n;
  n.op = Op::Mul;
  n.parent = {a, b};
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  n.value = node(a).value;
  const auto& bd = node(b).value.data;
  for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] *= bd[i];
  return push(std::move(n));
}

Graph::NodeId Graph::matmul(NodeId a, NodeId b) {
  const Tensor& A = node(a).value;
  const Tensor& B = node(b).value;
  if (!A.is_matrix() || !B.is_matrix() || A.cols() != B.rows()) shape_error("matmul", A.shape, B.shape);
  const std::size_t m = A.rows(), k = A.cols(), p = B.cols();
  Node n;
  n.op = Op::MatMul;
  n.parent = {a, b};
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  n.value = Tensor(Shape{m, p});
  // i,k,j order: each output element still accumulates terms in ascending k,
  // so results are bit-identical to the naive i,j,k loop.
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = &A.data[i * k];
    double* orow = &n.value.data[i * p];
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = &B.data[kk * p];
      for (std::size_t j = 0; j < p; ++j) orow[j] += av * brow[j];
    }
  }
  return push(std::move(n));
}

Graph::NodeId Graph::transpose(NodeId a) {
  const Tensor& A = node(a).value;
  if (!A.is_matrix()) throw std::invalid_argument("transpose: expected matrix, got " + shape_str(A.shape));
  Node n;
  n.op = Op::Transpose;
  n.parent = {a, -1};
  n.requires_grad = node(a).requires_grad;
  n.value = Tensor(Shape{A.cols(), A.rows()});
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) n.value.at(j, i) = A.at(i, j);
  return push(std::move(n));
}

Graph::NodeId Graph::relu(NodeId a) {
  Node n;
  n.op = Op::Relu;
  n.parent = {a, -1};
  n.requires_grad = node(a).requires_grad;
  n.value = node(a).value;
  for (double& v : n.value.data) v = v > 0.0 ? v : 0.0;
  return push(std::move(n));
}

Graph::NodeId Graph::log_softmax(NodeId a) {
  const Tensor& A = node(a).value;
  if (!A.is_matrix()) throw std::invalid_argument("log_softmax: expected matrix, got " + shape_str(A.shape));
  Node n;
  n.op = Op::LogSoftmax;
  n.parent = {a, -1};
  n.requires_grad = node(a).requires_grad;
  n.value = A;
  const std::size_t c = A.cols();
  for (std::size_t i = 0; i < A.rows(); ++i) {
    double* row = &n.value.data[i * c];
    double m = row[0];
    for (std::size_t j = 1; j < c; ++j) m = row[j] > m ? row[j] : m;
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - m);
    const double lz = m + std::log(z);
    for (std::size_t j = 0; j < c; ++j) row[j] -= lz;
  }
  return push(std::move(n));
}

Graph::NodeId Graph::mean(NodeId a) {
  const Tensor& A = node(a).value;
  Node n;
  n.op = Op::Mean;
  n.parent = {a, -1};
  n.requires_grad = node(a).requires_grad;
  double s = 0.0;
  for (double v : A.data) s += v;
  n.value = Tensor::scalar(s / static_cast<double>(A.numel()));
  return push(std::move(n));
}

Graph::NodeId Graph::sum(NodeId a) {
  Node n;
  n.op = Op::Sum;
  n.parent = {a, -1};
  n.requires_grad = node(a).requires_grad;
  double s = 0.0;
  for (double v : node(a).value.data) s += v;
  n.value = Tensor::scalar(s);
  return push(std::move(n));
}

Graph::NodeId Graph::sum_sq(NodeId a) {
  Node n;
  n.op = Op::SumSq;
  n.parent = {a, -1};
  n.requires_grad = node(a).requires_grad;
  double s = 0.0;
  for (double v : node(a).value.data) s += v * v;
  n.value = Tensor::scalar(s);
  return push(std::move(n));
}

Graph::NodeId Graph::scale(NodeId a, double s) {
  Node n;
  n.op = Op::Scale;
  n.parent = {a, -1};
  n.scalar_arg = s;
  n.requires_grad = node(a).requires_grad;
  n.value = node(a).value;
  for (double& v : n.value.data) v *= s;
  return push(std::move(n));
}

Graph::NodeId Graph::add_scalar(NodeId a, double s) {
  Node n;
  n.op = Op::AddScalar;
  n.parent = {a, -1};
  n.scalar_arg = s;
  n.requires_grad = node(a).requires_grad;
  n.value = node(a).value;
  for (double& v : n.value.data) v += s;
  return push(std::move(n));
}

Graph::NodeId Graph::add_row(NodeId a, NodeId row) {
  const Tensor& A = node(a).value;
  const Tensor& R = node(row).value;
  if (!A.is_matrix() || R.numel() != A.cols()) shape_error("add_row", A.shape, R.shape);
  Node n;
  n.op = Op::AddRow;
  n.parent = {a, row};
  n.requires_grad = node(a).requires_grad || node(row).requires_grad;
  n.value = A;
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) n.value.at(i, j) += R.data[j];
  return push(std::move(n));
}

Graph::NodeId Graph::concat_rows(NodeId a, NodeId b) {
  const Tensor& A = node(a).value;
  const Tensor& B = node(b).value;
  if (!A.is_matrix() || !B.is_matrix() || A.cols() != B.cols()) shape_error("concat_rows", A.shape, B.shape);
  Node n;
  n.op = Op::ConcatRows;
  n.parent = {a, b};
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  n.value = Tensor(Shape{A.rows() + B.rows(), A.cols()});
  std::copy(A.data.begin(), A.data.end(), n.value.data.begin());
  std::copy(B.data.begin(), B.data.end(), n.value.data.begin() + static_cast<std::ptrdiff_t>(A.data.size()));
  return push(std::move(n));
}

Graph::NodeId Graph::row_normalize(NodeId a) {
  const Tensor& A = node(a).value;
  if (!A.is_matrix()) throw std::invalid_argument("row_normalize: expected matrix, got " + shape_str(A.shape));
  Node n;
  n.op = Op::RowNormalize;
  n.parent = {a, -1};
  n.requires_grad = node(a).requires_grad;
  n.value = A;
  const std::size_t c = A.cols();
  for (std::size_t i = 0; i < A.rows(); ++i) {
    double s = 1e-12;
    for (std::size_t j = 0; j < c; ++j) s += A.data[i * c + j] * A.data[i * c + j];
    const double inv = 1.0 / std::sqrt(s);
    for (std::size_t j = 0; j < c; ++j) n.value.data[i * c + j] *= inv;
  }
  return push(std::move(n));
}

Graph::NodeId Graph::reshape(NodeId a, Shape s) {
  const Tensor& A = node(a).value;
  if (shape_numel(s) != A.numel()) shape_error("reshape", A.shape, s);
  Node n;
  n.op = Op::Reshape;
  n.parent = {a, -1};
  n.requires_grad = node(a).requires_grad;
  n.value = A;
  n.value.shape = std::move(s);
  return push(std::move(n));
}

const Tensor& Graph::grad(NodeId id) const {
  const Node& n = node(id);
  if (!grads_valid_) throw std::logic_error("grad() before backward()");
  if (n.grad.numel() == 0) throw std::logic_error("node has no gradient slot (requires_grad not set)");
  return n.grad;
}

void Graph::backward(NodeId root) {
  Node& r = node(root);
  if (r.value.numel() != 1)
    throw std::invalid_argument("backward: root must be scalar, got shape " + shape_str(r.value.shape));

  // Which nodes need a gradient slot: requires_grad leaves and everything
  // downstream of them.
  std::vector<char> needs(nodes_.size(), 0);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    bool need = n.op == Op::Input ? n.requires_grad : false;
    for (NodeId p : n.parent)
      if (p >= 0 && needs[static_cast<std::size_t>(p)]) need = true;
    needs[i] = need ? 1 : 0;
    if (need) {
      n.grad = Tensor(n.value.shape, 0.0);
    } else {
      n.grad = Tensor();
    }
  }
  if (needs[static_cast<std::size_t>(root)]) {
    node(root).grad.data[0] = 1.0;
  }

  for (std::int64_t i = root; i >= 0; --i) {
    const std::size_t ui = static_cast<std::size_t>(i);
    if (!needs[ui]) continue;
    Node& n = nodes_[ui];
    const Tensor& g = n.grad;
    switch (n.op) {
      case Op::Input:
        break;
      case Op::Add: {
        for (int s = 0; s < 2; ++s) {
          Node& p = node(n.parent[s]);
          if (p.grad.numel() == 0) continue;
          for (std::size_t j = 0; j < g.data.size(); ++j) p.grad.data[j] += g.data[j];
        }
        break;
      }
      case Op::Sub: {
        Node& pa = node(n.parent[0]);
        Node& pb = node(n.parent[1]);
        if (pa.grad.numel())
          for (std::size_t j = 0; j < g.data.size(); ++j) pa.grad.data[j] += g.data[j];
        if (pb.grad.numel())
          for (std::size_t j = 0; j < g.data.size(); ++j) pb.grad.data[j] -= g.data[j];
        break;
      }
      case Op::Mul: {
        Node& pa = node(n.parent[0]);
        Node& pb = node(n.parent[1]);
        if (pa.grad.numel())
          for (std::size_t j = 0; j < g.data.size(); ++j) pa.grad.data[j] += g.data[j] * pb.value.data[j];
        if (pb.grad.numel())
          for (std::size_t j = 0; j < g.data.size(); ++j) pb.grad.data[j] += g.data[j] * pa.value.data[j];
        break;
      }
      case Op::MatMul: {
        Node& pa = node(n.parent[0]);
        Node& pb = node(n.parent[1]);
        const Tensor& A = pa.value;
        const Tensor& B = pb.value;
        const std::size_t m = A.rows(), k = A.cols(), p = B.cols();
        if (pa.grad.numel()) {
          // dA += G * B^T
          for (std::size_t i2 = 0; i2 < m; ++i2)
            for (std::size_t j2 = 0; j2 < k; ++j2) {
              double acc = 0.0;
              for (std::size_t l = 0; l < p; ++l) acc += g.data[i2 * p + l] * B.data[j2 * p + l];
              pa.grad.data[i2 * k + j2] += acc;
            }
        }
        if (pb.grad.numel()) {
          // dB += A^T * G
          for (std::size_t i2 = 0; i2 < k; ++i2)
            for (std::size_t j2 = 0; j2 < p; ++j2) {
              double acc = 0.0;
              for (std::size_t l = 0; l < m; ++l) acc += A.data[l * k + i2] * g.data[l * p + j2];
              pb.grad.data[i2 * p + j2] += acc;
            }
        }
        break;
      }
      case Op::Transpose: {
        Node& pa = node(n.parent[0]);
        if (pa.grad.numel()) {
          const std::size_t r = n.value.rows(), c = n.value.cols();
          for (std::size_t i2 = 0; i2 < r; ++i2)
            for (std::size_t j2 = 0; j2 < c; ++j2) pa.grad.at(j2, i2) += g.at(i2, j2);
        }
        break;
      }
      case Op::Relu: {
        Node& pa = node(n.parent[0]);
        if (pa.grad.numel())
          for (std::size_t j = 0; j < g.data.size(); ++j)
            if (pa.value.data[j] > 0.0) pa.grad.data[j] += g.data[j];
        break;
      }
      case Op::LogSoftmax: {
        Node& pa = node(n.parent[0]);
        if (pa.grad.numel()) {
          const std::size_t c = n.value.cols();
          for (std::size_t i2 = 0; i2 < n.value.rows(); ++i2) {
            double gsum = 0.0;
            for (std::size_t j2 = 0; j2 < c; ++j2) gsum += g.data[i2 * c + j2];
            for (std::size_t j2 = 0; j2 < c; ++j2) {
              const double softmax = std::exp(n.value.data[i2 * c + j2]);
              pa.grad.data[i2 * c + j2] += g.data[i2 * c + j2] - softmax * gsum;
            }
          }
        }
        break;
      }
      case Op::Mean: {
        Node& pa = node(n.parent[0]);
        if (pa.grad.numel()) {
          const double gv = g.data[0] / static_cast<double>(pa.value.numel());
          for (double& d : pa.grad.data) d += gv;
        }
        break;
      }
      case Op::Sum: {
        Node& pa = node(n.parent[0]);
        if (pa.grad.numel()) {
          const double gv = g.data[0];
          for (double& d : pa.grad.data) d += gv;
        }
        break;
      }
      case Op::SumSq: {
        Node& pa = node(n.parent[0]);
        if (pa.grad.numel()) {
          const double gv = g.data[0];
          for (std::size_t j = 0; j < pa.value.data.size(); ++j) pa.grad.data[j] += 2.0 * pa.value.data[j] * gv;
        }
        break;
      }
      case Op::Scale: {
        Node& pa = node(n.parent[0]);
        if (pa.grad.numel())
          for (std::size_t j = 0; j < g.data.size(); ++j) pa.grad.data[j] += n.scalar_arg * g.data[j];
        break;
      }
      case Op::AddScalar: {
        Node& pa = node(n.parent[0]);
        if (pa.grad.numel())
          for (std::size_t j = 0; j < g.data.size(); ++j) pa.grad.data[j] += g.data[j];
        break;
      }
      case Op::AddRow: {
        Node& pa = node(n.parent[0]);
        Node& pr = node(n.parent[1]);
        const std::size_t c = n.value.cols();
        if (pa.grad.numel())
          for (std::size_t j = 0; j < g.data.size(); ++j) pa.grad.data[j] += g.data[j];
        if (pr.grad.numel())
          for (std::size_t i2 = 0; i2 < n.value.rows(); ++i2)
            for (std::size_t j2 = 0; j2 < c; ++j2) pr.grad.data[j2] += g.data[i2 * c + j2];
        break;
      }
      case Op::ConcatRows: {
        Node& pa = node(n.parent[0]);
        Node& pb = node(n.parent[1]);
        const std::size_t na = pa.value.numel();
        if (pa.grad.numel())
          for (std::size_t j = 0; j < na; ++j) pa.grad.data[j] += g.data[j];
        if (pb.grad.numel())
          for (std::size_t j = 0; j < pb.value.numel(); ++j) pb.grad.data[j] += g.data[na + j];
        break;
      }
      case Op::Reshape: {
        Node& pa = node(n.parent[0]);
        if (pa.grad.numel())
          for (std::size_t j = 0; j < g.data.size(); ++j) pa.grad.data[j] += g.data[j];
        break;
      }
      case Op::RowNormalize: {
        Node& pa = node(n.parent[0]);
        if (pa.grad.numel()) {
          const std::size_t c = n.value.cols();
          for (std::size_t i = 0; i < n.value.rows(); ++i) {
            double s = 1e-12, dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double x = pa.value.data[i * c + j];
              s += x * x;
              dot += g.data[i * c + j] * x;
            }
            const double inv = 1.0 / std::sqrt(s);
            const double inv3 = inv * inv * inv;
            for (std::size_t j = 0; j < c; ++j)
              pa.grad.data[i * c + j] += g.data[i * c + j] * inv - pa.value.data[i * c + j] * dot * inv3;
          }
        }
        break;
      }
    }
  }
  grads_valid_ = true;
}

double Graph::min_abs_relu_input() const {
  double best = std::numeric_limits<double>::infinity();
  for (const Node& n : nodes_) {
    if (n.op != Op::Relu) continue;
    const Node& p = node(n.parent[0]);
    for (double v : p.value.data) {
      const double a = std::fabs(v);
      if (a < best) best = a;
    }
  }
  return best;
}

}  // namespace cirlab
