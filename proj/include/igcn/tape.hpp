#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <deque>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "igcn/tensor.hpp"

namespace igcn {

// Trainable matrix (or N x 1 vector) with its gradient accumulator.
struct Parameter {
  DenseMatrix value;
  DenseMatrix grad;
  bool trainable = true;

  Parameter() = default;
  explicit Parameter(DenseMatrix v, bool trainable_ = true)
      : value(std::move(v)), grad(value.rows(), value.cols()), trainable(trainable_) {}

  void zero_grad() {
    if (!grad.same_shape(value)) grad = DenseMatrix(value.rows(), value.cols());
    grad.fill(0.0);
  }
};

struct Var {
  std::size_t id;
};

// Node holding a sparse matrix whose pattern is fixed and whose values are differentiable.
struct SparseVar {
  std::size_t id;
};

enum class OpKind {
  Constant,
  Leaf,
  MatMul,
  SpMM,
  SpMMVar,
  InfluenceScale,
  Relu,
  Dropout,
  Add,
  Sum,
  SoftmaxCrossEntropy,
};

struct TapeError : std::logic_error {
  using std::logic_error::logic_error;
};

// Records operations in execution order (which is a topological order) and
// replays them in reverse to accumulate gradients into leaf Parameters.
// Sparse operands passed by reference must outlive the tape; use hold() for temporaries.
class Tape {
 public:
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

  Var constant(DenseMatrix value) {
    Node n;
    n.kind = OpKind::Constant;
    n.value = std::move(value);
    return push_dense(std::move(n));
  }

  Var parameter(Parameter& p) {
    Node n;
    n.kind = OpKind::Leaf;
    n.value = p.value;
    n.param = &p;
    n.requires_grad = p.trainable;
    return push_dense(std::move(n));
  }

  const SparseMatrix& hold(SparseMatrix s) { return held_.emplace_back(std::move(s)); }

  Var matmul(Var a, Var b) {
    Node n = op(OpKind::MatMul, a.id, b.id);
    n.value = igcn::matmul(value(a), value(b));
    return push_dense(std::move(n));
  }

  Var spmm(const SparseMatrix& s, Var d) {
    Node n = op(OpKind::SpMM, d.id);
    n.operand = &s;
    n.value = igcn::spmm(s, value(d));
    return push_dense(std::move(n));
  }

  Var spmm(SparseVar s, Var d) {
    Node n = op(OpKind::SpMMVar, s.id, d.id);
    n.value = igcn::spmm(sparse_value(s), value(d));
    return push_dense(std::move(n));
  }

  // A_I[i,i] = alpha_i * ahat[i,i]; A_I[i,j] = (1 - alpha_j) * ahat[i,j] for i != j.
  SparseVar influence_scale(Var alpha, const SparseMatrix& ahat) {
    const DenseMatrix& a = value(alpha);
    if (ahat.rows() != ahat.cols()) throw ShapeError("influence_scale: adjacency " + ahat.shape() + " not square");
    if (a.cols() != 1 || a.rows() != ahat.rows()) {
      throw ShapeError("influence_scale: alpha " + a.shape() + " does not match adjacency " + ahat.shape());
    }
    Node n = op(OpKind::InfluenceScale, alpha.id);
    n.operand = &ahat;
    std::vector<double> vals(ahat.nnz());
    for (std::size_t i = 0; i < ahat.rows(); ++i) {
      for (std::size_t k = ahat.offsets()[i]; k < ahat.offsets()[i + 1]; ++k) {
        const std::size_t j = ahat.indices()[k];
        vals[k] = (i == j ? a(j, 0) : 1.0 - a(j, 0)) * ahat.values()[k];
      }
    }
    n.sparse_value = ahat.with_values(std::move(vals));
    n.is_sparse = true;
    nodes_.push_back(std::move(n));
    return SparseVar{nodes_.size() - 1};
  }

  Var relu(Var x) {
    Node n = op(OpKind::Relu, x.id);
    n.value = value(x);
    for (auto& v : n.value.values()) v = v > 0.0 ? v : 0.0;
    return push_dense(std::move(n));
  }

  // Inverted dropout. Eval mode and rate 0 return the input unchanged and draw nothing from rng.
  template <class Rng>
  Var dropout(Var x, double rate, bool training, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must lie in [0, 1)");
    if (!training || rate == 0.0) return x;
    Node n = op(OpKind::Dropout, x.id);
    const DenseMatrix& in = value(x);
    n.aux = DenseMatrix(in.rows(), in.cols());
    n.value = in;
    const double keep_scale = 1.0 / (1.0 - rate);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < in.size(); ++i) {
      const double m = u(rng) < rate ? 0.0 : keep_scale;
      n.aux.values()[i] = m;
      n.value.values()[i] *= m;
    }
    return push_dense(std::move(n));
  }

  Var add(Var a, Var b) {
    const DenseMatrix& av = value(a);
    const DenseMatrix& bv = value(b);
    if (!av.same_shape(bv)) throw ShapeError("add: incompatible shapes " + av.shape() + " and " + bv.shape());
    Node n = op(OpKind::Add, a.id, b.id);
    n.value = av + bv;
    return push_dense(std::move(n));
  }

  Var sum(Var x) {
    Node n = op(OpKind::Sum, x.id);
    double s = 0.0;
    for (double v : value(x).values()) s += v;
    n.value = DenseMatrix(1, 1, s);
    return push_dense(std::move(n));
  }

  // Mean over masked rows of -log softmax(logits_i)[label_i]; returns a 1x1 node.
  Var softmax_cross_entropy(Var logits, std::span<const int> labels, std::span<const std::size_t> mask) {
    const DenseMatrix& z = value(logits);
    if (mask.empty()) throw std::invalid_argument("softmax_cross_entropy: empty mask");
    if (labels.size() != z.rows()) {
      throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " + z.shape());
    }
    Node n = op(OpKind::SoftmaxCrossEntropy, logits.id);
    n.rows.assign(mask.begin(), mask.end());
    n.labels.assign(labels.begin(), labels.end());
    n.aux = DenseMatrix(mask.size(), z.cols());
    double total = 0.0;
    for (std::size_t m = 0; m < mask.size(); ++m) {
      const std::size_t i = mask[m];
      if (i >= z.rows()) throw std::out_of_range("softmax_cross_entropy: masked row out of range");
      const int y = labels[i];
      if (y < 0 || static_cast<std::size_t>(y) >= z.cols()) {
        throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(y) + " outside [0," +
                                std::to_string(z.cols()) + ")");
      }
      const auto row = z.row(i);
      double mx = row[0];
      for (double v : row) mx = std::max(mx, v);
      double denom = 0.0;
      for (double v : row) denom += std::exp(v - mx);
      const double log_denom = std::log(denom);
      auto p = n.aux.row(m);
      for (std::size_t c = 0; c < row.size(); ++c) p[c] = std::exp(row[c] - mx - log_denom);
      total += log_denom - (row[static_cast<std::size_t>(y)] - mx);
    }
    n.value = DenseMatrix(1, 1, total / static_cast<double>(mask.size()));
    return push_dense(std::move(n));
  }

  void backward(Var loss) {
    if (nodes_.empty() || loss.id >= nodes_.size()) throw TapeError("backward: loss node was never recorded");
    Node& root = nodes_[loss.id];
    if (root.is_sparse || root.value.rows() != 1 || root.value.cols() != 1) {
      throw TapeError("backward: root must be a scalar, got " + root.value.shape());
    }
    for (auto& n : nodes_) {
      n.grad = DenseMatrix();
      n.sparse_grad.clear();
    }
    root.grad = DenseMatrix(1, 1, 1.0);
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad) continue;
      if (n.is_sparse ? n.sparse_grad.empty() : n.grad.empty()) continue;
      propagate(n);
    }
  }

  const DenseMatrix& value(Var v) const { return node(v.id, false).value; }
  const SparseMatrix& sparse_value(SparseVar v) const { return node(v.id, true).sparse_value; }
  double scalar(Var v) const { return value(v)(0, 0); }
  std::size_t size() const { return nodes_.size(); }
  OpKind kind(std::size_t id) const { return nodes_.at(id).kind; }
  std::array<std::size_t, 2> inputs(std::size_t id) const { return nodes_.at(id).inputs; }

 private:
  struct Node {
    OpKind kind = OpKind::Constant;
    std::array<std::size_t, 2> inputs{npos, npos};
    DenseMatrix value;
    SparseMatrix sparse_value;
    bool is_sparse = false;
    DenseMatrix grad;
    std::vector<double> sparse_grad;
    DenseMatrix aux;                       // dropout mask, or softmax rows for the loss
    const SparseMatrix* operand = nullptr;  // constant sparse factor
    Parameter* param = nullptr;
    std::vector<std::size_t> rows;
    std::vector<int> labels;
    bool requires_grad = false;
  };

  const Node& node(std::size_t id, bool sparse) const {
    if (id >= nodes_.size()) throw TapeError("tape: unknown node " + std::to_string(id));
    const Node& n = nodes_[id];
    if (n.is_sparse != sparse) throw TapeError("tape: node " + std::to_string(id) + " has the wrong kind");
    return n;
  }

  Node op(OpKind kind, std::size_t a, std::size_t b = npos) {
    Node n;
    n.kind = kind;
    n.inputs = {a, b};
    n.requires_grad = nodes_.at(a).requires_grad || (b != npos && nodes_.at(b).requires_grad);
    return n;
  }

  Var push_dense(Node n) {
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  DenseMatrix* dense_grad_of(std::size_t id) {
    Node& in = nodes_[id];
    if (!in.requires_grad) return nullptr;
    if (in.grad.empty()) in.grad = DenseMatrix(in.value.rows(), in.value.cols());
    return &in.grad;
  }

  std::vector<double>* sparse_grad_of(std::size_t id) {
    Node& in = nodes_[id];
    if (!in.requires_grad) return nullptr;
    if (in.sparse_grad.empty()) in.sparse_grad.assign(in.sparse_value.nnz(), 0.0);
    return &in.sparse_grad;
  }

  static void accumulate(DenseMatrix& dst, const DenseMatrix& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst.values()[i] += src.values()[i];
  }

  void propagate(Node& n) {
    const DenseMatrix& g = n.grad;
    switch (n.kind) {
      case OpKind::Constant:
        break;
      case OpKind::Leaf:
        if (!n.param->grad.same_shape(n.param->value)) n.param->zero_grad();
        accumulate(n.param->grad, g);
        break;
      case OpKind::MatMul: {
        const DenseMatrix& a = nodes_[n.inputs[0]].value;
        const DenseMatrix& b = nodes_[n.inputs[1]].value;
        if (auto* ga = dense_grad_of(n.inputs[0])) accumulate(*ga, matmul_nt(g, b));
        if (auto* gb = dense_grad_of(n.inputs[1])) accumulate(*gb, matmul_tn(a, g));
        break;
      }
      case OpKind::SpMM:
        if (auto* gd = dense_grad_of(n.inputs[0])) accumulate(*gd, spmm_tn(*n.operand, g));
        break;
      case OpKind::SpMMVar: {
        const SparseMatrix& s = nodes_[n.inputs[0]].sparse_value;
        const DenseMatrix& d = nodes_[n.inputs[1]].value;
        if (auto* gd = dense_grad_of(n.inputs[1])) accumulate(*gd, spmm_tn(s, g));
        if (auto* gs = sparse_grad_of(n.inputs[0])) {
          for (std::size_t i = 0; i < s.rows(); ++i) {
            const auto gi = g.row(i);
            for (std::size_t k = s.offsets()[i]; k < s.offsets()[i + 1]; ++k) {
              const auto dj = d.row(s.indices()[k]);
              double acc = 0.0;
              for (std::size_t c = 0; c < gi.size(); ++c) acc += gi[c] * dj[c];
              (*gs)[k] += acc;
            }
          }
        }
        break;
      }
      case OpKind::InfluenceScale: {
        auto* ga = dense_grad_of(n.inputs[0]);
        if (!ga) break;
        const SparseMatrix& ahat = *n.operand;
        for (std::size_t i = 0; i < ahat.rows(); ++i) {
          for (std::size_t k = ahat.offsets()[i]; k < ahat.offsets()[i + 1]; ++k) {
            const std::size_t j = ahat.indices()[k];
            const double w = ahat.values()[k] * n.sparse_grad[k];
            (*ga)(j, 0) += i == j ? w : -w;
          }
        }
        break;
      }
      case OpKind::Relu: {
        auto* gx = dense_grad_of(n.inputs[0]);
        if (!gx) break;
        const DenseMatrix& x = nodes_[n.inputs[0]].value;
        for (std::size_t i = 0; i < x.size(); ++i)
          if (x.values()[i] > 0.0) gx->values()[i] += g.values()[i];
        break;
      }
      case OpKind::Dropout: {
        auto* gx = dense_grad_of(n.inputs[0]);
        if (!gx) break;
        for (std::size_t i = 0; i < g.size(); ++i) gx->values()[i] += g.values()[i] * n.aux.values()[i];
        break;
      }
      case OpKind::Add:
        if (auto* ga = dense_grad_of(n.inputs[0])) accumulate(*ga, g);
        if (auto* gb = dense_grad_of(n.inputs[1])) accumulate(*gb, g);
        break;
      case OpKind::Sum:
        if (auto* gx = dense_grad_of(n.inputs[0]))
          for (auto& v : gx->values()) v += g(0, 0);
        break;
      case OpKind::SoftmaxCrossEntropy: {
        auto* gz = dense_grad_of(n.inputs[0]);
        if (!gz) break;
        const double scale = g(0, 0) / static_cast<double>(n.rows.size());
        for (std::size_t m = 0; m < n.rows.size(); ++m) {
          const std::size_t i = n.rows[m];
          const auto p = n.aux.row(m);
          auto out = gz->row(i);
          for (std::size_t c = 0; c < p.size(); ++c) out[c] += scale * p[c];
          out[static_cast<std::size_t>(n.labels[i])] -= scale;
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  std::deque<SparseMatrix> held_;
};

// Inverted dropout on the stored entries of a constant sparse input.
template <class Rng>
SparseMatrix dropout(const SparseMatrix& x, double rate, bool training, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  std::vector<double> vals = x.values();
  const double keep_scale = 1.0 / (1.0 - rate);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : vals) v = u(rng) < rate ? 0.0 : v * keep_scale;
  return x.with_values(std::move(vals));
}

}  // namespace igcn
