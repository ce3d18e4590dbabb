#pragma once

#include <string>
#include <vector>

#include "diffrec/matrix.hpp"
#include "diffrec/params.hpp"

namespace diffrec {

// Reverse-mode gradient tape for one scalar loss evaluation. Supports exactly
// the operations the models need; not a general autodiff framework.
//
// Nodes are appended in topological order, so the backward pass is a single
// reverse sweep that visits each node once. Gradients only flow into subgraphs
// that contain parameters; everything else is treated as constant.
class Tape {
 public:
  using NodeId = int;

  // Leaf holding a value with no gradient tracking.
  NodeId constant(DenseMatrix value);
  // Leaf bound to a named tensor in `store`. Lifting the same name twice
  // returns the same node, so reuse accumulates gradients correctly.
  NodeId param(ParamStore& store, const std::string& name);

  NodeId matmul(NodeId a, NodeId b);
  // m (r x c) + row vector (1 x c) broadcast over rows.
  NodeId add_rowvec(NodeId m, NodeId row);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);  // elementwise
  // k * a + c, elementwise.
  NodeId affine(NodeId a, double k, double c);
  NodeId tanh(NodeId a);
  NodeId exp(NodeId a);
  NodeId clamp(NodeId a, double lo, double hi);
  NodeId concat_cols(NodeId a, NodeId b);
  NodeId slice_cols(NodeId a, int col0, int col1);
  NodeId sum(NodeId a);              // 1x1
  NodeId sum_squares(NodeId a);      // 1x1
  NodeId dot(NodeId a, NodeId b);    // 1x1, sum of elementwise product
  NodeId row_log_softmax(NodeId a);

  const DenseMatrix& value(NodeId id) const;
  double scalar(NodeId id) const;
  bool requires_grad(NodeId id) const;
  int size() const { return static_cast<int>(nodes_.size()); }

  // Backward from a 1x1 loss node. Returns gradients for every parameter
  // lifted onto this tape (exact zeros for parameters the loss does not
  // depend on). Throws UsageError on an empty tape or non-scalar loss.
  GradMap backward(NodeId loss);

  // Gradient of the last backward() w.r.t. an arbitrary node (zeros if the
  // loss did not depend on it). For tests.
  DenseMatrix grad_of(NodeId id) const;

 private:
  enum class Op {
    kConstant, kParam, kMatMul, kAddRowVec, kAdd, kSub, kMul, kAffine,
    kTanh, kExp, kClamp, kConcatCols, kSliceCols, kSum, kSumSq, kDot,
    kRowLogSoftmax,
  };

  struct Node {
    Op op;
    NodeId a = -1;
    NodeId b = -1;
    double k0 = 0.0, k1 = 0.0;  // affine k/c, clamp lo/hi, slice col0/col1
    DenseMatrix owned;
    // Param values live in their ParamStore (stable addresses); everything
    // else is owned by the node.
    const DenseMatrix* external = nullptr;
    DenseMatrix grad;
    bool needs_grad = false;
    bool grad_live = false;
    std::string param_name;  // only for kParam
  };

  NodeId push(Node n);
  Node& node(NodeId id);
  const Node& node(NodeId id) const;
  DenseMatrix& grad_buf(NodeId id);
  void propagate(NodeId id);

  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, NodeId>> param_nodes_;
};

}  // namespace diffrec
