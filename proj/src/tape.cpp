#include "diffrec/tape.hpp"

#include <algorithm>
#include <cmath>

#include "diffrec/errors.hpp"

namespace diffrec {

namespace {
void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}
}  // namespace

Tape::NodeId Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

Tape::Node& Tape::node(NodeId id) { return nodes_.at(static_cast<std::size_t>(id)); }
const Tape::Node& Tape::node(NodeId id) const {
  return nodes_.at(static_cast<std::size_t>(id));
}

const DenseMatrix& Tape::value(NodeId id) const {
  const Node& n = node(id);
  return n.external ? *n.external : n.owned;
}

double Tape::scalar(NodeId id) const {
  const DenseMatrix& v = value(id);
  require(v.rows == 1 && v.cols == 1, "scalar() on non-1x1 node");
  return v.data[0];
}

bool Tape::requires_grad(NodeId id) const { return node(id).needs_grad; }

Tape::NodeId Tape::constant(DenseMatrix value) {
  Node n;
  n.op = Op::kConstant;
  n.owned = std::move(value);
  return push(std::move(n));
}

Tape::NodeId Tape::param(ParamStore& store, const std::string& name) {
  for (const auto& [pname, id] : param_nodes_)
    if (pname == name) return id;
  Node n;
  n.op = Op::kParam;
  n.external = &store.at(name);
  n.needs_grad = true;
  n.param_name = name;
  NodeId id = push(std::move(n));
  param_nodes_.emplace_back(name, id);
  return id;
}

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
  const DenseMatrix& av = value(a);
  const DenseMatrix& bv = value(b);
  require(av.cols == bv.rows,
          "matmul: " + av.shape_str() + " * " + bv.shape_str());
  Node n;
  n.op = Op::kMatMul;
  n.a = a;
  n.b = b;
  diffrec::matmul(av, bv, n.owned);
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  return push(std::move(n));
}

Tape::NodeId Tape::add_rowvec(NodeId m, NodeId row) {
  const DenseMatrix& mv = value(m);
  const DenseMatrix& rv = value(row);
  require(rv.rows == 1 && rv.cols == mv.cols, "add_rowvec: shape mismatch");
  Node n;
  n.op = Op::kAddRowVec;
  n.a = m;
  n.b = row;
  n.owned = mv;
  for (int r = 0; r < mv.rows; ++r) {
    double* out = n.owned.row_ptr(r);
    for (int c = 0; c < mv.cols; ++c) out[c] += rv.data[c];
  }
  n.needs_grad = node(m).needs_grad || node(row).needs_grad;
  return push(std::move(n));
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  const DenseMatrix& av = value(a);
  const DenseMatrix& bv = value(b);
  require(av.same_shape(bv), "add: shape mismatch");
  Node n;
  n.op = Op::kAdd;
  n.a = a;
  n.b = b;
  n.owned = av;
  for (std::size_t i = 0; i < bv.size(); ++i) n.owned.data[i] += bv.data[i];
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  return push(std::move(n));
}

Tape::NodeId Tape::sub(NodeId a, NodeId b) {
  const DenseMatrix& av = value(a);
  const DenseMatrix& bv = value(b);
  require(av.same_shape(bv), "sub: shape mismatch");
  Node n;
  n.op = Op::kSub;
  n.a = a;
  n.b = b;
  n.owned = av;
  for (std::size_t i = 0; i < bv.size(); ++i) n.owned.data[i] -= bv.data[i];
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  return push(std::move(n));
}

Tape::NodeId Tape::mul(NodeId a, NodeId b) {
  const DenseMatrix& av = value(a);
  const DenseMatrix& bv = value(b);
  require(av.same_shape(bv), "mul: shape mismatch");
  Node n;
  n.op = Op::kMul;
  n.a = a;
  n.b = b;
  n.owned = av;
  for (std::size_t i = 0; i < bv.size(); ++i) n.owned.data[i] *= bv.data[i];
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  return push(std::move(n));
}

Tape::NodeId Tape::affine(NodeId a, double k, double c) {
  Node n;
  n.op = Op::kAffine;
  n.a = a;
  n.k0 = k;
  n.k1 = c;
  n.owned = value(a);
  for (auto& x : n.owned.data) x = k * x + c;
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Tape::NodeId Tape::tanh(NodeId a) {
  Node n;
  n.op = Op::kTanh;
  n.a = a;
  n.owned = value(a);
  for (auto& x : n.owned.data) x = std::tanh(x);
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Tape::NodeId Tape::exp(NodeId a) {
  Node n;
  n.op = Op::kExp;
  n.a = a;
  n.owned = value(a);
  for (auto& x : n.owned.data) x = std::exp(x);
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Tape::NodeId Tape::clamp(NodeId a, double lo, double hi) {
  require(lo <= hi, "clamp: lo > hi");
  Node n;
  n.op = Op::kClamp;
  n.a = a;
  n.k0 = lo;
  n.k1 = hi;
  n.owned = value(a);
  for (auto& x : n.owned.data) x = std::min(hi, std::max(lo, x));
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Tape::NodeId Tape::concat_cols(NodeId a, NodeId b) {
  const DenseMatrix& av = value(a);
  const DenseMatrix& bv = value(b);
  require(av.rows == bv.rows, "concat_cols: row mismatch");
  Node n;
  n.op = Op::kConcatCols;
  n.a = a;
  n.b = b;
  n.owned = DenseMatrix(av.rows, av.cols + bv.cols);
  for (int r = 0; r < av.rows; ++r) {
    std::copy(av.row_ptr(r), av.row_ptr(r) + av.cols, n.owned.row_ptr(r));
    std::copy(bv.row_ptr(r), bv.row_ptr(r) + bv.cols, n.owned.row_ptr(r) + av.cols);
  }
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  return push(std::move(n));
}

Tape::NodeId Tape::slice_cols(NodeId a, int col0, int col1) {
  const DenseMatrix& av = value(a);
  require(0 <= col0 && col0 < col1 && col1 <= av.cols, "slice_cols: bad range");
  Node n;
  n.op = Op::kSliceCols;
  n.a = a;
  n.k0 = col0;
  n.k1 = col1;
  n.owned = DenseMatrix(av.rows, col1 - col0);
  for (int r = 0; r < av.rows; ++r)
    std::copy(av.row_ptr(r) + col0, av.row_ptr(r) + col1, n.owned.row_ptr(r));
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Tape::NodeId Tape::sum(NodeId a) {
  Node n;
  n.op = Op::kSum;
  n.a = a;
  double s = 0.0;
  for (double x : value(a).data) s += x;
  n.owned = DenseMatrix(1, 1);
  n.owned.data[0] = s;
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Tape::NodeId Tape::sum_squares(NodeId a) {
  Node n;
  n.op = Op::kSumSq;
  n.a = a;
  n.owned = DenseMatrix(1, 1);
  n.owned.data[0] = sum_of_squares(value(a));
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Tape::NodeId Tape::dot(NodeId a, NodeId b) {
  const DenseMatrix& av = value(a);
  const DenseMatrix& bv = value(b);
  require(av.same_shape(bv), "dot: shape mismatch");
  Node n;
  n.op = Op::kDot;
  n.a = a;
  n.b = b;
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av.data[i] * bv.data[i];
  n.owned = DenseMatrix(1, 1);
  n.owned.data[0] = s;
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  return push(std::move(n));
}

Tape::NodeId Tape::row_log_softmax(NodeId a) {
  const DenseMatrix& av = value(a);
  Node n;
  n.op = Op::kRowLogSoftmax;
  n.a = a;
  n.owned = av;
  for (int r = 0; r < av.rows; ++r) {
    double* row = n.owned.row_ptr(r);
    double mx = row[0];
    for (int c = 1; c < av.cols; ++c) mx = std::max(mx, row[c]);
    double lse = 0.0;
    for (int c = 0; c < av.cols; ++c) lse += std::exp(row[c] - mx);
    lse = mx + std::log(lse);
    for (int c = 0; c < av.cols; ++c) row[c] -= lse;
  }
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

DenseMatrix& Tape::grad_buf(NodeId id) {
  Node& n = node(id);
  if (!n.grad_live) {
    const DenseMatrix& v = value(id);
    n.grad = DenseMatrix(v.rows, v.cols);
    n.grad_live = true;
  }
  return n.grad;
}

DenseMatrix Tape::grad_of(NodeId id) const {
  const Node& n = node(id);
  if (n.grad_live) return n.grad;
  const DenseMatrix& v = value(id);
  return DenseMatrix(v.rows, v.cols);
}

void Tape::propagate(NodeId id) {
  Node& n = node(id);
  const DenseMatrix& g = n.grad;
  auto needs = [&](NodeId x) { return x >= 0 && node(x).needs_grad; };
  switch (n.op) {
    case Op::kConstant:
    case Op::kParam:
      break;
    case Op::kMatMul: {
      if (needs(n.a)) matmul_a_bt_accum(g, value(n.b), grad_buf(n.a));
      if (needs(n.b)) matmul_at_b_accum(value(n.a), g, grad_buf(n.b));
      break;
    }
    case Op::kAddRowVec: {
      if (needs(n.a)) {
        DenseMatrix& ga = grad_buf(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
      }
      if (needs(n.b)) {
        DenseMatrix& gb = grad_buf(n.b);
        for (int r = 0; r < g.rows; ++r) {
          const double* row = g.row_ptr(r);
          for (int c = 0; c < g.cols; ++c) gb.data[c] += row[c];
        }
      }
      break;
    }
    case Op::kAdd: {
      for (NodeId in : {n.a, n.b})
        if (needs(in)) {
          DenseMatrix& gi = grad_buf(in);
          for (std::size_t i = 0; i < g.size(); ++i) gi.data[i] += g.data[i];
        }
      break;
    }
    case Op::kSub: {
      if (needs(n.a)) {
        DenseMatrix& ga = grad_buf(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
      }
      if (needs(n.b)) {
        DenseMatrix& gb = grad_buf(n.b);
        for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] -= g.data[i];
      }
      break;
    }
    case Op::kMul: {
      if (needs(n.a)) {
        DenseMatrix& ga = grad_buf(n.a);
        const DenseMatrix& bv = value(n.b);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * bv.data[i];
      }
      if (needs(n.b)) {
        DenseMatrix& gb = grad_buf(n.b);
        const DenseMatrix& av = value(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] += g.data[i] * av.data[i];
      }
      break;
    }
    case Op::kAffine: {
      if (needs(n.a)) {
        DenseMatrix& ga = grad_buf(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += n.k0 * g.data[i];
      }
      break;
    }
    case Op::kTanh: {
      if (needs(n.a)) {
        DenseMatrix& ga = grad_buf(n.a);
        const DenseMatrix& y = value(id);
        for (std::size_t i = 0; i < g.size(); ++i)
          ga.data[i] += g.data[i] * (1.0 - y.data[i] * y.data[i]);
      }
      break;
    }
    case Op::kExp: {
      if (needs(n.a)) {
        DenseMatrix& ga = grad_buf(n.a);
        const DenseMatrix& y = value(id);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * y.data[i];
      }
      break;
    }
    case Op::kClamp: {
      if (needs(n.a)) {
        DenseMatrix& ga = grad_buf(n.a);
        const DenseMatrix& x = value(n.a);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (x.data[i] >= n.k0 && x.data[i] <= n.k1) ga.data[i] += g.data[i];
      }
      break;
    }
    case Op::kConcatCols: {
      const DenseMatrix& av = value(n.a);
      if (needs(n.a)) {
        DenseMatrix& ga = grad_buf(n.a);
        for (int r = 0; r < g.rows; ++r)
          for (int c = 0; c < av.cols; ++c) ga.at(r, c) += g.at(r, c);
      }
      if (needs(n.b)) {
        DenseMatrix& gb = grad_buf(n.b);
        for (int r = 0; r < g.rows; ++r)
          for (int c = 0; c < gb.cols; ++c) gb.at(r, c) += g.at(r, av.cols + c);
      }
      break;
    }
    case Op::kSliceCols: {
      if (needs(n.a)) {
        DenseMatrix& ga = grad_buf(n.a);
        int c0 = static_cast<int>(n.k0);
        for (int r = 0; r < g.rows; ++r)
          for (int c = 0; c < g.cols; ++c) ga.at(r, c0 + c) += g.at(r, c);
      }
      break;
    }
    case Op::kSum: {
      if (needs(n.a)) {
        DenseMatrix& ga = grad_buf(n.a);
        double s = g.data[0];
        for (auto& x : ga.data) x += s;
      }
      break;
    }
    case Op::kSumSq: {
      if (needs(n.a)) {
        DenseMatrix& ga = grad_buf(n.a);
        const DenseMatrix& av = value(n.a);
        double s = 2.0 * g.data[0];
        for (std::size_t i = 0; i < av.size(); ++i) ga.data[i] += s * av.data[i];
      }
      break;
    }
    case Op::kDot: {
      double s = g.data[0];
      if (needs(n.a)) {
        DenseMatrix& ga = grad_buf(n.a);
        const DenseMatrix& bv = value(n.b);
        for (std::size_t i = 0; i < bv.size(); ++i) ga.data[i] += s * bv.data[i];
      }
      if (needs(n.b)) {
        DenseMatrix& gb = grad_buf(n.b);
        const DenseMatrix& av = value(n.a);
        for (std::size_t i = 0; i < av.size(); ++i) gb.data[i] += s * av.data[i];
      }
      break;
    }
    case Op::kRowLogSoftmax: {
      if (needs(n.a)) {
        DenseMatrix& ga = grad_buf(n.a);
        const DenseMatrix& y = value(id);
        for (int r = 0; r < g.rows; ++r) {
          const double* grow = g.row_ptr(r);
          const double* yrow = y.row_ptr(r);
          double gsum = 0.0;
          for (int c = 0; c < g.cols; ++c) gsum += grow[c];
          double* garow = ga.row_ptr(r);
          for (int c = 0; c < g.cols; ++c)
            garow[c] += grow[c] - std::exp(yrow[c]) * gsum;
        }
      }
      break;
    }
  }
}

GradMap Tape::backward(NodeId loss) {
  if (nodes_.empty()) throw UsageError("backward on an empty tape");
  const DenseMatrix& lv = value(loss);
  if (lv.rows != 1 || lv.cols != 1)
    throw UsageError("backward: loss node must be 1x1, got " + lv.shape_str());
  check_finite(lv, "loss");
  grad_buf(loss).data[0] = 1.0;
  for (NodeId id = loss; id >= 0; --id) {
    Node& n = node(id);
    if (!n.grad_live || !n.needs_grad) continue;
    propagate(id);
  }
  GradMap grads;
  for (const auto& [name, id] : param_nodes_) grads[name] = grad_of(id);
  return grads;
}

}  // namespace diffrec
