#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "sobbo/tensor.hpp"

namespace sobbo {

using NodeId = std::size_t;
inline constexpr NodeId kNoNode = static_cast<NodeId>(-1);

enum class Op : std::uint8_t {
  leaf,       // differentiable input (parameters, probe points)
  constant,   // data; adjoints stop here
  add,        // a + b, same shape
  sub,        // a - b, same shape
  mul,        // elementwise a * b, same shape
  affine,     // alpha * a + beta, elementwise
  smul,       // scalar node s times tensor a
  matmul,     // [m x k] * [k x n]
  transpose,  // [m x n] -> [n x m]
  tanh_op,
  relu_op,
  step_op,    // 1 where x > 0 else 0; derivative treated as 0
  square_op,
  sum_op,     // all entries -> scalar
  mean_op,    // all entries -> scalar
  rowsum,     // [m x n] -> [m]
  colsum,     // [m x n] -> [n]
  bcast_rows, // [n] -> [m x n], replicate as rows
  bcast_cols, // [m] -> [m x n], replicate as columns
  sfill,      // scalar -> given shape
  dot,        // [n] . [n] -> scalar
  concat,     // two tensors along axis 0 or 1
  slice,      // rectangular block
  pad,        // embed block into zeros at offset
  reshape,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::constant: return "constant";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::affine: return "affine";
    case Op::smul: return "smul";
    case Op::matmul: return "matmul";
    case Op::transpose: return "transpose";
    case Op::tanh_op: return "tanh";
    case Op::relu_op: return "relu";
    case Op::step_op: return "step";
    case Op::square_op: return "square";
    case Op::sum_op: return "sum";
    case Op::mean_op: return "mean";
    case Op::rowsum: return "rowsum";
    case Op::colsum: return "colsum";
    case Op::bcast_rows: return "bcast_rows";
    case Op::bcast_cols: return "bcast_cols";
    case Op::sfill: return "sfill";
    case Op::dot: return "dot";
    case Op::concat: return "concat";
    case Op::slice: return "slice";
    case Op::pad: return "pad";
    case Op::reshape: return "reshape";
  }
  return "?";
}

struct OpAttr {
  double alpha = 1.0;                       // affine
  double beta = 0.0;                        // affine
  int axis = 0;                             // concat
  std::array<std::size_t, 2> offset{0, 0};  // slice / pad
  Shape shape;                              // slice extent, pad/bcast/sfill/reshape target
};

struct Node {
  Op op = Op::constant;
  std::array<NodeId, 2> in{kNoNode, kNoNode};
  std::uint8_t arity = 0;
  OpAttr attr;
  Tensor value;
  bool from_backward = false;  // emitted while recording a gradient pass
};

/// Append-only computation tape. Values are evaluated eagerly on append, so a
/// node's Tensor is available as soon as it is recorded. The gradient pass
/// appends its own nodes, which keeps every derivative differentiable again
/// (reverse-over-reverse). Single-writer; use independent tapes per thread.
class Tape {
 public:
  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_[id]; }
  const Tensor& val(NodeId id) const { return nodes_[id].value; }

  NodeId leaf(Tensor v) { return push(Op::leaf, {}, {}, std::move(v)); }
  NodeId constant(Tensor v) { return push(Op::constant, {}, {}, std::move(v)); }
  NodeId scalar_const(double v) { return constant(Tensor::scalar(v)); }

  /// Records one operation; returns the id of the appended node.
  NodeId apply(Op op, std::span<const NodeId> inputs, OpAttr attr = {});

  // Builder helpers.
  NodeId add(NodeId a, NodeId b) { return apply2(Op::add, a, b); }
  NodeId sub(NodeId a, NodeId b) { return apply2(Op::sub, a, b); }
  NodeId mul(NodeId a, NodeId b) { return apply2(Op::mul, a, b); }
  NodeId affine(NodeId a, double alpha, double beta) {
    OpAttr at;
    at.alpha = alpha;
    at.beta = beta;
    return apply1(Op::affine, a, at);
  }
  NodeId neg(NodeId a) { return affine(a, -1.0, 0.0); }
  NodeId smul(NodeId s, NodeId a) { return apply2(Op::smul, s, a); }
  NodeId matmul(NodeId a, NodeId b) { return apply2(Op::matmul, a, b); }
  NodeId transpose(NodeId a) { return apply1(Op::transpose, a); }
  NodeId tanh(NodeId a) { return apply1(Op::tanh_op, a); }
  NodeId relu(NodeId a) { return apply1(Op::relu_op, a); }
  NodeId step(NodeId a) { return apply1(Op::step_op, a); }
  NodeId square(NodeId a) { return apply1(Op::square_op, a); }
  NodeId sum(NodeId a) { return apply1(Op::sum_op, a); }
  NodeId mean(NodeId a) { return apply1(Op::mean_op, a); }
  NodeId row_sum(NodeId a) { return apply1(Op::rowsum, a); }
  NodeId col_sum(NodeId a) { return apply1(Op::colsum, a); }
  NodeId broadcast_rows(NodeId v, std::size_t m) {
    OpAttr at;
    at.shape = {m, val(v).shape.at(0)};
    return apply1(Op::bcast_rows, v, at);
  }
  NodeId broadcast_cols(NodeId v, std::size_t n) {
    OpAttr at;
    at.shape = {val(v).shape.at(0), n};
    return apply1(Op::bcast_cols, v, at);
  }
  NodeId scalar_fill(NodeId s, Shape shape) {
    OpAttr at;
    at.shape = std::move(shape);
    return apply1(Op::sfill, s, at);
  }
  NodeId dot_product(NodeId a, NodeId b) { return apply2(Op::dot, a, b); }
  NodeId concat2(NodeId a, NodeId b, int axis) {
    OpAttr at;
    at.axis = axis;
    return apply2(Op::concat, a, b, at);
  }
  NodeId slice_block(NodeId a, std::array<std::size_t, 2> offset, Shape extent) {
    OpAttr at;
    at.offset = offset;
    at.shape = std::move(extent);
    return apply1(Op::slice, a, at);
  }
  NodeId pad_block(NodeId a, std::array<std::size_t, 2> offset, Shape target) {
    OpAttr at;
    at.offset = offset;
    at.shape = std::move(target);
    return apply1(Op::pad, a, at);
  }
  NodeId reshape_to(NodeId a, Shape target) {
    OpAttr at;
    at.shape = std::move(target);
    return apply1(Op::reshape, a, at);
  }
  /// Scalar node holding entry i of a rank-1 node.
  NodeId at(NodeId v, std::size_t i) {
    NodeId s = slice_block(v, {i, 0}, Shape{1});
    return reshape_to(s, Shape{});
  }
  /// Scalar node holding entry (i, j) of a rank-2 node.
  NodeId at(NodeId m, std::size_t i, std::size_t j) {
    NodeId s = slice_block(m, {i, j}, Shape{1, 1});
    return reshape_to(s, Shape{});
  }

 private:
  friend class BackwardScope;
  std::vector<Node> nodes_;
  bool in_backward_ = false;

  NodeId apply1(Op op, NodeId a, OpAttr attr = {}) {
    std::array<NodeId, 1> in{a};
    return apply(op, in, std::move(attr));
  }
  NodeId apply2(Op op, NodeId a, NodeId b, OpAttr attr = {}) {
    std::array<NodeId, 2> in{a, b};
    return apply(op, in, std::move(attr));
  }
  NodeId push(Op op, std::array<NodeId, 2> in, std::uint8_t arity, Tensor v, OpAttr attr = {});
  Tensor eval(Op op, std::span<const NodeId> in, const OpAttr& attr) const;
};

namespace detail {

[[noreturn]] inline void bad_shape(Op op, const Tensor& a) {
  throw shape_error(std::string("op ") + op_name(op) + ": incompatible shape " + shape_str(a.shape));
}
[[noreturn]] inline void bad_shape(Op op, const Tensor& a, const Tensor& b) {
  throw shape_error(std::string("op ") + op_name(op) + ": incompatible shapes " + shape_str(a.shape) +
                    " and " + shape_str(b.shape));
}

}  // namespace detail

inline NodeId Tape::push(Op op, std::array<NodeId, 2> in, std::uint8_t arity, Tensor v, OpAttr attr) {
  if (!v.all_finite())
    throw numeric_error(std::string("op ") + op_name(op) + ": produced a non-finite value");
  Node n;
  n.op = op;
  n.in = in;
  n.arity = arity;
  n.attr = std::move(attr);
  n.value = std::move(v);
  // Marks gradient nodes and anything derived from them, so the order-two
  // precondition (differentiate a recorded first-order component) can be
  // checked.
  n.from_backward = in_backward_;
  for (std::uint8_t i = 0; i < arity; ++i) n.from_backward |= nodes_[in[i]].from_backward;
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

inline NodeId Tape::apply(Op op, std::span<const NodeId> inputs, OpAttr attr) {
  for (NodeId id : inputs)
    if (id >= nodes_.size()) throw error("tape: input node id out of range");
  Tensor v = eval(op, inputs, attr);
  std::array<NodeId, 2> in{kNoNode, kNoNode};
  for (std::size_t i = 0; i < inputs.size(); ++i) in[i] = inputs[i];
  return push(op, in, static_cast<std::uint8_t>(inputs.size()), std::move(v), std::move(attr));
}

inline Tensor Tape::eval(Op op, std::span<const NodeId> in, const OpAttr& attr) const {
  auto arity_check = [&](std::size_t want) {
    if (in.size() != want)
      throw error(std::string("op ") + op_name(op) + ": expected " + std::to_string(want) + " inputs");
  };
  switch (op) {
    case Op::leaf:
    case Op::constant:
      throw error("tape: leaf/constant must be created with their builders");

    case Op::add:
    case Op::sub:
    case Op::mul: {
      arity_check(2);
      const Tensor& a = val(in[0]);
      const Tensor& b = val(in[1]);
      if (!same_shape(a, b)) detail::bad_shape(op, a, b);
      Tensor out = Tensor::zeros(a.shape);
      const std::size_t n = a.numel();
      for (std::size_t i = 0; i < n; ++i)
        out.data[i] = op == Op::add   ? a.data[i] + b.data[i]
                      : op == Op::sub ? a.data[i] - b.data[i]
                                      : a.data[i] * b.data[i];
      return out;
    }

    case Op::affine: {
      arity_check(1);
      const Tensor& a = val(in[0]);
      Tensor out = Tensor::zeros(a.shape);
      for (std::size_t i = 0; i < a.numel(); ++i) out.data[i] = attr.alpha * a.data[i] + attr.beta;
      return out;
    }

    case Op::smul: {
      arity_check(2);
      const Tensor& s = val(in[0]);
      const Tensor& a = val(in[1]);
      if (!s.is_scalar()) detail::bad_shape(op, s, a);
      Tensor out = Tensor::zeros(a.shape);
      const double sv = s.data[0];
      for (std::size_t i = 0; i < a.numel(); ++i) out.data[i] = sv * a.data[i];
      return out;
    }

    case Op::matmul: {
      arity_check(2);
      const Tensor& a = val(in[0]);
      const Tensor& b = val(in[1]);
      if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0]) detail::bad_shape(op, a, b);
      Tensor out = Tensor::zeros({a.shape[0], b.shape[1]});
      matmul_into(a, b, out);
      return out;
    }

    case Op::transpose: {
      arity_check(1);
      const Tensor& a = val(in[0]);
      if (a.rank() != 2) detail::bad_shape(op, a);
      Tensor out = Tensor::zeros({a.shape[1], a.shape[0]});
      for (std::size_t i = 0; i < a.shape[0]; ++i)
        for (std::size_t j = 0; j < a.shape[1]; ++j) out(j, i) = a(i, j);
      return out;
    }

    case Op::tanh_op:
    case Op::relu_op:
    case Op::step_op:
    case Op::square_op: {
      arity_check(1);
      const Tensor& a = val(in[0]);
      Tensor out = Tensor::zeros(a.shape);
      for (std::size_t i = 0; i < a.numel(); ++i) {
        const double x = a.data[i];
        out.data[i] = op == Op::tanh_op   ? std::tanh(x)
                      : op == Op::relu_op ? (x > 0.0 ? x : 0.0)
                      : op == Op::step_op ? (x > 0.0 ? 1.0 : 0.0)
                                          : x * x;
      }
      return out;
    }

    case Op::sum_op:
    case Op::mean_op: {
      arity_check(1);
      const Tensor& a = val(in[0]);
      double acc = 0.0;
      for (double v : a.data) acc += v;
      if (op == Op::mean_op) {
        if (a.numel() == 0) detail::bad_shape(op, a);
        acc /= static_cast<double>(a.numel());
      }
      return Tensor::scalar(acc);
    }

    case Op::rowsum: {
      arity_check(1);
      const Tensor& a = val(in[0]);
      if (a.rank() != 2) detail::bad_shape(op, a);
      Tensor out = Tensor::zeros({a.shape[0]});
      for (std::size_t i = 0; i < a.shape[0]; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < a.shape[1]; ++j) acc += a(i, j);
        out(i) = acc;
      }
      return out;
    }

    case Op::colsum: {
      arity_check(1);
      const Tensor& a = val(in[0]);
      if (a.rank() != 2) detail::bad_shape(op, a);
      Tensor out = Tensor::zeros({a.shape[1]});
      for (std::size_t i = 0; i < a.shape[0]; ++i)
        for (std::size_t j = 0; j < a.shape[1]; ++j) out(j) += a(i, j);
      return out;
    }

    case Op::bcast_rows: {
      arity_check(1);
      const Tensor& a = val(in[0]);
      if (a.rank() != 1 || attr.shape.size() != 2 || attr.shape[1] != a.shape[0])
        detail::bad_shape(op, a);
      Tensor out = Tensor::zeros(attr.shape);
      for (std::size_t i = 0; i < attr.shape[0]; ++i)
        for (std::size_t j = 0; j < attr.shape[1]; ++j) out(i, j) = a(j);
      return out;
    }

    case Op::bcast_cols: {
      arity_check(1);
      const Tensor& a = val(in[0]);
      if (a.rank() != 1 || attr.shape.size() != 2 || attr.shape[0] != a.shape[0])
        detail::bad_shape(op, a);
      Tensor out = Tensor::zeros(attr.shape);
      for (std::size_t i = 0; i < attr.shape[0]; ++i)
        for (std::size_t j = 0; j < attr.shape[1]; ++j) out(i, j) = a(i);
      return out;
    }

    case Op::sfill: {
      arity_check(1);
      const Tensor& s = val(in[0]);
      if (!s.is_scalar()) detail::bad_shape(op, s);
      return Tensor::full(attr.shape, s.data[0]);
    }

    case Op::dot: {
      arity_check(2);
      const Tensor& a = val(in[0]);
      const Tensor& b = val(in[1]);
      if (a.rank() != 1 || b.rank() != 1 || a.shape[0] != b.shape[0]) detail::bad_shape(op, a, b);
      double acc = 0.0;
      for (std::size_t i = 0; i < a.shape[0]; ++i) acc += a(i) * b(i);
      return Tensor::scalar(acc);
    }

    case Op::concat: {
      arity_check(2);
      const Tensor& a = val(in[0]);
      const Tensor& b = val(in[1]);
      if (a.rank() == 1 && b.rank() == 1 && attr.axis == 0) {
        Tensor out = Tensor::zeros({a.shape[0] + b.shape[0]});
        std::copy(a.data.begin(), a.data.end(), out.data.begin());
        std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.shape[0]);
        return out;
      }
      if (a.rank() == 2 && b.rank() == 2) {
        if (attr.axis == 0 && a.shape[1] == b.shape[1]) {
          Tensor out = Tensor::zeros({a.shape[0] + b.shape[0], a.shape[1]});
          std::copy(a.data.begin(), a.data.end(), out.data.begin());
          std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.numel());
          return out;
        }
        if (attr.axis == 1 && a.shape[0] == b.shape[0]) {
          Tensor out = Tensor::zeros({a.shape[0], a.shape[1] + b.shape[1]});
          for (std::size_t i = 0; i < a.shape[0]; ++i) {
            for (std::size_t j = 0; j < a.shape[1]; ++j) out(i, j) = a(i, j);
            for (std::size_t j = 0; j < b.shape[1]; ++j) out(i, a.shape[1] + j) = b(i, j);
          }
          return out;
        }
      }
      detail::bad_shape(op, a, b);
    }

    case Op::slice: {
      arity_check(1);
      const Tensor& a = val(in[0]);
      const Shape& ext = attr.shape;
      if (a.rank() == 1 && ext.size() == 1) {
        if (attr.offset[0] + ext[0] > a.shape[0]) detail::bad_shape(op, a);
        Tensor out = Tensor::zeros(ext);
        for (std::size_t i = 0; i < ext[0]; ++i) out(i) = a(attr.offset[0] + i);
        return out;
      }
      if (a.rank() == 2 && ext.size() == 2) {
        if (attr.offset[0] + ext[0] > a.shape[0] || attr.offset[1] + ext[1] > a.shape[1])
          detail::bad_shape(op, a);
        Tensor out = Tensor::zeros(ext);
        for (std::size_t i = 0; i < ext[0]; ++i)
          for (std::size_t j = 0; j < ext[1]; ++j) out(i, j) = a(attr.offset[0] + i, attr.offset[1] + j);
        return out;
      }
      detail::bad_shape(op, a);
    }

    case Op::pad: {
      arity_check(1);
      const Tensor& a = val(in[0]);
      const Shape& tgt = attr.shape;
      if (a.rank() == 1 && tgt.size() == 1) {
        if (attr.offset[0] + a.shape[0] > tgt[0]) detail::bad_shape(op, a);
        Tensor out = Tensor::zeros(tgt);
        for (std::size_t i = 0; i < a.shape[0]; ++i) out(attr.offset[0] + i) = a(i);
        return out;
      }
      if (a.rank() == 2 && tgt.size() == 2) {
        if (attr.offset[0] + a.shape[0] > tgt[0] || attr.offset[1] + a.shape[1] > tgt[1])
          detail::bad_shape(op, a);
        Tensor out = Tensor::zeros(tgt);
        for (std::size_t i = 0; i < a.shape[0]; ++i)
          for (std::size_t j = 0; j < a.shape[1]; ++j) out(attr.offset[0] + i, attr.offset[1] + j) = a(i, j);
        return out;
      }
      detail::bad_shape(op, a);
    }

    case Op::reshape: {
      arity_check(1);
      const Tensor& a = val(in[0]);
      if (shape_numel(attr.shape) != a.numel()) detail::bad_shape(op, a);
      return Tensor(attr.shape, a.data);
    }
  }
  throw error("tape: unknown op");
}

// ---------------------------------------------------------------------------
// Reverse pass
// ---------------------------------------------------------------------------

struct GradRequest {
  NodeId output = kNoNode;
  std::vector<NodeId> wrt;
  int order = 1;  // 1 or 2; 2 differentiates a recorded first-order gradient node again
};

namespace detail {

class BackwardGuard {
 public:
  explicit BackwardGuard(bool& flag) : flag_(flag), saved_(flag) { flag_ = true; }
  ~BackwardGuard() { flag_ = saved_; }

 private:
  bool& flag_;
  bool saved_;
};

}  // namespace detail

class BackwardScope {
 public:
  static detail::BackwardGuard enter(Tape& t) { return detail::BackwardGuard(t.in_backward_); }
};

/// Records the gradient of a scalar node with respect to each node in `wrt`
/// as new tape nodes and returns their ids. The emitted subgraph is built
/// from primitive ops only, so the returned gradients can be differentiated
/// again by calling this on one of their (scalar) components.
inline std::unordered_map<NodeId, NodeId> backward_nodes(Tape& t, NodeId output,
                                                         std::span<const NodeId> wrt) {
  if (output >= t.size()) throw error("backward: output id out of range");
  if (!t.val(output).is_scalar())
    throw shape_error("backward: output must be scalar, got " + shape_str(t.val(output).shape));

  auto guard = BackwardScope::enter(t);

  // Reachable subgraph (upstream of output).
  std::vector<char> reach(output + 1, 0);
  std::vector<NodeId> stack{output};
  reach[output] = 1;
  while (!stack.empty()) {
    NodeId id = stack.back();
    stack.pop_back();
    const Node& n = t.node(id);
    for (std::uint8_t i = 0; i < n.arity; ++i) {
      NodeId p = n.in[i];
      if (!reach[p]) {
        reach[p] = 1;
        stack.push_back(p);
      }
    }
  }

  std::vector<NodeId> adj(output + 1, kNoNode);
  adj[output] = t.constant(Tensor::full(t.val(output).shape, 1.0));

  auto accumulate = [&](NodeId target, NodeId contrib) {
    adj[target] = (adj[target] == kNoNode) ? contrib : t.add(adj[target], contrib);
  };

  for (NodeId id = output + 1; id-- > 0;) {
    if (!reach[id] || adj[id] == kNoNode) continue;
    const Node n = t.node(id);  // copy; the tape vector may reallocate below
    const NodeId a = n.in[0];
    const NodeId b = n.in[1];
    const NodeId g = adj[id];
    switch (n.op) {
      case Op::leaf:
      case Op::constant:
        break;
      case Op::add:
        accumulate(a, g);
        accumulate(b, g);
        break;
      case Op::sub:
        accumulate(a, g);
        accumulate(b, t.neg(g));
        break;
      case Op::mul:
        accumulate(a, t.mul(g, b));
        accumulate(b, t.mul(g, a));
        break;
      case Op::affine:
        accumulate(a, t.affine(g, n.attr.alpha, 0.0));
        break;
      case Op::smul:
        accumulate(a, t.sum(t.mul(g, b)));
        accumulate(b, t.smul(a, g));
        break;
      case Op::matmul:
        accumulate(a, t.matmul(g, t.transpose(b)));
        accumulate(b, t.matmul(t.transpose(a), g));
        break;
      case Op::transpose:
        accumulate(a, t.transpose(g));
        break;
      case Op::tanh_op:
        // d tanh = 1 - tanh^2, expressed through the recorded output node
        accumulate(a, t.mul(g, t.affine(t.square(id), -1.0, 1.0)));
        break;
      case Op::relu_op:
        accumulate(a, t.mul(g, t.step(a)));
        break;
      case Op::step_op:
        break;  // derivative zero a.e.
      case Op::square_op:
        accumulate(a, t.mul(g, t.affine(a, 2.0, 0.0)));
        break;
      case Op::sum_op:
        accumulate(a, t.scalar_fill(g, t.val(a).shape));
        break;
      case Op::mean_op:
        accumulate(a, t.affine(t.scalar_fill(g, t.val(a).shape),
                               1.0 / static_cast<double>(t.val(a).numel()), 0.0));
        break;
      case Op::rowsum:
        accumulate(a, t.broadcast_cols(g, t.val(a).shape[1]));
        break;
      case Op::colsum:
        accumulate(a, t.broadcast_rows(g, t.val(a).shape[0]));
        break;
      case Op::bcast_rows:
        accumulate(a, t.col_sum(g));
        break;
      case Op::bcast_cols:
        accumulate(a, t.row_sum(g));
        break;
      case Op::sfill:
        accumulate(a, t.sum(g));
        break;
      case Op::dot:
        accumulate(a, t.smul(g, b));
        accumulate(b, t.smul(g, a));
        break;
      case Op::concat: {
        const Tensor& av = t.val(a);
        const Tensor& bv = t.val(b);
        if (av.rank() == 1) {
          accumulate(a, t.slice_block(g, {0, 0}, av.shape));
          accumulate(b, t.slice_block(g, {av.shape[0], 0}, bv.shape));
        } else if (n.attr.axis == 0) {
          accumulate(a, t.slice_block(g, {0, 0}, av.shape));
          accumulate(b, t.slice_block(g, {av.shape[0], 0}, bv.shape));
        } else {
          accumulate(a, t.slice_block(g, {0, 0}, av.shape));
          accumulate(b, t.slice_block(g, {0, av.shape[1]}, bv.shape));
        }
        break;
      }
      case Op::slice:
        accumulate(a, t.pad_block(g, n.attr.offset, t.val(a).shape));
        break;
      case Op::pad:
        accumulate(a, t.slice_block(g, n.attr.offset, t.val(a).shape));
        break;
      case Op::reshape:
        accumulate(a, t.reshape_to(g, t.val(a).shape));
        break;
    }
  }

  std::unordered_map<NodeId, NodeId> out;
  for (NodeId w : wrt) {
    if (w >= t.size()) throw error("backward: wrt id out of range");
    NodeId gid = (w <= output && reach[w] && adj[w] != kNoNode)
                     ? adj[w]
                     : t.constant(Tensor::zeros(t.val(w).shape));
    out.emplace(w, gid);
  }
  return out;
}

/// Value-level reverse pass per GradRequest. Nodes not upstream of the output
/// yield zero tensors. order == 2 requires the output to be a component of a
/// previously recorded gradient pass.
inline std::unordered_map<NodeId, Tensor> backward(Tape& t, const GradRequest& req) {
  if (req.order != 1 && req.order != 2) throw config_error("backward: order must be 1 or 2");
  if (req.order == 2 && !t.node(req.output).from_backward)
    throw error("backward: order-two output must be a recorded first-order gradient node");
  auto ids = backward_nodes(t, req.output, req.wrt);
  std::unordered_map<NodeId, Tensor> out;
  for (auto& [w, gid] : ids) out.emplace(w, t.val(gid));
  return out;
}

}  // namespace sobbo
