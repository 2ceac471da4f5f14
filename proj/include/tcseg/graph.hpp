#pragma once

#include "tcseg/tensor.hpp"

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace tcseg {

using NodeId = std::size_t;

enum class Op {
  Leaf,
  Conv2d,          // inputs: x (b,ci,h,w), weight (co,ci,k,k), bias (co,1,1,1); zero "same" padding, stride 1
  Relu,
  Sigmoid,
  SoftmaxChannel,  // softmax over the channel axis at every (b,h,w)
  Upsample2,       // 2x nearest neighbour
  MaxPool2,        // 2x2 window, stride 2
  Concat,          // channel concatenation of any number of inputs
  Add,
  Sub,
  Mul,
  DivGuarded,      // a / max(b, attr.scalar)
  Scale,           // x * attr.scalar
  AddScalar,       // x + attr.scalar
  Sum,             // all entries -> (1,1,1,1)
  Mean,
  SumSpatial,      // (b,c,h,w) -> (b,c,1,1)
  SliceBatch,      // batch rows [attr.begin, attr.end)
  StopGradient,
  Custom,
};

std::string_view op_name(Op op);

/// User-defined differentiable op. Implementations must be deterministic and
/// may not depend on anything but their inputs and immutable own state.
class CustomOp {
 public:
  virtual ~CustomOp() = default;
  virtual std::string_view name() const = 0;
  virtual Tensor forward(std::span<const Tensor* const> inputs) const = 0;
  /// One gradient per input; an empty optional means "no gradient".
  virtual std::vector<std::optional<Tensor>> backward(const Tensor& grad_out,
                                                      std::span<const Tensor* const> inputs,
                                                      const Tensor& output) const = 0;
};

struct OpAttrs {
  double scalar = 0.0;
  std::size_t begin = 0;
  std::size_t end = 0;
  std::shared_ptr<const CustomOp> custom;
};

/// Gradient map produced by Graph::backward.
class Gradients {
 public:
  explicit Gradients(std::size_t n) : grads_(n) {}
  bool has(NodeId id) const { return id < grads_.size() && grads_[id].has_value(); }
  /// Throws if the node received no gradient.
  const Tensor& at(NodeId id) const;
  std::optional<Tensor>& slot(NodeId id) { return grads_.at(id); }

 private:
  std::vector<std::optional<Tensor>> grads_;
};

/// Append-only tape. Nodes are stored in creation order, which is a
/// topological order by construction.
class Graph {
 public:
  struct Node {
    Op op = Op::Leaf;
    std::vector<NodeId> inputs;
    Tensor value;
    OpAttrs attrs;
    std::vector<std::size_t> saved;  // op-specific context (max-pool argmax)
    bool requires_grad = false;
    bool trainable = false;
  };

  NodeId constant(Tensor value);
  NodeId variable(Tensor value);  // requires grad, not trainable
  NodeId parameter(Tensor value);

  /// Evaluates `op` on existing nodes and appends the result.
  NodeId apply(Op op, std::vector<NodeId> inputs, OpAttrs attrs = {});

  const Tensor& value(NodeId id) const { return node(id).value; }
  const Node& node(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }
  const std::vector<NodeId>& parameters() const { return params_; }

  /// Replaces a leaf's value (shape must match); call replay() afterwards.
  void set_leaf(NodeId id, Tensor value);
  /// Re-evaluates every non-leaf node in tape order.
  void replay();

  /// Reverse sweep from a scalar node; gradients of multiply-used nodes are summed.
  Gradients backward(NodeId loss) const;

 private:
  NodeId push(Node n);
  Tensor evaluate(Node& n) const;

  std::vector<Node> nodes_;
  std::vector<NodeId> params_;
};

// Expression helpers over a graph.
NodeId conv2d(Graph& g, NodeId x, NodeId weight, NodeId bias);
NodeId relu(Graph& g, NodeId x);
NodeId sigmoid(Graph& g, NodeId x);
NodeId softmax_channels(Graph& g, NodeId x);
NodeId upsample2(Graph& g, NodeId x);
NodeId maxpool2(Graph& g, NodeId x);
NodeId concat(Graph& g, std::vector<NodeId> xs);
NodeId add(Graph& g, NodeId a, NodeId b);
NodeId sub(Graph& g, NodeId a, NodeId b);
NodeId mul(Graph& g, NodeId a, NodeId b);
NodeId div_guarded(Graph& g, NodeId a, NodeId b, double eps);
NodeId scale(Graph& g, NodeId x, double s);
NodeId add_scalar(Graph& g, NodeId x, double s);
NodeId sum(Graph& g, NodeId x);
NodeId mean(Graph& g, NodeId x);
NodeId sum_spatial(Graph& g, NodeId x);
NodeId slice_batch(Graph& g, NodeId x, std::size_t begin, std::size_t end);
NodeId stop_gradient(Graph& g, NodeId x);
NodeId custom(Graph& g, std::shared_ptr<const CustomOp> op, std::vector<NodeId> inputs);

/// Max over entries of `param` of |analytic - central difference| / max(1, |analytic|).
/// The graph is replayed in place and restored before returning.
double finite_diff_check(Graph& g, NodeId loss, NodeId param, double eps = 1e-5);

}  // namespace tcseg
