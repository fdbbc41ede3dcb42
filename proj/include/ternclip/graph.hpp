#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string_view>
#include <vector>

#include "ternclip/tensor.hpp"

namespace ternclip {

struct TernaryTensor;

/// Handle to a node of a Graph.
struct Var {
  std::size_t id = 0;
};

/// Append-only tape for reverse-mode differentiation. Nodes are recorded in
/// execution order; backward() walks them once in reverse insertion order,
/// so gradient accumulation order is fixed by the order ops were recorded.
///
/// A Graph is not thread-safe. Build one per forward pass.
class Graph {
 public:
  using Backward = std::function<void(Graph&, std::size_t node)>;

  struct Node {
    std::string_view op;
    std::vector<std::size_t> inputs;
    DenseTensor value;
    std::vector<float> grad;
    bool needs_grad = false;
    Backward backward;
    // Leaf bound to an external tensor; its gradient is added to bound->grad.
    DenseTensor* bound = nullptr;
    // Set on leaves whose value is the dequantized form of a packed tensor.
    std::shared_ptr<const TernaryTensor> ternary;
  };

  /// Leaf that never receives a gradient.
  Var constant(DenseTensor value);
  /// Leaf that receives a gradient, readable through grad().
  Var input(DenseTensor value);
  /// Leaf reading `param`; backward() adds its gradient into param.grad.
  Var parameter(DenseTensor& param);
  /// Leaf whose forward value is dequantize(t). When `latent` is non-null the
  /// gradient with respect to the ternary weight is passed straight through to
  /// latent->grad.
  Var ternary_parameter(DenseTensor* latent, std::shared_ptr<const TernaryTensor> t);

  Var record(std::string_view op, std::vector<Var> inputs, DenseTensor out, Backward backward);

  const DenseTensor& value(Var v) const { return nodes_.at(v.id).value; }
  const Node& node(Var v) const { return nodes_.at(v.id); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }
  bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }

  /// Gradient of the last backward() target with respect to v; empty if none reached it.
  const std::vector<float>& grad(Var v) const { return nodes_.at(v.id).grad; }

  /// Zero-initialised gradient buffer of a node, allocated on first use.
  std::vector<float>& grad_buffer(std::size_t id);

  /// Reverse pass from a scalar node.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  /// Number of ops that touched packed ternary weights (ternary leaves and
  /// packed kernels).
  std::size_t packed_op_count() const { return packed_ops_; }
  void count_packed_op() { ++packed_ops_; }

 private:
  Var push(Node node);

  std::vector<Node> nodes_;
  std::size_t packed_ops_ = 0;
};

}  // namespace ternclip
