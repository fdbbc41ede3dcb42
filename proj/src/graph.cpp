#include "ternclip/graph.hpp"

#include "ternclip/error.hpp"
#include "ternclip/ternary.hpp"

namespace ternclip {

Var Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Graph::constant(DenseTensor value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  return push(std::move(n));
}

Var Graph::input(DenseTensor value) {
  Node n;
  n.op = "input";
  n.value = std::move(value);
  n.needs_grad = true;
  return push(std::move(n));
}

Var Graph::parameter(DenseTensor& param) {
  Node n;
  n.op = "parameter";
  n.value = DenseTensor(param.dims, param.data);
  n.needs_grad = true;
  n.bound = &param;
  return push(std::move(n));
}

Var Graph::ternary_parameter(DenseTensor* latent, std::shared_ptr<const TernaryTensor> t) {
  if (!t) throw ShapeError("ternary_parameter: null tensor");
  if (latent != nullptr && latent->dims != t->dims) {
    throw ShapeError("ternary_parameter: latent " + dims_to_string(latent->dims) + " vs ternary " +
                     dims_to_string(t->dims));
  }
  Node n;
  n.op = "ternary_parameter";
  n.value = dequantize(*t);
  n.needs_grad = latent != nullptr;
  n.bound = latent;
  n.ternary = std::move(t);
  count_packed_op();
  return push(std::move(n));
}

Var Graph::record(std::string_view op, std::vector<Var> inputs, DenseTensor out, Backward backward) {
  Node n;
  n.op = op;
  n.inputs.reserve(inputs.size());
  for (auto v : inputs) {
    if (v.id >= nodes_.size()) throw ShapeError("record: input node does not exist yet");
    n.inputs.push_back(v.id);
    n.needs_grad = n.needs_grad || nodes_[v.id].needs_grad;
  }
  n.value = std::move(out);
  n.backward = std::move(backward);
  return push(std::move(n));
}

std::vector<float>& Graph::grad_buffer(std::size_t id) {
  auto& n = nodes_.at(id);
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0f);
  return n.grad;
}

void Graph::backward(Var loss) {
  auto& root = nodes_.at(loss.id);
  if (root.value.size() != 1) throw ShapeError("backward() needs a scalar, got " + dims_to_string(root.value.dims));
  for (auto& n : nodes_) n.grad.clear();
  grad_buffer(loss.id)[0] = 1.0f;

  for (std::size_t i = loss.id + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
    if (n.bound != nullptr) {
      auto& dst = n.bound->ensure_grad();
      if (n.ternary) {
        ste_accumulate(n.grad, dst);
      } else {
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += n.grad[j];
      }
    }
  }
}

}  // namespace ternclip
