#include "grcn/tape.hpp"

#include <cstring>

#include "grcn/error.hpp"

namespace grcn {

const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("value() of an unbound Var");
  return tape_->value(id_);
}

const Tensor& Gradients::operator[](Var v) const {
  if (v.id() >= grads_.size() || !grads_[v.id()])
    throw std::out_of_range("no gradient for slot " + std::to_string(v.id()) + " (not a variable leaf)");
  return *grads_[v.id()];
}

bool Gradients::has(Var v) const { return v.id() < grads_.size() && grads_[v.id()].has_value(); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value, std::string name) {
  Node n;
  n.op = name.empty() ? "constant" : std::move(name);
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(Tensor value, std::string name) {
  Node n;
  n.op = name.empty() ? "variable" : std::move(name);
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::record(std::string_view op, std::span<const Var> inputs, ForwardFn forward, BackwardFn backward) {
  Node n;
  n.op = std::string(op);
  n.inputs.reserve(inputs.size());
  std::vector<const Tensor*> in_values;
  in_values.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (&v.tape() != this) throw std::logic_error("op '" + n.op + "' mixes values from different tapes");
    n.inputs.push_back(v.id());
    in_values.push_back(&nodes_[v.id()].value);
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  n.value = forward(in_values);
  if (!n.value.all_finite())
    throw NumericalError("non-finite value produced by op '" + n.op + "' (node " + std::to_string(nodes_.size()) +
                         ")");
  n.forward = std::move(forward);
  n.backward = std::move(backward);
  return push(std::move(n));
}

Gradients Tape::backward(Var loss) {
  if (&loss.tape() != this) throw std::logic_error("backward() on a Var from another tape");
  const Tensor& lv = nodes_[loss.id()].value;
  if (lv.size() != 1)
    throw DimensionError("backward() needs a scalar loss, got shape " + shape_string(lv.shape()));

  Gradients out;
  auto& grads = out.grads_;
  grads.assign(nodes_.size(), std::nullopt);
  trace_.clear();
  grads[loss.id()] = Tensor(lv.shape(), 1.0);

  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> in_grads;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!grads[id] || !node.backward) continue;
    trace_.push_back(id);

    in_values.clear();
    in_grads.clear();
    for (auto in : node.inputs) {
      in_values.push_back(&nodes_[in].value);
      if (nodes_[in].requires_grad) {
        if (!grads[in]) grads[in] = Tensor(nodes_[in].value.shape());
        in_grads.push_back(&*grads[in]);
      } else {
        in_grads.push_back(nullptr);
      }
    }

    Tensor scaled;
    const Tensor* g_out = &*grads[id];
    if (!fault_op_.empty() && node.op == fault_op_) {
      scaled = *g_out;
      for (auto& v : scaled.data()) v *= fault_factor_;
      g_out = &scaled;
    }
    node.backward(BackwardArgs{in_values, node.value, *g_out, in_grads});

    for (std::size_t i = 0; i < in_grads.size(); ++i)
      if (in_grads[i] && !in_grads[i]->all_finite())
        throw NumericalError("non-finite gradient produced by backward of op '" + node.op + "' (node " +
                             std::to_string(id) + ")");

    // Intermediate gradients are not needed once propagated.
    if (!node.inputs.empty()) grads[id].reset();
  }

  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const bool leaf_variable = nodes_[id].requires_grad && nodes_[id].inputs.empty();
    if (!leaf_variable)
      grads[id].reset();
    else if (!grads[id])
      grads[id] = Tensor(nodes_[id].value.shape());
  }
  return out;
}

bool Tape::replay() const {
  std::vector<const Tensor*> in_values;
  for (const Node& node : nodes_) {
    if (!node.forward) continue;
    in_values.clear();
    for (auto in : node.inputs) in_values.push_back(&nodes_[in].value);
    const Tensor again = node.forward(in_values);
    if (again.shape() != node.value.shape()) return false;
    if (std::memcmp(again.raw(), node.value.raw(), again.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

}  // namespace grcn
