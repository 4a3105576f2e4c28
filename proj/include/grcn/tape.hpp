#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "grcn/tensor.hpp"

namespace grcn {

class Tape;

// Handle to a value slot recorded on a Tape.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Arguments handed to a backward rule. `grad_inputs[i]` is null when input i
// does not need a gradient; otherwise the rule accumulates into it.
struct BackwardArgs {
  std::span<const Tensor* const> inputs;
  const Tensor& output;
  const Tensor& grad_output;
  std::span<Tensor* const> grad_inputs;
};

using ForwardFn = std::function<Tensor(std::span<const Tensor* const>)>;
using BackwardFn = std::function<void(const BackwardArgs&)>;

// Result of a backward pass: gradients of the loss for every variable leaf.
// Variables the loss does not depend on report zeros.
class Gradients {
 public:
  const Tensor& operator[](Var v) const;
  bool has(Var v) const;

 private:
  friend class Tape;
  std::vector<std::optional<Tensor>> grads_;
};

// Records primitive operations in execution order and differentiates a
// scalar result by walking them in reverse. Every forward rule is a pure
// function of its inputs, so `replay()` can re-execute the whole record.
// A Tape is used from one thread; run independent tapes for parallelism.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Constant input (no gradient).
  Var constant(Tensor value, std::string name = {});
  // Differentiable leaf (parameter or input under test).
  Var variable(Tensor value, std::string name = {});

  // Record an op. `forward` runs immediately; non-finite outputs throw
  // NumericalError naming `op`.
  Var record(std::string_view op, std::span<const Var> inputs, ForwardFn forward, BackwardFn backward);
  Var record(std::string_view op, std::initializer_list<Var> inputs, ForwardFn forward, BackwardFn backward) {
    return record(op, std::span<const Var>(inputs.begin(), inputs.size()), std::move(forward),
                  std::move(backward));
  }

  // Reverse-mode gradients of a one-element `loss`.
  Gradients backward(Var loss);

  // Re-execute all recorded forward rules and report whether every output
  // is reproduced bit-exactly.
  bool replay() const;

  std::size_t size() const noexcept { return nodes_.size(); }
  const std::string& op_name(std::size_t id) const { return nodes_.at(id).op; }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }

  // Node ids visited by the most recent backward(), in visit order.
  const std::vector<std::size_t>& backward_trace() const noexcept { return trace_; }

  // Test hook: scale the gradient flowing into every `op` node's backward
  // rule by `factor`, corrupting that rule.
  void inject_gradient_fault(std::string op, double factor) {
    fault_op_ = std::move(op);
    fault_factor_ = factor;
  }

 private:
  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;
    Tensor value;
    ForwardFn forward;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Var push(Node node);

  std::deque<Node> nodes_;  // deque: Var::value() references survive later records
  std::vector<std::size_t> trace_;
  std::string fault_op_;
  double fault_factor_ = 1.0;
};

}  // namespace grcn
