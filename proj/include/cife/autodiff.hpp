#pragma once

// Reverse-mode automatic differentiation over dense Tensors.
//
// A Tape records every operation applied to Vars in the order it was
// executed, so the node list is topologically sorted by construction.
// backward() walks it once in reverse, summing gradient contributions from
// every consumer of a node. Parameters live outside the tape (in models);
// when a parameter enters a tape through Tape::param() its leaf gradient is
// added into Parameter::grad at the end of backward().

#include <cstddef>
#include <deque>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cife/tensor.hpp"

namespace cife {

using Label = std::uint16_t;
using Labels = std::vector<Label>;

struct Parameter {
  std::string name;
  Tensor value;
  std::optional<Tensor> grad;

  void zero_grad() { grad.reset(); }
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  double item() const { return value().item(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Backward rule for node `self`: read grad(self) and the input values,
  // add contributions into accumulate(input).
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  // A non-recording tape evaluates ops but keeps no gradient bookkeeping.
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor value);
  Var leaf(Tensor value);
  // Binds a parameter. Repeated calls with the same parameter return the
  // same node so every use shares one gradient accumulator.
  Var param(Parameter& p);

  // Populates gradients of every node reachable from `loss` (a one-element
  // tensor) and adds leaf gradients into bound parameters.
  void backward(Var loss);

  const Tensor& value(Var v) const;
  // Gradient after backward(); nullptr for nodes not on the loss path.
  const Tensor* grad(Var v) const;

  // Op-author interface.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);
  const Tensor& value_of(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad_of(std::size_t id) const { return *nodes_[id].grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  Tensor& accumulate(std::size_t id);
  Var var(std::size_t id) { return Var(this, id); }

 private:
  struct Node {
    Tensor value;
    std::optional<Tensor> grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* parameter = nullptr;
  };

  void check_owned(Var v) const;

  std::deque<Node> nodes_;  // deque: references to values survive growth
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  bool recording_;
};

enum class Unary { relu, exp, log, neg, sigmoid, tanh };
enum class Binary { add, sub, mul, div };

// Binary ops accept equal shapes, or a right operand that broadcasts over
// the leading (batch) dimension of the left one: [m] or [1 x m] against
// [n x m].
Var elementwise(Binary kind, Var a, Var b);
Var elementwise(Unary kind, Var a);

inline Var add(Var a, Var b) { return elementwise(Binary::add, a, b); }
inline Var sub(Var a, Var b) { return elementwise(Binary::sub, a, b); }
inline Var mul(Var a, Var b) { return elementwise(Binary::mul, a, b); }
inline Var div(Var a, Var b) { return elementwise(Binary::div, a, b); }
inline Var relu(Var a) { return elementwise(Unary::relu, a); }
inline Var exp(Var a) { return elementwise(Unary::exp, a); }
inline Var log(Var a) { return elementwise(Unary::log, a); }
inline Var neg(Var a) { return elementwise(Unary::neg, a); }
inline Var sigmoid(Var a) { return elementwise(Unary::sigmoid, a); }
inline Var tanh(Var a) { return elementwise(Unary::tanh, a); }

Var scale(Var a, double factor);
Var matmul(Var a, Var b);
Var sum(Var a);
Var mean(Var a);

// Row-wise softmax of an [n x K] tensor.
Var softmax(Var logits);

// Mean over rows of -log softmax(logits)[label], computed with log-sum-exp.
Var softmax_cross_entropy(Var logits, std::span<const Label> labels);

// Mean of -(t log p + (1 - t) log(1 - p)). p must lie in [0, 1]; it is
// clamped to [kProbabilityClamp, 1 - kProbabilityClamp] before the logs.
inline constexpr double kProbabilityClamp = 1e-12;
Var binary_cross_entropy(Var p, std::span<const double> targets);

// Identity forward; backward multiplies the upstream gradient by -coefficient.
Var grad_reverse(Var x, double coefficient);

// [n x p] and [n x q] -> [n x (p + q)].
Var concat(Var a, Var b);
// Columns [begin, end) of an [n x c] tensor.
Var slice_cols(Var a, std::size_t begin, std::size_t end);

// Same value, no gradient flow.
Var detach(Var a);

// Row-wise flattened outer product: out[i, j*K + k] = f[i, j] * p[i, k].
Var outer_rows(Var features, Var predictions);

}  // namespace cife
