#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cife/autodiff.hpp"

namespace cife {

class LinearLayer {
 public:
  LinearLayer(std::size_t in, std::size_t out, const std::string& name);

  // Glorot-uniform weights in +-sqrt(6 / (in + out)), zero bias.
  void init_parameters(std::uint64_t seed);

  // x[n x in] -> x * W + b.
  Var forward(Tape& tape, Var x);

  std::size_t in_width() const { return weight.value.shape()[0]; }
  std::size_t out_width() const { return weight.value.shape()[1]; }

  Parameter weight;
  Parameter bias;
};

enum class Head { identity, sigmoid, logits };

const char* to_string(Head head);
Head parse_head(const std::string& s);

/// Stack of linear layers with ReLU between consecutive layers. The last
/// layer feeds the head: identity (raw features), sigmoid (probability), or
/// logits (raw class scores; softmax is applied by the loss or by callers).
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::string name, const std::vector<std::size_t>& widths, Head head);

  void init_parameters(std::uint64_t seed);

  Var forward(Tape& tape, Var x);
  // Forward pass without gradient bookkeeping.
  Tensor infer(const Tensor& x) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  const std::string& name() const { return name_; }
  Head head() const { return head_; }
  std::vector<std::size_t> widths() const;
  std::size_t in_width() const { return layers_.front().in_width(); }
  std::size_t out_width() const { return layers_.back().out_width(); }
  std::vector<LinearLayer>& layers() { return layers_; }
  const std::vector<LinearLayer>& layers() const { return layers_; }

 private:
  std::string name_;
  std::vector<LinearLayer> layers_;
  Head head_ = Head::identity;
};

struct ScheduleParams {
  double eta0 = 0.01;
  double theta = 10.0;
  double beta = 0.75;
  double delta = 10.0;

  void validate() const;
};

// eta0 / (1 + theta p)^beta, p in [0, 1].
double lr_schedule(double p, const ScheduleParams& sp);
// (1 - exp(-delta p)) / (1 + exp(-delta p)), p in [0, 1].
double lambda_d_schedule(double p, const ScheduleParams& sp);

/// SGD with classical momentum: v <- mu v + g; w <- w - lr v.
///
/// Velocity buffers are created on the first step and matched positionally
/// to the parameter list, so every call must pass the same parameters in the
/// same order. Gradients are cleared after the update.
class SgdMomentum {
 public:
  explicit SgdMomentum(double learning_rate = 0.01, double momentum = 0.9);

  void set_learning_rate(double lr);
  double learning_rate() const { return lr_; }
  double momentum() const { return momentum_; }

  void step(std::span<Parameter* const> params);

 private:
  double lr_;
  double momentum_;
  std::vector<Tensor> velocity_;
};

void zero_grad(std::span<Parameter* const> params);

}  // namespace cife
