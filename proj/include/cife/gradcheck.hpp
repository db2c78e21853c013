#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "cife/autodiff.hpp"

namespace cife {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t entries = 0;
};

// |analytic - numeric| / max(|analytic|, |numeric|, floor)
double relative_error(double analytic, double numeric, double floor = 1e-3);

// Builds a scalar loss from leaf Vars holding `inputs`.
using InputLoss = std::function<Var(Tape&, std::span<const Var>)>;

// Compares reverse-mode gradients against central differences with the
// given step, for every entry of every input.
GradCheckResult check_input_gradients(const InputLoss& loss,
                                      std::vector<Tensor> inputs,
                                      double step = 1e-5);

// Same for parameters read by `loss` through Tape::param.
GradCheckResult check_parameter_gradients(const std::function<Var(Tape&)>& loss,
                                          std::span<Parameter* const> params,
                                          double step = 1e-5);

}  // namespace cife
