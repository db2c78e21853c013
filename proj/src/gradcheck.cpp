#include "cife/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "cife/errors.hpp"

namespace cife {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult check_input_gradients(const InputLoss& loss,
                                      std::vector<Tensor> inputs, double step) {
  auto evaluate = [&](bool differentiate, std::vector<Tensor>* grads) {
    Tape tape(differentiate);
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(differentiate ? tape.leaf(t) : tape.constant(t));
    Var out = loss(tape, vars);
    if (out.value().size() != 1) throw ShapeError("gradient check needs a scalar loss");
    if (differentiate) {
      tape.backward(out);
      for (std::size_t i = 0; i < vars.size(); ++i) {
        const Tensor* g = tape.grad(vars[i]);
        grads->push_back(g ? *g : Tensor(inputs[i].shape(), 0.0));
      }
    }
    return out.item();
  };

  std::vector<Tensor> analytic;
  evaluate(true, &analytic);
  GradCheckResult r;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const double orig = inputs[i][j];
      inputs[i][j] = orig + step;
      const double up = evaluate(false, nullptr);
      inputs[i][j] = orig - step;
      const double down = evaluate(false, nullptr);
      inputs[i][j] = orig;
      const double numeric = (up - down) / (2.0 * step);
      r.max_relative_error =
          std::max(r.max_relative_error, relative_error(analytic[i][j], numeric));
      ++r.entries;
    }
  }
  return r;
}

GradCheckResult check_parameter_gradients(const std::function<Var(Tape&)>& loss,
                                          std::span<Parameter* const> params,
                                          double step) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  std::vector<Tensor> analytic;
  for (Parameter* p : params) {
    analytic.push_back(p->grad ? *p->grad : Tensor(p->value.shape(), 0.0));
    p->zero_grad();
  }
  auto value = [&] {
    Tape tape(false);
    return loss(tape).item();
  };
  GradCheckResult r;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& w = params[i]->value;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double orig = w[j];
      w[j] = orig + step;
      const double up = value();
      w[j] = orig - step;
      const double down = value();
      w[j] = orig;
      r.max_relative_error = std::max(
          r.max_relative_error, relative_error(analytic[i][j], (up - down) / (2.0 * step)));
      ++r.entries;
    }
  }
  return r;
}

}  // namespace cife
