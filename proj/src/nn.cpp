#include "cife/nn.hpp"

#include <cmath>

#include "cife/errors.hpp"
#include "cife/random.hpp"

namespace cife {

LinearLayer::LinearLayer(std::size_t in, std::size_t out,
                         const std::string& name)
    : weight{name + ".weight", Tensor(Shape{in, out}), std::nullopt},
      bias{name + ".bias", Tensor(Shape{out}), std::nullopt} {}

void LinearLayer::init_parameters(std::uint64_t seed) {
  const double in = static_cast<double>(in_width());
  const double out = static_cast<double>(out_width());
  const double limit = std::sqrt(6.0 / (in + out));
  Rng rng(seed);
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& w : weight.value.data()) w = dist(rng);
  for (double& b : bias.value.data()) b = 0.0;
  weight.zero_grad();
  bias.zero_grad();
}

Var LinearLayer::forward(Tape& tape, Var x) {
  return add(matmul(x, tape.param(weight)), tape.param(bias));
}

const char* to_string(Head head) {
  switch (head) {
    case Head::identity: return "identity";
    case Head::sigmoid: return "sigmoid";
    case Head::logits: return "logits";
  }
  return "?";
}

Head parse_head(const std::string& s) {
  if (s == "identity") return Head::identity;
  if (s == "sigmoid") return Head::sigmoid;
  if (s == "logits") return Head::logits;
  throw InvalidArgument("unknown head kind '" + s + "'");
}

Mlp::Mlp(std::string name, const std::vector<std::size_t>& widths, Head head)
    : name_(std::move(name)), head_(head) {
  if (widths.size() < 2) {
    throw InvalidArgument("Mlp " + name_ + " needs at least two widths");
  }
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    if (widths[i] == 0 || widths[i + 1] == 0) {
      throw InvalidArgument("Mlp " + name_ + ": zero layer width");
    }
    layers_.emplace_back(widths[i], widths[i + 1],
                         name_ + ".layer" + std::to_string(i));
  }
}

void Mlp::init_parameters(std::uint64_t seed) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].init_parameters(derive_seed(seed, i));
  }
}

Var Mlp::forward(Tape& tape, Var x) {
  if (x.value().rank() != 2 || x.value().cols() != in_width()) {
    throw ShapeError(name_ + ": input of shape " +
                     shape_string(x.value().shape()) + " for input width " +
                     std::to_string(in_width()));
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i].forward(tape, x);
    if (i + 1 < layers_.size()) x = relu(x);
  }
  return head_ == Head::sigmoid ? sigmoid(x) : x;
}

Tensor Mlp::infer(const Tensor& x) const {
  Tape tape(false);
  Var h = tape.constant(x);
  if (x.rank() != 2 || x.cols() != in_width()) {
    throw ShapeError(name_ + ": input of shape " + shape_string(x.shape()) +
                     " for input width " + std::to_string(in_width()));
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = add(matmul(h, tape.constant(layers_[i].weight.value)),
            tape.constant(layers_[i].bias.value));
    if (i + 1 < layers_.size()) h = relu(h);
  }
  if (head_ == Head::sigmoid) h = sigmoid(h);
  return h.value();
}

std::vector<Parameter*> Mlp::parameters() {
  std::vector<Parameter*> out;
  for (auto& layer : layers_) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
  return out;
}

std::vector<const Parameter*> Mlp::parameters() const {
  std::vector<const Parameter*> out;
  for (const auto& layer : layers_) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
  return out;
}

std::vector<std::size_t> Mlp::widths() const {
  std::vector<std::size_t> w;
  if (layers_.empty()) return w;
  w.push_back(in_width());
  for (const auto& layer : layers_) w.push_back(layer.out_width());
  return w;
}

void ScheduleParams::validate() const {
  if (!(eta0 > 0.0 && theta > 0.0 && beta > 0.0 && delta > 0.0)) {
    throw InvalidArgument("schedule parameters must be strictly positive");
  }
}

namespace {

void check_progress(double p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw InvalidArgument("training progress " + std::to_string(p) +
                          " outside [0, 1]");
  }
}

}  // namespace

double lr_schedule(double p, const ScheduleParams& sp) {
  check_progress(p);
  return sp.eta0 / std::pow(1.0 + sp.theta * p, sp.beta);
}

double lambda_d_schedule(double p, const ScheduleParams& sp) {
  check_progress(p);
  const double e = std::exp(-sp.delta * p);
  return (1.0 - e) / (1.0 + e);
}

SgdMomentum::SgdMomentum(double learning_rate, double momentum)
    : momentum_(momentum) {
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw InvalidArgument("momentum must lie in [0, 1)");
  }
  set_learning_rate(learning_rate);
}

void SgdMomentum::set_learning_rate(double lr) {
  if (!(lr > 0.0)) throw InvalidArgument("learning rate must be positive");
  lr_ = lr;
}

void SgdMomentum::step(std::span<Parameter* const> params) {
  for (const Parameter* p : params) {
    if (!p->grad) throw InvalidArgument("sgd_step: no gradient for " + p->name);
  }
  if (velocity_.empty()) {
    for (const Parameter* p : params) velocity_.emplace_back(p->value.shape());
  }
  if (velocity_.size() != params.size()) {
    throw ShapeError("sgd_step: optimizer holds " +
                     std::to_string(velocity_.size()) +
                     " velocity buffers, got " + std::to_string(params.size()) +
                     " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    Tensor& v = velocity_[i];
    if (v.shape() != p.value.shape()) {
      throw ShapeError("sgd_step: velocity shape " + shape_string(v.shape()) +
                       " does not match " + p.name + " " +
                       shape_string(p.value.shape()));
    }
    auto w = p.value.data();
    auto g = p.grad->data();
    auto vel = v.data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      vel[j] = momentum_ * vel[j] + g[j];
      w[j] -= lr_ * vel[j];
    }
    p.grad.reset();
  }
}

void zero_grad(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

}  // namespace cife
