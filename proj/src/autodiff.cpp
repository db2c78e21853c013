#include "cife/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "cife/errors.hpp"

namespace cife {

const Tensor& Var::value() const {
  if (tape_ == nullptr) throw InvalidArgument("use of an unbound Var");
  return tape_->value_of(id_);
}

void Tape::check_owned(Var v) const {
  if (v.tape() != this || v.id() >= nodes_.size()) {
    throw InvalidArgument("Var does not belong to this tape");
  }
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), std::nullopt, false, {}, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(
      Node{std::move(value), std::nullopt, recording_, {}, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
    return Var(this, it->second);
  }
  nodes_.push_back(Node{p.value, std::nullopt, recording_, {}, &p});
  param_nodes_.emplace(&p, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs,
                 BackwardFn fn) {
  bool needs = false;
  if (recording_) {
    for (std::size_t id : inputs) needs = needs || nodes_[id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), std::nullopt, needs,
                        needs ? std::move(fn) : BackwardFn{}, nullptr});
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::accumulate(std::size_t id) {
  Node& node = nodes_[id];
  if (!node.grad) node.grad.emplace(node.value.shape(), 0.0);
  return *node.grad;
}

const Tensor& Tape::value(Var v) const {
  check_owned(v);
  return nodes_[v.id()].value;
}

const Tensor* Tape::grad(Var v) const {
  check_owned(v);
  const auto& g = nodes_[v.id()].grad;
  return g ? &*g : nullptr;
}

void Tape::backward(Var loss) {
  check_owned(loss);
  if (nodes_[loss.id()].value.size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " +
                     shape_string(nodes_[loss.id()].value.shape()));
  }
  if (!recording_) throw InvalidArgument("backward() on a non-recording tape");
  for (auto& node : nodes_) node.grad.reset();
  accumulate(loss.id())[0] = 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (node.grad && node.backward) node.backward(*this, id);
  }
  for (auto& node : nodes_) {
    if (node.parameter == nullptr || !node.grad) continue;
    Parameter& p = *node.parameter;
    if (!p.grad) {
      p.grad = *node.grad;
    } else {
      auto dst = p.grad->data();
      auto src = node.grad->data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
}

namespace {

Tape& common_tape(Var a, Var b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw InvalidArgument("operands recorded on different tapes");
  }
  return *a.tape();
}

Tape& tape_of(Var a) {
  if (a.tape() == nullptr) throw InvalidArgument("use of an unbound Var");
  return *a.tape();
}

// Distance between b's elements when broadcasting b over a; 0 means equal
// shapes.
std::size_t broadcast_width(const Tensor& a, const Tensor& b,
                            const char* op) {
  if (a.shape() == b.shape()) return 0;
  if (a.rank() >= 2 && b.size() == a.cols()) {
    Shape tail(a.shape().begin() + 1, a.shape().end());
    Shape row = tail;
    row.insert(row.begin(), 1);
    if (b.shape() == tail || b.shape() == row) return b.size();
  }
  throw ShapeError(std::string(op) + ": incompatible shapes " +
                   shape_string(a.shape()) + " and " +
                   shape_string(b.shape()));
}

const char* binary_name(Binary kind) {
  switch (kind) {
    case Binary::add: return "add";
    case Binary::sub: return "sub";
    case Binary::mul: return "mul";
    case Binary::div: return "div";
  }
  return "?";
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var elementwise(Binary kind, Var a, Var b) {
  Tape& tape = common_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t width = broadcast_width(av, bv, binary_name(kind));
  const std::size_t n = av.size();
  auto bi = [width](std::size_t i) { return width == 0 ? i : i % width; };

  Tensor out(av.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[i];
    const double y = bv[bi(i)];
    switch (kind) {
      case Binary::add: out[i] = x + y; break;
      case Binary::sub: out[i] = x - y; break;
      case Binary::mul: out[i] = x * y; break;
      case Binary::div:
        if (y == 0.0) throw DomainError("div: division by zero");
        out[i] = x / y;
        break;
    }
  }
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return tape.record(
      std::move(out), {ia, ib}, [kind, ia, ib, bi, n](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        const Tensor& x = t.value_of(ia);
        const Tensor& y = t.value_of(ib);
        if (t.needs_grad(ia)) {
          Tensor& ga = t.accumulate(ia);
          for (std::size_t i = 0; i < n; ++i) {
            switch (kind) {
              case Binary::add:
              case Binary::sub: ga[i] += g[i]; break;
              case Binary::mul: ga[i] += g[i] * y[bi(i)]; break;
              case Binary::div: ga[i] += g[i] / y[bi(i)]; break;
            }
          }
        }
        if (t.needs_grad(ib)) {
          Tensor& gb = t.accumulate(ib);
          for (std::size_t i = 0; i < n; ++i) {
            const double yi = y[bi(i)];
            switch (kind) {
              case Binary::add: gb[bi(i)] += g[i]; break;
              case Binary::sub: gb[bi(i)] -= g[i]; break;
              case Binary::mul: gb[bi(i)] += g[i] * x[i]; break;
              case Binary::div: gb[bi(i)] -= g[i] * x[i] / (yi * yi); break;
            }
          }
        }
      });
}

Var elementwise(Unary kind, Var a) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double x = av[i];
    switch (kind) {
      case Unary::relu: out[i] = x > 0.0 ? x : 0.0; break;
      case Unary::exp: out[i] = std::exp(x); break;
      case Unary::log:
        if (!(x > 0.0)) {
          throw DomainError("log: non-positive input " + std::to_string(x));
        }
        out[i] = std::log(x);
        break;
      case Unary::neg: out[i] = -x; break;
      case Unary::sigmoid: out[i] = stable_sigmoid(x); break;
      case Unary::tanh: out[i] = std::tanh(x); break;
    }
  }
  const std::size_t ia = a.id();
  return tape.record(std::move(out), {ia}, [kind, ia](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    const Tensor& x = t.value_of(ia);
    const Tensor& y = t.value_of(self);
    Tensor& ga = t.accumulate(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      switch (kind) {
        case Unary::relu: ga[i] += x[i] > 0.0 ? g[i] : 0.0; break;
        case Unary::exp: ga[i] += g[i] * y[i]; break;
        case Unary::log: ga[i] += g[i] / x[i]; break;
        case Unary::neg: ga[i] -= g[i]; break;
        case Unary::sigmoid: ga[i] += g[i] * y[i] * (1.0 - y[i]); break;
        case Unary::tanh: ga[i] += g[i] * (1.0 - y[i] * y[i]); break;
      }
    }
  });
}

Var scale(Var a, double factor) {
  Tape& tape = tape_of(a);
  Tensor out = a.value();
  for (double& v : out.data()) v *= factor;
  const std::size_t ia = a.id();
  return tape.record(std::move(out), {ia}, [ia, factor](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    Tensor& ga = t.accumulate(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

Var matmul(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0]) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(av.shape()) +
                     " and " + shape_string(bv.shape()));
  }
  const std::size_t n = av.shape()[0];
  const std::size_t k = av.shape()[1];
  const std::size_t m = bv.shape()[1];
  Tensor out(Shape{n, m});
  matmul_nn(av.data(), bv.data(), out.data(), n, k, m);
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return tape.record(std::move(out), {ia, ib},
                     [ia, ib, n, k, m](Tape& t, std::size_t self) {
                       const Tensor& g = t.grad_of(self);
                       if (t.needs_grad(ia)) {
                         matmul_nt_acc(g.data(), t.value_of(ib).data(),
                                       t.accumulate(ia).data(), n, k, m);
                       }
                       if (t.needs_grad(ib)) {
                         matmul_tn_acc(t.value_of(ia).data(), g.data(),
                                       t.accumulate(ib).data(), n, k, m);
                       }
                     });
}

Var sum(Var a) {
  Tape& tape = tape_of(a);
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.id();
  return tape.record(Tensor::scalar(s), {ia}, [ia](Tape& t, std::size_t self) {
    const double g = t.grad_of(self)[0];
    for (double& v : t.accumulate(ia).data()) v += g;
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

namespace {

void softmax_row(std::span<const double> z, std::span<double> out) {
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    out[j] = std::exp(z[j] - mx);
    s += out[j];
  }
  for (double& v : out) v /= s;
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " +
                     shape_string(t.shape()));
  }
}

}  // namespace

Var softmax(Var logits) {
  Tape& tape = tape_of(logits);
  const Tensor& z = logits.value();
  require_matrix(z, "softmax");
  Tensor out(z.shape());
  for (std::size_t r = 0; r < z.rows(); ++r) softmax_row(z.row(r), out.row(r));
  const std::size_t ia = logits.id();
  return tape.record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    const Tensor& s = t.value_of(self);
    Tensor& ga = t.accumulate(ia);
    for (std::size_t r = 0; r < s.rows(); ++r) {
      auto sr = s.row(r);
      auto gr = g.row(r);
      double dot = 0.0;
      for (std::size_t j = 0; j < sr.size(); ++j) dot += gr[j] * sr[j];
      auto out = ga.row(r);
      for (std::size_t j = 0; j < sr.size(); ++j) out[j] += sr[j] * (gr[j] - dot);
    }
  });
}

Var softmax_cross_entropy(Var logits, std::span<const Label> labels) {
  Tape& tape = tape_of(logits);
  const Tensor& z = logits.value();
  require_matrix(z, "softmax_cross_entropy");
  const std::size_t n = z.rows();
  const std::size_t k = z.cols();
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for logits of shape " + shape_string(z.shape()));
  }
  auto probs = std::make_shared<Tensor>(z.shape());
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] >= k) {
      throw InvalidArgument("softmax_cross_entropy: label " +
                            std::to_string(labels[r]) + " out of range [0, " +
                            std::to_string(k) + ")");
    }
    auto zr = z.row(r);
    const double mx = *std::max_element(zr.begin(), zr.end());
    double s = 0.0;
    for (double v : zr) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    total += lse - zr[labels[r]];
    softmax_row(zr, probs->row(r));
  }
  Labels owned(labels.begin(), labels.end());
  const std::size_t ia = logits.id();
  return tape.record(
      Tensor::scalar(total / static_cast<double>(n)), {ia},
      [ia, probs, owned = std::move(owned), n](Tape& t, std::size_t self) {
        const double g = t.grad_of(self)[0] / static_cast<double>(n);
        Tensor& ga = t.accumulate(ia);
        for (std::size_t r = 0; r < n; ++r) {
          auto pr = probs->row(r);
          auto out = ga.row(r);
          for (std::size_t j = 0; j < pr.size(); ++j) out[j] += g * pr[j];
          out[owned[r]] -= g;
        }
      });
}

Var binary_cross_entropy(Var p, std::span<const double> targets) {
  Tape& tape = tape_of(p);
  const Tensor& pv = p.value();
  const std::size_t n = pv.size();
  if (targets.size() != n) {
    throw ShapeError("binary_cross_entropy: " + std::to_string(targets.size()) +
                     " targets for probabilities of shape " +
                     shape_string(pv.shape()));
  }
  constexpr double lo = kProbabilityClamp;
  constexpr double hi = 1.0 - kProbabilityClamp;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(pv[i] >= 0.0 && pv[i] <= 1.0)) {
      throw DomainError("binary_cross_entropy: probability " +
                        std::to_string(pv[i]) + " outside [0, 1]");
    }
    if (targets[i] != 0.0 && targets[i] != 1.0) {
      throw InvalidArgument("binary_cross_entropy: targets must be 0 or 1");
    }
    const double q = std::clamp(pv[i], lo, hi);
    total -= targets[i] * std::log(q) + (1.0 - targets[i]) * std::log(1.0 - q);
  }
  std::vector<double> owned(targets.begin(), targets.end());
  const std::size_t ia = p.id();
  return tape.record(
      Tensor::scalar(total / static_cast<double>(n)), {ia},
      [ia, owned = std::move(owned), n](Tape& t, std::size_t self) {
        const double g = t.grad_of(self)[0] / static_cast<double>(n);
        const Tensor& pv = t.value_of(ia);
        Tensor& ga = t.accumulate(ia);
        for (std::size_t i = 0; i < n; ++i) {
          const double q = pv[i];
          if (q < lo || q > hi) continue;  // clamped: flat
          ga[i] += g * (-owned[i] / q + (1.0 - owned[i]) / (1.0 - q));
        }
      });
}

Var grad_reverse(Var x, double coefficient) {
  if (!(coefficient >= 0.0)) {
    throw InvalidArgument("grad_reverse: coefficient must be non-negative");
  }
  Tape& tape = tape_of(x);
  const std::size_t ia = x.id();
  return tape.record(x.value(), {ia}, [ia, coefficient](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    Tensor& ga = t.accumulate(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += -coefficient * g[i];
  });
}

Var concat(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.rows() != bv.rows()) {
    throw ShapeError("concat: incompatible shapes " + shape_string(av.shape()) +
                     " and " + shape_string(bv.shape()));
  }
  const std::size_t n = av.rows();
  const std::size_t p = av.cols();
  const std::size_t q = bv.cols();
  Tensor out(Shape{n, p + q});
  for (std::size_t r = 0; r < n; ++r) {
    auto dst = out.row(r);
    std::copy(av.row(r).begin(), av.row(r).end(), dst.begin());
    std::copy(bv.row(r).begin(), bv.row(r).end(), dst.begin() + p);
  }
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return tape.record(std::move(out), {ia, ib}, [ia, ib, n, p, q](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    const bool need_a = t.needs_grad(ia);
    const bool need_b = t.needs_grad(ib);
    for (std::size_t r = 0; r < n; ++r) {
      auto gr = g.row(r);
      if (need_a) {
        auto ga = t.accumulate(ia).row(r);
        for (std::size_t j = 0; j < p; ++j) ga[j] += gr[j];
      }
      if (need_b) {
        auto gb = t.accumulate(ib).row(r);
        for (std::size_t j = 0; j < q; ++j) gb[j] += gr[p + j];
      }
    }
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  require_matrix(av, "slice_cols");
  if (begin >= end || end > av.cols()) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") invalid for shape " +
                     shape_string(av.shape()));
  }
  const std::size_t n = av.rows();
  const std::size_t w = end - begin;
  Tensor out(Shape{n, w});
  for (std::size_t r = 0; r < n; ++r) {
    auto src = av.row(r);
    std::copy(src.begin() + begin, src.begin() + end, out.row(r).begin());
  }
  const std::size_t ia = a.id();
  return tape.record(std::move(out), {ia}, [ia, begin, w, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    Tensor& ga = t.accumulate(ia);
    for (std::size_t r = 0; r < n; ++r) {
      auto gr = g.row(r);
      auto dst = ga.row(r);
      for (std::size_t j = 0; j < w; ++j) dst[begin + j] += gr[j];
    }
  });
}

Var detach(Var a) { return tape_of(a).constant(a.value()); }

Var outer_rows(Var features, Var predictions) {
  Tape& tape = common_tape(features, predictions);
  const Tensor& f = features.value();
  const Tensor& p = predictions.value();
  if (f.rank() != 2 || p.rank() != 2 || f.rows() != p.rows()) {
    throw ShapeError("outer_rows: incompatible shapes " +
                     shape_string(f.shape()) + " and " +
                     shape_string(p.shape()));
  }
  const std::size_t n = f.rows();
  const std::size_t m = f.cols();
  const std::size_t k = p.cols();
  Tensor out(Shape{n, m * k});
  for (std::size_t r = 0; r < n; ++r) {
    auto fr = f.row(r);
    auto pr = p.row(r);
    auto o = out.row(r);
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t c = 0; c < k; ++c) o[j * k + c] = fr[j] * pr[c];
    }
  }
  const std::size_t i_f = features.id();
  const std::size_t i_p = predictions.id();
  return tape.record(std::move(out), {i_f, i_p}, [i_f, i_p, n, m, k](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    const Tensor& f = t.value_of(i_f);
    const Tensor& p = t.value_of(i_p);
    const bool need_f = t.needs_grad(i_f);
    const bool need_p = t.needs_grad(i_p);
    for (std::size_t r = 0; r < n; ++r) {
      auto gr = g.row(r);
      for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t c = 0; c < k; ++c) {
          const double gv = gr[j * k + c];
          if (need_f) t.accumulate(i_f)(r, j) += gv * p(r, c);
          if (need_p) t.accumulate(i_p)(r, c) += gv * f(r, j);
        }
      }
    }
  });
}

}  // namespace cife
