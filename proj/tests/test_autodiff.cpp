#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cife/autodiff.hpp"
#include "cife/errors.hpp"
#include "cife/gradcheck.hpp"
#include "cife/nn.hpp"
#include "test_util.hpp"

using namespace cife;
using cife::test::away_from_zero;
using cife::test::random_tensor;

namespace {

std::vector<double> values(Var v) {
  auto d = v.value().data();
  return {d.begin(), d.end()};
}

}  // namespace

// ---- tensor ----

TEST(Tensor, RejectsZeroDimensionsAndSizeMismatch) {
  EXPECT_THROW(Tensor(Shape{0, 3}), ShapeError);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Tensor, ShapeProductMatchesData) {
  Tensor t(Shape{3, 4, 2}, 1.5);
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rows(), 3u);
  EXPECT_EQ(t.cols(), 8u);
}

TEST(Tensor, GatherRows) {
  const Tensor t = Tensor::from_rows({{1, 2}, {3, 4}, {5, 6}});
  const std::vector<std::size_t> idx{2, 0, 2};
  EXPECT_EQ(gather_rows(t, idx), Tensor::from_rows({{5, 6}, {1, 2}, {5, 6}}));
  const std::vector<std::size_t> bad{3};
  EXPECT_THROW(gather_rows(t, bad), InvalidArgument);
}

// ---- elementwise examples ----

TEST(Elementwise, Examples) {
  Tape tape;
  EXPECT_EQ(values(relu(tape.constant(Tensor::vector({-1, 0, 2})))),
            (std::vector<double>{0, 0, 2}));
  EXPECT_EQ(values(add(tape.constant(Tensor::vector({1, 2})),
                       tape.constant(Tensor::vector({3, 4})))),
            (std::vector<double>{4, 6}));
  EXPECT_EQ(sigmoid(tape.constant(Tensor::scalar(0.0))).item(), 0.5);
}

TEST(Elementwise, ShapeMismatchNamesBothShapes) {
  Tape tape;
  try {
    add(tape.constant(Tensor(Shape{2, 3})), tape.constant(Tensor(Shape{3, 2})));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[3x2]"), std::string::npos) << msg;
  }
}

TEST(Elementwise, DomainErrors) {
  Tape tape;
  EXPECT_THROW(log(tape.constant(Tensor::vector({1.0, 0.0}))), DomainError);
  EXPECT_THROW(log(tape.constant(Tensor::vector({-2.0}))), DomainError);
  EXPECT_THROW(div(tape.constant(Tensor::vector({1.0})), tape.constant(Tensor::vector({0.0}))),
               DomainError);
}

TEST(Elementwise, BiasBroadcastOverBatch) {
  Tape tape;
  Var x = tape.leaf(Tensor::from_rows({{1, 2}, {3, 4}, {5, 6}}));
  Var b = tape.leaf(Tensor::vector({10, 20}));
  Var y = add(x, b);
  EXPECT_EQ(y.value(), Tensor::from_rows({{11, 22}, {13, 24}, {15, 26}}));
  tape.backward(sum(y));
  EXPECT_EQ(*tape.grad(b), Tensor::vector({3, 3}));
}

// ---- matmul ----

TEST(Matmul, Examples) {
  Tape tape;
  const Tensor m = Tensor::from_rows({{1, 2}, {3, 4}});
  EXPECT_EQ(matmul(tape.constant(Tensor::from_rows({{1, 0}, {0, 1}})), tape.constant(m)).value(),
            m);
  EXPECT_EQ(matmul(tape.constant(Tensor::from_rows({{1, 2}})),
                   tape.constant(Tensor::from_rows({{3}, {4}})))
                .value(),
            Tensor::from_rows({{11}}));
  EXPECT_THROW(matmul(tape.constant(Tensor(Shape{2, 3})), tape.constant(Tensor(Shape{2, 3}))),
               ShapeError);
}

TEST(Matmul, FiniteDifferenceOracle) {
  std::mt19937_64 rng(1);
  const auto r = check_input_gradients(
      [](Tape&, std::span<const Var> v) { return sum(matmul(v[0], v[1])); },
      {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)});
  EXPECT_LT(r.max_relative_error, 1e-6);
  EXPECT_EQ(r.entries, 20u);
}

// ---- losses ----

TEST(SoftmaxCrossEntropy, Examples) {
  Tape tape;
  const Labels labels{0, 2};
  EXPECT_NEAR(softmax_cross_entropy(tape.constant(Tensor(Shape{2, 3})), labels).item(),
              std::log(3.0), 1e-12);
  const Labels zero{0};
  EXPECT_LT(softmax_cross_entropy(tape.constant(Tensor::from_rows({{10, -10}})), zero).item(),
            1e-4);
  const Labels bad{3};
  EXPECT_THROW(softmax_cross_entropy(tape.constant(Tensor(Shape{1, 3})), bad), InvalidArgument);
}

TEST(SoftmaxCrossEntropy, FiniteDifferenceOracle) {
  std::mt19937_64 rng(2);
  const Labels labels{0, 4, 2, 1};
  const auto r = check_input_gradients(
      [&](Tape&, std::span<const Var> v) { return softmax_cross_entropy(v[0], labels); },
      {random_tensor({4, 5}, rng, -3, 3)});
  EXPECT_LT(r.max_relative_error, 1e-5);
}

TEST(SoftmaxCrossEntropy, StableForLargeLogits) {
  Tape tape;
  const Labels labels{1};
  const double v =
      softmax_cross_entropy(tape.constant(Tensor::from_rows({{1000, 0}})), labels).item();
  EXPECT_NEAR(v, 1000.0, 1e-9);
}

TEST(Softmax, RowsSumToOne) {
  std::mt19937_64 rng(3);
  Tape tape;
  const Tensor p = softmax(tape.constant(random_tensor({50, 7}, rng, -20, 20))).value();
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double s = 0.0;
    for (double x : p.row(r)) s += x;
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(BinaryCrossEntropy, Examples) {
  Tape tape;
  const std::vector<double> t01{0, 1};
  EXPECT_NEAR(binary_cross_entropy(tape.constant(Tensor::vector({0.5, 0.5})), t01).item(),
              std::log(2.0), 1e-12);
  const std::vector<double> t1{1};
  EXPECT_NEAR(binary_cross_entropy(tape.constant(Tensor::vector({1 - 1e-9})), t1).item(), 0.0,
              1e-8);
  EXPECT_THROW(binary_cross_entropy(tape.constant(Tensor::vector({1.5})), t1), DomainError);
  EXPECT_THROW(binary_cross_entropy(tape.constant(Tensor::vector({-0.1})), t1), DomainError);
}

TEST(BinaryCrossEntropy, SaturatedProbabilitiesStayFinite) {
  Tape tape;
  const std::vector<double> t{0, 1};
  Var p = tape.leaf(Tensor::vector({1.0, 0.0}));
  Var loss = binary_cross_entropy(p, t);
  EXPECT_TRUE(std::isfinite(loss.item()));
  tape.backward(loss);
  for (double g : tape.grad(p)->data()) EXPECT_TRUE(std::isfinite(g));
}

TEST(BinaryCrossEntropy, FiniteDifferenceOracle) {
  std::mt19937_64 rng(4);
  const std::vector<double> t{0, 1, 1, 0, 1, 0};
  const auto r = check_input_gradients(
      [&](Tape&, std::span<const Var> v) { return binary_cross_entropy(v[0], t); },
      {random_tensor({6}, rng, 0.05, 0.95)});
  EXPECT_LT(r.max_relative_error, 1e-5);
}

// ---- gradient reversal ----

TEST(GradReverse, Examples) {
  Tape tape;
  const Tensor x0 = Tensor::vector({1.5, -2});
  Var x = tape.leaf(x0);
  Var y = grad_reverse(x, 1.0);
  EXPECT_EQ(y.value(), x0);
  tape.backward(sum(mul(y, tape.constant(Tensor::vector({0.5, -1})))));
  EXPECT_EQ(*tape.grad(x), Tensor::vector({-0.5, 1}));

  Tape t2;
  Var a = t2.leaf(Tensor::vector({3.0}));
  t2.backward(scale(grad_reverse(a, 0.25), 2.0));
  EXPECT_EQ(*t2.grad(a), Tensor::vector({-0.5}));
  EXPECT_THROW(grad_reverse(a, -1.0), InvalidArgument);
}

TEST(GradReverse, ExactNegationOfUpstream) {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    const double coeff = std::uniform_real_distribution<double>(0.0, 3.0)(rng);
    const Tensor x0 = random_tensor({4, 3}, rng);
    const Tensor w = random_tensor({4, 3}, rng);
    Tape plain;
    Var xp = plain.leaf(x0);
    plain.backward(sum(mul(xp, plain.constant(w))));
    Tape rev;
    Var xr = rev.leaf(x0);
    Var y = grad_reverse(xr, coeff);
    EXPECT_EQ(y.value(), x0);
    rev.backward(sum(mul(y, rev.constant(w))));
    for (std::size_t i = 0; i < x0.size(); ++i) {
      EXPECT_EQ((*rev.grad(xr))[i], -coeff * (*plain.grad(xp))[i]);
    }
  }
}

// ---- backward ----

TEST(Backward, Examples) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1, 2, 3}));
  tape.backward(sum(x));
  EXPECT_EQ(*tape.grad(x), Tensor::vector({1, 1, 1}));

  Tape t2;
  Var y = t2.leaf(Tensor::vector({1, 2, 3}));
  t2.backward(add(sum(y), sum(y)));
  EXPECT_EQ(*t2.grad(y), Tensor::vector({2, 2, 2}));
}

TEST(Backward, NonScalarLossRejected) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1, 2}));
  EXPECT_THROW(tape.backward(x), ShapeError);
}

TEST(Backward, OffPathNodesHaveNoGradient) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1, 2}));
  Var unused = tape.leaf(Tensor::vector({3, 4}));
  tape.backward(sum(x));
  EXPECT_EQ(tape.grad(unused), nullptr);
}

TEST(Backward, ParameterGradientsAccumulateAcrossUses) {
  Parameter p{"w", Tensor::vector({1, 2}), std::nullopt};
  Tape tape;
  Var a = tape.param(p);
  Var b = tape.param(p);
  EXPECT_EQ(a.id(), b.id());
  tape.backward(add(sum(a), sum(mul(b, b))));
  EXPECT_EQ(*p.grad, Tensor::vector({3, 5}));
}

TEST(Backward, ReplayIsDeterministic) {
  std::mt19937_64 rng(6);
  const Tensor x0 = random_tensor({5, 4}, rng);
  const Tensor w0 = random_tensor({4, 3}, rng);
  auto run = [&] {
    Tape tape;
    Var x = tape.leaf(x0);
    Var w = tape.leaf(w0);
    const Labels labels{0, 1, 2, 0, 1};
    tape.backward(softmax_cross_entropy(tanh(matmul(x, w)), labels));
    return std::pair(*tape.grad(x), *tape.grad(w));
  };
  EXPECT_EQ(run(), run());
}

TEST(Backward, TwoLayerMlpParametersMatchFiniteDifferences) {
  Mlp net("net", {5, 8, 3}, Head::logits);
  net.init_parameters(11);
  std::mt19937_64 rng(7);
  const Tensor x = random_tensor({6, 5}, rng);
  const Labels y{0, 1, 2, 2, 1, 0};
  auto params = net.parameters();
  const auto r = check_parameter_gradients(
      [&](Tape& t) { return softmax_cross_entropy(net.forward(t, t.constant(x)), y); }, params);
  EXPECT_LT(r.max_relative_error, 1e-4);
  EXPECT_EQ(r.entries, 5u * 8 + 8 + 8 * 3 + 3);
}

// ---- concat / slice / outer ----

TEST(Concat, Examples) {
  Tape tape;
  Var a = tape.leaf(Tensor::from_rows({{1, 2}}));
  Var b = tape.leaf(Tensor::from_rows({{3}}));
  Var c = concat(a, b);
  EXPECT_EQ(c.value(), Tensor::from_rows({{1, 2, 3}}));
  EXPECT_EQ(slice_cols(c, 0, 2).value(), a.value());
  EXPECT_EQ(slice_cols(c, 2, 3).value(), b.value());
  tape.backward(sum(c));
  EXPECT_EQ(*tape.grad(a), Tensor::from_rows({{1, 1}}));
  EXPECT_EQ(*tape.grad(b), Tensor::from_rows({{1}}));
  EXPECT_THROW(concat(a, tape.constant(Tensor(Shape{2, 1}))), ShapeError);
}

TEST(Detach, BlocksGradient) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1, 2}));
  Var y = add(x, detach(x));
  tape.backward(sum(y));
  EXPECT_EQ(*tape.grad(x), Tensor::vector({1, 1}));
}

// ---- randomized finite-difference sweep over every differentiable op ----

struct OpCase {
  const char* name;
  std::function<std::vector<Tensor>(std::mt19937_64&, std::size_t, std::size_t)> inputs;
  InputLoss loss;
};

std::vector<OpCase> op_cases() {
  auto two = [](std::mt19937_64& g, std::size_t n, std::size_t m) {
    return std::vector<Tensor>{random_tensor({n, m}, g), random_tensor({n, m}, g)};
  };
  auto one = [](std::mt19937_64& g, std::size_t n, std::size_t m) {
    return std::vector<Tensor>{random_tensor({n, m}, g, -2, 2)};
  };
  // Weighted sum keeps upstream gradients non-uniform.
  auto wsum = [](Var v) {
    Tensor w(v.shape());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.3 + 0.1 * static_cast<double>(i % 7);
    return sum(mul(v, v.tape()->constant(w)));
  };
  return {
      {"add", two, [=](Tape&, std::span<const Var> v) { return wsum(add(v[0], v[1])); }},
      {"sub", two, [=](Tape&, std::span<const Var> v) { return wsum(sub(v[0], v[1])); }},
      {"mul", two, [=](Tape&, std::span<const Var> v) { return wsum(mul(v[0], v[1])); }},
      {"div",
       [](std::mt19937_64& g, std::size_t n, std::size_t m) {
         return std::vector<Tensor>{random_tensor({n, m}, g), away_from_zero({n, m}, g, 0.5, 2)};
       },
       [=](Tape&, std::span<const Var> v) { return wsum(div(v[0], v[1])); }},
      {"bias-broadcast",
       [](std::mt19937_64& g, std::size_t n, std::size_t m) {
         return std::vector<Tensor>{random_tensor({n, m}, g), random_tensor({m}, g)};
       },
       [=](Tape&, std::span<const Var> v) { return wsum(mul(add(v[0], v[1]), v[0])); }},
      {"relu",
       [](std::mt19937_64& g, std::size_t n, std::size_t m) {
         return std::vector<Tensor>{away_from_zero({n, m}, g)};
       },
       [=](Tape&, std::span<const Var> v) { return wsum(relu(v[0])); }},
      {"exp", one, [=](Tape&, std::span<const Var> v) { return wsum(exp(v[0])); }},
      {"log",
       [](std::mt19937_64& g, std::size_t n, std::size_t m) {
         return std::vector<Tensor>{random_tensor({n, m}, g, 0.2, 3)};
       },
       [=](Tape&, std::span<const Var> v) { return wsum(log(v[0])); }},
      {"neg", one, [=](Tape&, std::span<const Var> v) { return wsum(neg(v[0])); }},
      {"sigmoid", one, [=](Tape&, std::span<const Var> v) { return wsum(sigmoid(v[0])); }},
      {"tanh", one, [=](Tape&, std::span<const Var> v) { return wsum(tanh(v[0])); }},
      {"scale", one, [=](Tape&, std::span<const Var> v) { return wsum(scale(v[0], -1.7)); }},
      {"mean", one, [](Tape&, std::span<const Var> v) { return mean(mul(v[0], v[0])); }},
      {"matmul",
       [](std::mt19937_64& g, std::size_t n, std::size_t m) {
         return std::vector<Tensor>{random_tensor({n, m}, g), random_tensor({m, n + 1}, g)};
       },
       [=](Tape&, std::span<const Var> v) { return wsum(matmul(v[0], v[1])); }},
      {"softmax", one, [=](Tape&, std::span<const Var> v) { return wsum(softmax(v[0])); }},
      {"softmax-ce", one,
       [](Tape&, std::span<const Var> v) {
         Labels y(v[0].value().rows());
         for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<Label>(i % v[0].value().cols());
         return softmax_cross_entropy(v[0], y);
       }},
      {"bce",
       [](std::mt19937_64& g, std::size_t n, std::size_t) {
         return std::vector<Tensor>{random_tensor({n}, g, 0.05, 0.95)};
       },
       [](Tape&, std::span<const Var> v) {
         std::vector<double> t(v[0].value().size());
         for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i % 2);
         return binary_cross_entropy(v[0], t);
       }},
      {"grad-reverse", one,
       [=](Tape&, std::span<const Var> v) {
         // Reversal changes the gradient by design; undo it to compare with
         // the plain function.
         return wsum(grad_reverse(grad_reverse(v[0], 0.5), 2.0));
       }},
      {"concat", two, [=](Tape&, std::span<const Var> v) { return wsum(concat(v[0], tanh(v[1]))); }},
      {"slice-cols", one,
       [=](Tape&, std::span<const Var> v) {
         const std::size_t c = v[0].value().cols();
         return wsum(slice_cols(exp(v[0]), c / 2, c));
       }},
      {"outer-rows",
       [](std::mt19937_64& g, std::size_t n, std::size_t m) {
         return std::vector<Tensor>{random_tensor({n, m}, g), random_tensor({n, 3}, g)};
       },
       [=](Tape&, std::span<const Var> v) { return wsum(outer_rows(v[0], v[1])); }},
  };
}

TEST(GradientCheck, EveryOpOverRandomInstances) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> dim(1, 5);
  std::size_t cases = 0;
  for (const auto& op : op_cases()) {
    for (int rep = 0; rep < 6; ++rep) {
      const std::size_t n = dim(rng);
      const std::size_t m = dim(rng) + 1;
      const auto r = check_input_gradients(op.loss, op.inputs(rng, n, m));
      EXPECT_LT(r.max_relative_error, 1e-4) << op.name << " n=" << n << " m=" << m;
      ++cases;
    }
  }
  EXPECT_GE(cases, 100u);
}

TEST(GradientCheck, RandomThreeLayerNetworks) {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<std::size_t> width(2, 6);
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t in = width(rng), h1 = width(rng), h2 = width(rng), k = width(rng);
    Mlp net("net", {in, h1, h2, k}, Head::logits);
    net.init_parameters(static_cast<std::uint64_t>(rep));
    const Tensor x = random_tensor({4, in}, rng);
    Labels y(4);
    for (std::size_t i = 0; i < 4; ++i) y[i] = static_cast<Label>(i % k);
    auto params = net.parameters();
    const auto r = check_parameter_gradients(
        [&](Tape& t) { return softmax_cross_entropy(net.forward(t, t.constant(x)), y); },
        params);
    EXPECT_LT(r.max_relative_error, 1e-4) << "rep " << rep;
  }
}
