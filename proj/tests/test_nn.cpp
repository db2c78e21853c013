#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cife/errors.hpp"
#include "cife/nn.hpp"
#include "test_util.hpp"

using namespace cife;

// ---- initialization ----

TEST(Init, UnitLayerWithinGlorotBound) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    LinearLayer layer(1, 1, "l");
    layer.init_parameters(seed);
    EXPECT_LE(std::abs(layer.weight.value[0]), std::sqrt(3.0));
    EXPECT_EQ(layer.bias.value[0], 0.0);
  }
}

TEST(Init, SameSeedSameParameters) {
  LinearLayer a(7, 5, "a"), b(7, 5, "b");
  a.init_parameters(42);
  b.init_parameters(42);
  EXPECT_EQ(a.weight.value, b.weight.value);
  LinearLayer c(7, 5, "c");
  c.init_parameters(43);
  EXPECT_NE(a.weight.value, c.weight.value);
}

TEST(Init, SampleMeanNearZero) {
  // 100 x 100 = 10^4 draws from U(-a, a); the sample mean has standard
  // deviation a / sqrt(3 * 10^4).
  LinearLayer layer(100, 100, "l");
  layer.init_parameters(9);
  const double a = std::sqrt(6.0 / 200.0);
  double mean = 0.0;
  for (double w : layer.weight.value.data()) {
    EXPECT_LE(std::abs(w), a);
    mean += w / 1e4;
  }
  EXPECT_LT(std::abs(mean), 3.0 * a / std::sqrt(3.0 * 1e4));
}

// ---- Mlp ----

TEST(Mlp, WidthsChainAndHeads) {
  Mlp net("net", {3, 4, 2}, Head::sigmoid);
  net.init_parameters(1);
  EXPECT_EQ(net.widths(), (std::vector<std::size_t>{3, 4, 2}));
  EXPECT_EQ(net.parameters().size(), 4u);
  std::mt19937_64 rng(1);
  const Tensor y = net.infer(test::random_tensor({5, 3}, rng, -5, 5));
  for (double v : y.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_THROW(net.infer(Tensor(Shape{5, 4})), ShapeError);
  EXPECT_THROW(Mlp("bad", {3}, Head::identity), InvalidArgument);
  EXPECT_THROW(Mlp("bad", {3, 0, 2}, Head::identity), InvalidArgument);
}

TEST(Mlp, InferMatchesRecordedForward) {
  Mlp net("net", {4, 6, 6, 3}, Head::logits);
  net.init_parameters(5);
  std::mt19937_64 rng(2);
  const Tensor x = test::random_tensor({8, 4}, rng);
  Tape tape;
  EXPECT_EQ(net.forward(tape, tape.constant(x)).value(), net.infer(x));
}

TEST(Mlp, HeadNamesRoundTrip) {
  for (Head h : {Head::identity, Head::sigmoid, Head::logits}) {
    EXPECT_EQ(parse_head(to_string(h)), h);
  }
  EXPECT_THROW(parse_head("softplus"), InvalidArgument);
}

// ---- schedules ----

TEST(Schedule, LearningRateValues) {
  const ScheduleParams sp;
  EXPECT_EQ(lr_schedule(0.0, sp), 0.01);
  EXPECT_NEAR(lr_schedule(1.0, sp), 0.01 / std::pow(11.0, 0.75), 1e-12);
  EXPECT_NEAR(lr_schedule(1.0, sp), 1.6556e-3, 1e-7);
  EXPECT_NEAR(lr_schedule(0.5, sp), 0.01 / std::pow(6.0, 0.75), 1e-12);
  EXPECT_NEAR(lr_schedule(0.5, sp), 2.6084e-3, 1e-7);
}

TEST(Schedule, LambdaValues) {
  const ScheduleParams sp;
  EXPECT_EQ(lambda_d_schedule(0.0, sp), 0.0);
  EXPECT_NEAR(lambda_d_schedule(1.0, sp), std::tanh(5.0), 1e-12);
  EXPECT_NEAR(lambda_d_schedule(1.0, sp), 0.999909, 1e-6);
  for (double p : {0.1, 0.37, 0.8}) {
    EXPECT_NEAR(lambda_d_schedule(p, sp), std::tanh(5.0 * p), 1e-12);
  }
}

TEST(Schedule, RejectsProgressOutsideUnitInterval) {
  const ScheduleParams sp;
  EXPECT_THROW(lr_schedule(-0.01, sp), InvalidArgument);
  EXPECT_THROW(lr_schedule(1.01, sp), InvalidArgument);
  EXPECT_THROW(lambda_d_schedule(1.5, sp), InvalidArgument);
  EXPECT_THROW(lambda_d_schedule(std::nan(""), sp), InvalidArgument);
}

TEST(Schedule, MonotoneOnDenseGrid) {
  const ScheduleParams sp;
  for (int i = 1; i <= 1000; ++i) {
    const double p0 = (i - 1) / 1000.0, p1 = i / 1000.0;
    EXPECT_LT(lr_schedule(p1, sp), lr_schedule(p0, sp));
    EXPECT_GT(lambda_d_schedule(p1, sp), lambda_d_schedule(p0, sp));
  }
}

TEST(Schedule, ParamsMustBePositive) {
  ScheduleParams sp;
  sp.theta = 0.0;
  EXPECT_THROW(sp.validate(), InvalidArgument);
}

// ---- SGD ----

namespace {

Parameter scalar_param(double value) { return {"p", Tensor::vector({value}), std::nullopt}; }

}  // namespace

TEST(Sgd, VanillaStep) {
  Parameter p = scalar_param(1.0);
  p.grad = Tensor::vector({2.0});
  SgdMomentum opt(0.1, 0.0);
  std::vector<Parameter*> ps{&p};
  opt.step(ps);
  EXPECT_NEAR(p.value[0], 0.8, 1e-15);
  EXPECT_FALSE(p.grad.has_value());
}

TEST(Sgd, MomentumTwoSteps) {
  Parameter p = scalar_param(0.0);
  SgdMomentum opt(1.0, 0.9);
  std::vector<Parameter*> ps{&p};
  p.grad = Tensor::vector({1.0});
  opt.step(ps);
  p.grad = Tensor::vector({1.0});
  opt.step(ps);
  EXPECT_NEAR(p.value[0], -2.9, 1e-12);
}

TEST(Sgd, ZeroGradientDriftsByScaledVelocity) {
  Parameter p = scalar_param(0.0);
  SgdMomentum opt(0.5, 0.9);
  std::vector<Parameter*> ps{&p};
  p.grad = Tensor::vector({1.0});
  opt.step(ps);  // v = 1, p = -0.5
  p.grad = Tensor::vector({0.0});
  opt.step(ps);  // v = 0.9
  EXPECT_NEAR(p.value[0], -0.5 - 0.5 * 0.9, 1e-15);
}

TEST(Sgd, MissingGradientIsAnError) {
  Parameter p = scalar_param(0.0);
  SgdMomentum opt;
  std::vector<Parameter*> ps{&p};
  EXPECT_THROW(opt.step(ps), InvalidArgument);
}

TEST(Sgd, MomentumZeroIsPlainGradientDescent) {
  std::mt19937_64 rng(3);
  Parameter p{"w", test::random_tensor({3, 2}, rng), std::nullopt};
  const Tensor g = test::random_tensor({3, 2}, rng);
  const Tensor before = p.value;
  SgdMomentum opt(0.05, 0.0);
  std::vector<Parameter*> ps{&p};
  p.grad = g;
  opt.step(ps);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(p.value[i], before[i] - 0.05 * g[i]);
}

TEST(Sgd, StepDecreasesConvexQuadratic) {
  Parameter p = scalar_param(3.0);
  SgdMomentum opt(0.1, 0.9);
  std::vector<Parameter*> ps{&p};
  const double before = 0.5 * p.value[0] * p.value[0];
  {
    Tape tape;
    Var x = tape.param(p);
    tape.backward(scale(sum(mul(x, x)), 0.5));
  }
  opt.step(ps);
  EXPECT_LT(0.5 * p.value[0] * p.value[0], before);
}

TEST(Sgd, RejectsInvalidSettings) {
  EXPECT_THROW(SgdMomentum(0.01, 1.0), InvalidArgument);
  SgdMomentum opt;
  EXPECT_THROW(opt.set_learning_rate(0.0), InvalidArgument);
}
