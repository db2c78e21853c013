#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cife/errors.hpp"
#include "cife/probes.hpp"
#include "test_util.hpp"

using namespace cife;

namespace {

Tensor gaussian(std::size_t n, std::size_t d, std::mt19937_64& rng, double mean = 0.0) {
  std::normal_distribution<double> g(mean, 1.0);
  Tensor t(Shape{n, d});
  for (double& v : t.data()) v = g(rng);
  return t;
}

Labels cyclic_labels(std::size_t n, std::size_t k) {
  Labels y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<Label>(i % k);
  return y;
}

Tensor one_hot(std::span<const Label> y, std::size_t k) {
  Tensor t(Shape{y.size(), k});
  for (std::size_t i = 0; i < y.size(); ++i) t(i, y[i]) = 1.0;
  return t;
}

ProbeSettings quick() {
  ProbeSettings s;
  s.epochs = 30;
  return s;
}

}  // namespace

// ---- A-distance ----

TEST(ADistanceTest, IdenticalDistributionsNearZero) {
  std::mt19937_64 rng(1);
  const ADistance r = a_distance(gaussian(1000, 4, rng), gaussian(1000, 4, rng), 3);
  EXPECT_LT(std::abs(r.d_a), 0.2);
  EXPECT_NEAR(r.epsilon, 0.5, 0.05);
}

TEST(ADistanceTest, ZerosVersusOnesIsTwo) {
  const ADistance r = a_distance(Tensor(Shape{200, 3}, 0.0), Tensor(Shape{200, 3}, 1.0), 4);
  EXPECT_EQ(r.epsilon, 0.0);
  EXPECT_EQ(r.d_a, 2.0);
}

TEST(ADistanceTest, IdentityAndSymmetry) {
  std::mt19937_64 rng(2);
  const Tensor a = gaussian(300, 3, rng, 0.0), b = gaussian(300, 3, rng, 0.7);
  const ADistance ab = a_distance(a, b, 5, quick());
  const ADistance ba = a_distance(b, a, 5, quick());
  EXPECT_EQ(ab.d_a, 2.0 * (1.0 - 2.0 * ab.epsilon));
  EXPECT_GE(ab.epsilon, 0.0);
  EXPECT_LE(ab.epsilon, 0.5);
  EXPECT_NEAR(ab.epsilon, ba.epsilon, 0.05);
}

TEST(ADistanceTest, SameSeedIdenticalReport) {
  std::mt19937_64 rng(3);
  const Tensor a = gaussian(100, 3, rng), b = gaussian(100, 3, rng, 0.5);
  EXPECT_EQ(a_distance(a, b, 9, quick()).d_a, a_distance(a, b, 9, quick()).d_a);
}

TEST(ADistanceTest, TooFewSamplesRejected) {
  EXPECT_THROW(a_distance(Tensor(Shape{3, 2}), Tensor(Shape{10, 2}), 0), InvalidArgument);
  EXPECT_THROW(a_distance(Tensor(Shape{10, 2}), Tensor(Shape{10, 3}), 0), ShapeError);
}

// ---- adaptability ----

TEST(Adaptability, OneHotFeaturesGiveZeroError) {
  const Labels ys = cyclic_labels(400, 4), yt = cyclic_labels(400, 4);
  const JointHypothesisError e = adaptability(one_hot(ys, 4), ys, one_hot(yt, 4), yt, 1);
  EXPECT_LT(e.source, 0.01);
  EXPECT_LT(e.target, 0.01);
  EXPECT_EQ(e.sum, e.source + e.target);
}

TEST(Adaptability, NoiseFeaturesAreAtChance) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> cls(0, 3);
  Labels ys(2000), yt(2000);
  for (Label& y : ys) y = static_cast<Label>(cls(rng));
  for (Label& y : yt) y = static_cast<Label>(cls(rng));
  const JointHypothesisError e =
      adaptability(gaussian(2000, 4, rng), ys, gaussian(2000, 4, rng), yt, 2, quick());
  EXPECT_NEAR(e.source, 0.75, 0.05);
  EXPECT_NEAR(e.target, 0.75, 0.05);
}

TEST(Adaptability, MissingClassRejected) {
  // Labels 0 and 2 only: class 1 never appears in the joint training set.
  Labels y(40);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<Label>(2 * (i % 2));
  EXPECT_THROW(adaptability(one_hot(y, 3), y, one_hot(y, 3), y, 0, quick()), InvalidArgument);
  const Labels only0(40, 0);
  EXPECT_THROW(adaptability(one_hot(only0, 3), only0, one_hot(only0, 3), only0, 0, quick()),
               InvalidArgument);
}

// ---- feature probes ----

TEST(FeatureProbe, SingleClassRejected) {
  EXPECT_THROW(feature_probe(Tensor(Shape{20, 2}), Labels(20, 1), 0), InvalidArgument);
}

TEST(FeatureProbe, LabelCoordinateGivesPerfectAccuracy) {
  std::mt19937_64 rng(5);
  const Labels y = cyclic_labels(600, 3);
  Tensor x = gaussian(600, 3, rng);
  for (std::size_t i = 0; i < y.size(); ++i) x(i, 0) = static_cast<double>(y[i]);
  EXPECT_GT(feature_probe(x, y, 1), 0.99);
}

TEST(FeatureProbe, NoiseGivesChance) {
  std::mt19937_64 rng(6);
  const Labels y = cyclic_labels(2000, 4);
  EXPECT_NEAR(feature_probe(gaussian(2000, 3, rng), y, 2, quick()), 0.25, 0.05);
}

// ---- frozen features and sweep ----

TEST(ExtractFeatures, ShapesAndModelUntouched) {
  Architecture arch;
  arch.extractor_hidden = {8};
  arch.invariant_dim = 5;
  arch.specific_dim = 3;
  const AnyModel cife = make_model(Variant::cife_dann, 4, 2, arch, 1);
  const AnyModel dann = make_model(Variant::dann, 4, 2, arch, 1);
  const auto before = parameter_checksum(cife);
  std::mt19937_64 rng(7);
  const Tensor x = gaussian(10, 4, rng);
  EXPECT_EQ(extract_features(cife, x, FeatureKind::invariant).shape(), (Shape{10, 5}));
  EXPECT_EQ(extract_features(cife, x, FeatureKind::specific).shape(), (Shape{10, 3}));
  EXPECT_EQ(extract_features(cife, x, FeatureKind::joint).shape(), (Shape{10, 8}));
  EXPECT_EQ(extract_features(dann, x, FeatureKind::joint).shape(), (Shape{10, 5}));
  EXPECT_THROW(extract_features(dann, x, FeatureKind::specific), InvalidArgument);
  EXPECT_EQ(parameter_checksum(cife), before);
}

namespace {

DomainDataset sweep_dataset() {
  FactorizedTaskSpec s;
  s.n_source = 128;
  s.n_target = 128;
  s.n_test = 64;
  return gen_factorized(s);
}

TrainConfig sweep_config() {
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 32;
  c.architecture.extractor_hidden = {8};
  c.architecture.invariant_dim = 4;
  c.architecture.specific_dim = 4;
  c.architecture.discriminator_hidden = 4;
  c.architecture.classifier_hidden = 4;
  return c;
}

}  // namespace

TEST(Sweep, SingleValueEqualsDirectReplicates) {
  const DomainDataset ds = sweep_dataset();
  TrainConfig c = sweep_config();
  const std::vector<double> grid{0.01};
  const auto rows = lambda_c_sweep(ds, c, grid, 2);
  ASSERT_EQ(rows.size(), 1u);
  c.lambda_c = 0.01;
  const ReplicateSummary direct = run_replicates(c, ds, 2);
  EXPECT_EQ(rows[0], (SweepRow{0.01, direct.mean, direct.std}));
}

TEST(Sweep, RowsSortedAscending) {
  const std::vector<double> grid{1.0, 0.0001, 0.1};
  const auto rows = lambda_c_sweep(sweep_dataset(), sweep_config(), grid, 1);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].lambda_c, 0.0001);
  EXPECT_EQ(rows[1].lambda_c, 0.1);
  EXPECT_EQ(rows[2].lambda_c, 1.0);
  EXPECT_THROW(lambda_c_sweep(sweep_dataset(), sweep_config(), std::span<const double>{}, 1),
               InvalidArgument);
}
