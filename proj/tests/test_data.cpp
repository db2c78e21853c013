#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <set>

#include "cife/data.hpp"
#include "cife/errors.hpp"

using namespace cife;

namespace {

FactorizedTaskSpec small_spec(double sigma = 0.25, std::uint64_t seed = 0) {
  FactorizedTaskSpec s;
  s.sigma = sigma;
  s.n_source = 300;
  s.n_target = 200;
  s.n_test = 100;
  s.seed = seed;
  return s;
}

std::vector<double> column_means(const Tensor& x) {
  std::vector<double> m(x.cols(), 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) m[j] += x(i, j) / static_cast<double>(x.rows());
  return m;
}

}  // namespace

// ---- factorized generator ----

TEST(Factorized, ShapesAndLabelRange) {
  const DomainDataset ds = gen_factorized(small_spec());
  EXPECT_EQ(ds.num_classes, 4u);
  EXPECT_EQ(ds.input_dim, 20u);
  EXPECT_EQ(ds.source.features.shape(), (Shape{300, 20}));
  EXPECT_EQ(ds.target_train.shape(), (Shape{200, 20}));
  EXPECT_EQ(ds.evaluation.target_train_labels.size(), 200u);
  EXPECT_EQ(ds.evaluation.target_test.size(), 100u);
  for (Label y : ds.source.labels) EXPECT_LT(y, 4);
  EXPECT_NO_THROW(ds.validate());
}

TEST(Factorized, SameSeedBitwiseIdentical) {
  const DomainDataset a = gen_factorized(small_spec(0.25, 7));
  const DomainDataset b = gen_factorized(small_spec(0.25, 7));
  EXPECT_EQ(a, b);
  EXPECT_EQ(serialize_dataset(a), serialize_dataset(b));
  EXPECT_NE(a, gen_factorized(small_spec(0.25, 8)));
}

TEST(Factorized, MixingMapsOrthonormalAndPrototypesDistinct) {
  const FactorizedTask task = build_factorized_task(small_spec());
  for (const Tensor* a : {&task.mixing_source, &task.mixing_target}) {
    for (std::size_t i = 0; i < a->cols(); ++i) {
      for (std::size_t j = 0; j < a->cols(); ++j) {
        double dot = 0.0;
        for (std::size_t r = 0; r < a->rows(); ++r) dot += (*a)(r, i) * (*a)(r, j);
        EXPECT_NEAR(dot, i == j ? 1.0 : 0.0, 1e-12);
      }
    }
  }
  EXPECT_NE(task.mixing_source, task.mixing_target);
  for (std::size_t a = 0; a < task.prototypes.size(); ++a)
    for (std::size_t b = a + 1; b < task.prototypes.size(); ++b)
      EXPECT_NE(task.prototypes[a], task.prototypes[b]);
}

TEST(Factorized, NoiselessOracleIsPerfectOnBothDomains) {
  const FactorizedTask task = build_factorized_task(small_spec(0.0));
  EXPECT_EQ(latent_oracle_accuracy(task, false, 2000, 1), 1.0);
  EXPECT_EQ(latent_oracle_accuracy(task, true, 2000, 1), 1.0);
}

TEST(Factorized, OracleAccuracyForThreeClassTask) {
  // sigma 0.3, K 3, p_c 2 over 10^5 fresh samples; domains share prototypes
  // so the two estimates agree within Monte-Carlo error.
  FactorizedTaskSpec spec = small_spec(0.3);
  spec.num_classes = 3;
  spec.class_dim = 2;
  const FactorizedTask task = build_factorized_task(spec);
  const double src = latent_oracle_accuracy(task, false, 100000, 11);
  const double tgt = latent_oracle_accuracy(task, true, 100000, 12);
  RecordProperty("bayes_accuracy_source", std::to_string(src));
  RecordProperty("bayes_accuracy_target", std::to_string(tgt));
  EXPECT_GT(src, 1.0 / 3.0);
  EXPECT_LE(src, 1.0);
  EXPECT_NEAR(src, tgt, 0.01);
  EXPECT_EQ(src, latent_oracle_accuracy(task, false, 100000, 11));
}

TEST(Factorized, DegenerateSpecsRejected) {
  FactorizedTaskSpec s = small_spec();
  s.sigma = -0.1;
  EXPECT_THROW(gen_factorized(s), InvalidArgument);
  s = small_spec();
  s.num_classes = 1;
  EXPECT_THROW(gen_factorized(s), InvalidArgument);
  s = small_spec();
  s.input_dim = 5;  // < class_dim + nuisance_dim
  EXPECT_THROW(gen_factorized(s), InvalidArgument);
  s = small_spec();
  s.nuisance_mixing_shift = -1.0;
  EXPECT_THROW(gen_factorized(s), InvalidArgument);
}

TEST(Factorized, TrainingViewHasNoTargetLabels) {
  const DomainDataset ds = gen_factorized(small_spec());
  const TrainingView view = ds.training_view();
  static_assert(std::is_same_v<decltype(view.target), const Tensor&>);
  EXPECT_EQ(&view.target, &ds.target_train);
}

TEST(Orthonormal, RankDeficientAndWideRejected) {
  EXPECT_THROW(orthonormal_columns(Tensor(Shape{3, 4})), ShapeError);
  EXPECT_THROW(orthonormal_columns(Tensor(Shape{3, 2})), DomainError);
}

// ---- moons ----

TEST(Moons, ZeroAngleGivesIdenticalDomains) {
  MoonsShiftSpec s;
  s.angle_degrees = 0.0;
  const DomainDataset ds = gen_moons_shift(s);
  EXPECT_EQ(ds.source.features, ds.target_train);
}

TEST(Moons, TargetMeansAreRotatedSourceMeans) {
  MoonsShiftSpec s;
  s.angle_degrees = 30.0;
  const DomainDataset ds = gen_moons_shift(s);
  const auto ms = column_means(ds.source.features);
  const auto mt = column_means(ds.target_train);
  const double a = std::numbers::pi / 6.0;
  EXPECT_NEAR(mt[0], std::cos(a) * ms[0] - std::sin(a) * ms[1], 1e-12);
  EXPECT_NEAR(mt[1], std::sin(a) * ms[0] + std::cos(a) * ms[1], 1e-12);
}

TEST(Moons, LabelsBalanced) {
  MoonsShiftSpec s;
  s.n_source = 1001;
  const DomainDataset ds = gen_moons_shift(s);
  const auto ones = static_cast<long>(std::count(ds.source.labels.begin(), ds.source.labels.end(), 1));
  EXPECT_LE(std::abs(2 * ones - 1001), 2);
}

TEST(Moons, AngleOutOfRangeRejected) {
  MoonsShiftSpec s;
  s.angle_degrees = 91.0;
  EXPECT_THROW(gen_moons_shift(s), InvalidArgument);
  s.angle_degrees = -1.0;
  EXPECT_THROW(gen_moons_shift(s), InvalidArgument);
}

// ---- batching ----

TEST(Batching, ExhaustiveBatchCoversBothSets) {
  FactorizedTaskSpec spec = small_spec();
  spec.n_target = 300;
  const DomainDataset ds = gen_factorized(spec);
  BatchIterator it(ds.training_view(), 300, 1, 0);
  EXPECT_EQ(it.batches_per_epoch(), 1u);
  Batch b;
  ASSERT_TRUE(it.next(b));
  EXPECT_EQ(std::set<std::size_t>(b.source_indices.begin(), b.source_indices.end()).size(), 300u);
  EXPECT_EQ(std::set<std::size_t>(b.target_indices.begin(), b.target_indices.end()).size(), 300u);
  EXPECT_FALSE(it.next(b));
}

TEST(Batching, SameSeedAndEpochGiveSameSequence) {
  const DomainDataset ds = gen_factorized(small_spec());
  BatchIterator a(ds.training_view(), 32, 5, 3), b(ds.training_view(), 32, 5, 3);
  BatchIterator c(ds.training_view(), 32, 5, 4);
  Batch x, y, z;
  bool differs = false;
  while (a.next(x)) {
    ASSERT_TRUE(b.next(y));
    ASSERT_TRUE(c.next(z));
    EXPECT_EQ(x.source_indices, y.source_indices);
    EXPECT_EQ(x.target_indices, y.target_indices);
    EXPECT_EQ(x.source, y.source);
    differs |= x.source_indices != z.source_indices;
  }
  EXPECT_TRUE(differs);
}

TEST(Batching, SourceBatchesPartitionTheSourceSet) {
  const DomainDataset ds = gen_factorized(small_spec());
  BatchIterator it(ds.training_view(), 64, 2, 0);
  EXPECT_EQ(it.batches_per_epoch(), 5u);  // ceil(300 / 64)
  std::vector<std::size_t> seen;
  Batch b;
  std::size_t count = 0;
  while (it.next(b)) {
    ++count;
    EXPECT_EQ(b.source_indices.size(), b.target_indices.size());
    EXPECT_EQ(std::set<std::size_t>(b.target_indices.begin(), b.target_indices.end()).size(),
              b.target_indices.size());
    for (std::size_t i = 0; i < b.labels.size(); ++i)
      EXPECT_EQ(b.labels[i], ds.source.labels[b.source_indices[i]]);
    seen.insert(seen.end(), b.source_indices.begin(), b.source_indices.end());
  }
  EXPECT_EQ(count, 5u);
  std::sort(seen.begin(), seen.end());
  for (std::size_t i = 0; i < 300; ++i) EXPECT_EQ(seen[i], i);
}

TEST(Batching, OversizedBatchRejected) {
  const DomainDataset ds = gen_factorized(small_spec());
  EXPECT_THROW(BatchIterator(ds.training_view(), 201, 0, 0), InvalidArgument);
  EXPECT_THROW(BatchIterator(ds.training_view(), 0, 0, 0), InvalidArgument);
}

// ---- serialization ----

TEST(Serialization, FileRoundTripIsBitExact) {
  const DomainDataset ds = gen_factorized(small_spec());
  const auto path = (std::filesystem::temp_directory_path() / "cife_test_data_roundtrip.bin").string();
  save_dataset(path, ds);
  const DomainDataset back = load_dataset(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back, ds);
  EXPECT_EQ(back.evaluation.target_train_labels, ds.evaluation.target_train_labels);
  EXPECT_EQ(dataset_checksum(back), dataset_checksum(ds));
}

TEST(Serialization, EveryTruncationIsAParseError) {
  MoonsShiftSpec s;
  s.n_source = 4;
  s.n_target = 3;
  s.n_test = 2;
  const auto bytes = serialize_dataset(gen_moons_shift(s));
  for (std::size_t len = 0; len < bytes.size(); ++len) {
    try {
      parse_dataset(std::span(bytes.data(), len));
      ADD_FAILURE() << "accepted truncation at " << len;
    } catch (const ParseError& e) {
      EXPECT_LE(e.offset(), len);
    }
  }
}

TEST(Serialization, BadMagicReportsOffsetZero) {
  auto bytes = serialize_dataset(gen_factorized(small_spec()));
  bytes[0] = 'X';
  try {
    parse_dataset(bytes);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
}

TEST(Serialization, TrailingBytesRejected) {
  auto bytes = serialize_dataset(gen_factorized(small_spec()));
  const std::size_t n = bytes.size();
  bytes.push_back(0);
  try {
    parse_dataset(bytes);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), n);
  }
}

TEST(Serialization, ClassCountMismatchIsValidationError) {
  DomainDataset ds = gen_factorized(small_spec());
  auto bytes = serialize_dataset(ds);
  bytes[12] = 2;  // K field follows magic (8) and version (4)
  EXPECT_THROW(parse_dataset(bytes), ValidationError);
}

TEST(Serialization, ChecksumSensitiveToEvaluationLabels) {
  DomainDataset ds = gen_factorized(small_spec());
  const auto before = dataset_checksum(ds);
  ds.evaluation.target_train_labels[0] = (ds.evaluation.target_train_labels[0] + 1) % 4;
  EXPECT_NE(dataset_checksum(ds), before);
}

TEST(Serialization, Fnv1aKnownValues) {
  EXPECT_EQ(fnv1a64({}), 0xcbf29ce484222325ULL);
  const std::uint8_t a[] = {'a'};
  EXPECT_EQ(fnv1a64(a), 0xaf63dc4c8601ec8cULL);
}
