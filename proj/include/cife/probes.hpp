#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cife/data.hpp"
#include "cife/models.hpp"
#include "cife/nn.hpp"
#include "cife/training.hpp"

namespace cife {

// Every probe trains a fresh one-hidden-layer Mlp on the frozen features as
// given, with the same momentum SGD and learning-rate schedule as the main
// models.
struct ProbeSettings {
  std::size_t hidden = 64;
  std::size_t epochs = 200;
  std::size_t batch_size = 64;
  double momentum = 0.9;
  ScheduleParams schedule;
};

struct ADistance {
  double epsilon = 0.0;  // held-out domain error folded into [0, 0.5]
  double d_a = 0.0;      // 2 (1 - 2 epsilon)
};

struct JointHypothesisError {
  double source = 0.0;
  double target = 0.0;
  double sum = 0.0;
};

struct SweepRow {
  double lambda_c = 0.0;
  double mean = 0.0;
  double std = 0.0;

  bool operator==(const SweepRow&) const = default;
};

struct ProbeReport {
  std::optional<ADistance> a_distance;
  std::optional<JointHypothesisError> adaptability;
  std::optional<double> category_on_fd;
  std::optional<double> category_on_fs;
  std::optional<double> domain_on_fs;
  std::vector<SweepRow> sweep;
};

// Proxy A-distance between two frozen feature sets: 50/50 train/test split
// of each domain, fresh domain classifier, epsilon = min(err, 1 - err).
ADistance a_distance(const Tensor& features_s, const Tensor& features_t,
                     std::uint64_t seed, const ProbeSettings& settings = {});

// Error of the ideal joint hypothesis: a probe trained on labeled halves of
// both domains, evaluated on the held-out halves of each.
JointHypothesisError adaptability(const Tensor& features_s,
                                  std::span<const Label> labels_s,
                                  const Tensor& features_t,
                                  std::span<const Label> labels_t,
                                  std::uint64_t seed,
                                  const ProbeSettings& settings = {});

// Held-out accuracy of a fresh probe predicting `labels` from `features`.
double feature_probe(const Tensor& features, std::span<const Label> labels,
                     std::uint64_t seed, const ProbeSettings& settings = {});

// run_replicates for each lambda_c in `grid`, sorted ascending by lambda_c.
std::vector<SweepRow> lambda_c_sweep(const DomainDataset& ds,
                                     const TrainConfig& base,
                                     std::span<const double> grid,
                                     std::size_t n_runs);

// Frozen representations of a trained model.
//   invariant: F_s (or DANN's F)
//   specific:  F_d (CIFE only)
//   joint:     [F_d(x), F_s(x)] for CIFE, F(x) for DANN
enum class FeatureKind { invariant, specific, joint };
Tensor extract_features(const AnyModel& model, const Tensor& x,
                        FeatureKind kind);

}  // namespace cife
