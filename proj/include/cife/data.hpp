#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cife/autodiff.hpp"
#include "cife/random.hpp"
#include "cife/tensor.hpp"

namespace cife {

struct LabeledSet {
  Tensor features;  // [n x d]
  Labels labels;    // n entries

  std::size_t size() const { return labels.size(); }
  bool operator==(const LabeledSet&) const = default;
};

// What training code may see: labeled source, label-free target.
struct TrainingView {
  const LabeledSet& source;
  const Tensor& target;
};

// Ground truth kept apart from anything training reads.
struct EvaluationSection {
  Labels target_train_labels;
  LabeledSet target_test;

  bool operator==(const EvaluationSection&) const = default;
};

struct DomainDataset {
  std::size_t num_classes = 0;
  std::size_t input_dim = 0;
  LabeledSet source;
  Tensor target_train;
  EvaluationSection evaluation;

  TrainingView training_view() const { return {source, target_train}; }
  void validate() const;
  bool operator==(const DomainDataset&) const = default;
};

/// Two-factor generative task. Each example draws a class c uniformly and
/// a latent z = [prototype_c + sigma e_c ; mu_domain + sigma e_n], observed
/// as x = A_domain z. A_source and A_target have orthonormal columns; the
/// target map is A_source's Gaussian seed matrix with an independent Gaussian
/// perturbation added (class_mixing_shift times it on the class columns,
/// nuisance_mixing_shift times it on the nuisance columns) before
/// orthonormalization.
struct FactorizedTaskSpec {
  std::size_t num_classes = 4;
  std::size_t input_dim = 20;
  std::size_t class_dim = 4;
  std::size_t nuisance_dim = 4;
  double sigma = 0.25;
  std::size_t n_source = 2000;
  std::size_t n_target = 2000;
  std::size_t n_test = 1000;
  std::uint64_t seed = 0;
  double prototype_scale = 2.0;  // prototype norm
  double nuisance_shift = 0.5;   // |mu_target - mu_source|
  double class_mixing_shift = 1.5;
  double nuisance_mixing_shift = 0.0;

  void validate() const;
};

struct FactorizedTask {
  FactorizedTaskSpec spec;
  std::vector<std::vector<double>> prototypes;  // K x class_dim
  Tensor mixing_source;                         // d x (class_dim + nuisance_dim)
  Tensor mixing_target;
  std::vector<double> nuisance_mean_source;
  std::vector<double> nuisance_mean_target;
};

FactorizedTask build_factorized_task(const FactorizedTaskSpec& spec);
DomainDataset gen_factorized(const FactorizedTaskSpec& spec);

// Draws n labeled examples of one domain from a built task.
LabeledSet sample_factorized(const FactorizedTask& task, bool target,
                             std::size_t n, Rng& rng);

// Nearest-prototype classifier on the latent class block A^T x. Bayes
// optimal for the isotropic generative model.
Label latent_oracle(const FactorizedTask& task, bool target,
                    std::span<const double> x);
double latent_oracle_accuracy(const FactorizedTask& task, bool target,
                              std::size_t samples, std::uint64_t seed);

// Columns of the thin Q factor of a tall matrix (modified Gram-Schmidt).
Tensor orthonormal_columns(const Tensor& m);

/// Two interleaving half circles; the target domain is the same draw
/// rotated about the origin by angle_degrees.
struct MoonsShiftSpec {
  double angle_degrees = 30.0;
  double noise = 0.1;
  std::size_t n_source = 1000;
  std::size_t n_target = 1000;
  std::size_t n_test = 500;
  std::uint64_t seed = 0;

  void validate() const;
};

DomainDataset gen_moons_shift(const MoonsShiftSpec& spec);

struct Batch {
  Tensor source;
  Labels labels;
  Tensor target;
  std::vector<std::size_t> source_indices;
  std::vector<std::size_t> target_indices;
};

/// One epoch of paired mini-batches. Source rows are a seeded permutation
/// split into ceil(n_s / N) batches (the last may be short); target rows come
/// from successive permutations of the target set, sized to match, with a
/// fresh permutation started whenever the current one cannot fill a batch. The
/// sequence is a pure function of (seed, epoch).
class BatchIterator {
 public:
  BatchIterator(TrainingView view, std::size_t batch_size, std::uint64_t seed,
                std::size_t epoch);

  std::size_t batches_per_epoch() const { return num_batches_; }
  bool next(Batch& batch);

 private:
  TrainingView view_;
  std::size_t batch_size_;
  std::size_t num_batches_;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> source_order_;
  std::vector<std::size_t> target_order_;
};

std::size_t batches_per_epoch(std::size_t n_source, std::size_t batch_size);

// Binary dataset container, little-endian:
//   "CIFEDSET" u32 version u32 K u32 d u64 n_s u64 n_t u64 n_test
//   f64[n_s d] u16[n_s]  f64[n_t d]
//   "EVAL" u16[n_t]  f64[n_test d] u16[n_test]
std::vector<std::uint8_t> serialize_dataset(const DomainDataset& ds);
DomainDataset parse_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const std::string& path, const DomainDataset& ds);
DomainDataset load_dataset(const std::string& path);

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t dataset_checksum(const DomainDataset& ds);

}  // namespace cife
