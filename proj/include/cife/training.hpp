#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "cife/data.hpp"
#include "cife/models.hpp"
#include "cife/nn.hpp"

namespace cife {

enum class UpdateMode {
  reversal,   // one backward through the gradient-reversal objective
  two_phase,  // discriminator update, then extractor/classifier update
};

const char* to_string(UpdateMode mode);
UpdateMode parse_update_mode(const std::string& s);

inline constexpr std::array<double, 5> kLambdaCGrid{0.0001, 0.001, 0.01, 0.1,
                                                    1.0};

struct TrainConfig {
  Variant variant = Variant::cife_dann;
  std::size_t epochs = 40;
  std::size_t batch_size = 64;
  ScheduleParams schedule;
  double lambda_d = 1.0;  // value the lambda_d ramp approaches
  double lambda_c = 1.0;  // held constant
  double momentum = 0.9;
  // Discriminator SGD runs at this multiple of the scheduled learning rate.
  double discriminator_lr_scale = 30.0;
  std::size_t prediction_draws = 8;
  std::uint64_t seed = 0;
  UpdateMode update_mode = UpdateMode::reversal;
  Architecture architecture;

  void validate() const;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double l_c = 0.0;
  double l_d = 0.0;
  double l_dc = 0.0;
  double learning_rate = 0.0;
  double lambda_d = 0.0;
  double source_accuracy = 0.0;
  double target_accuracy = 0.0;

  bool operator==(const EpochMetrics&) const = default;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Mutable state of one training run: the two optimizers and the global
/// iteration counter that drives the schedules.
class TrainingLoop {
 public:
  TrainingLoop(AnyModel& model, const TrainConfig& cfg,
               std::size_t total_iterations);

  // One iteration at progress p = iteration / total_iterations. Updates the
  // learning rate and lambda_d from the schedules, then applies the update
  // rule selected by cfg.update_mode. Throws NumericError on a non-finite
  // loss term.
  LossBundle step(const Batch& batch);

  std::size_t iteration() const { return iteration_; }
  double progress() const;
  double learning_rate() const { return main_.learning_rate(); }
  double current_lambda_d() const;

 private:
  LossBundle step_cife(CifeModel& m, const Batch& batch, double lambda_d);
  LossBundle step_dann(DannModel& m, const Batch& batch, double lambda_d);

  AnyModel& model_;
  TrainConfig cfg_;
  std::size_t total_;
  std::size_t iteration_ = 0;
  SgdMomentum main_;
  SgdMomentum disc_;
};

// Runs cfg.epochs epochs of mini-batch training. Only the label-free
// training view of `ds` reaches the update loop; evaluation labels feed the
// per-epoch metrics.
std::vector<EpochMetrics> train(AnyModel& model, const DomainDataset& ds,
                                const TrainConfig& cfg,
                                const EpochCallback& on_epoch = {});

// Gradient each extractor-side parameter (F_s, F_d, C or F, C) would be
// stepped along, left in Parameter::grad. Discriminator gradients are
// cleared. Reversal mode differentiates the reversal objective; two-phase
// mode differentiates l_c - lambda_d l_d - lambda_c l_dc without reversal.
void compute_extractor_gradients(AnyModel& model, const Batch& batch,
                                 double lambda_d, double lambda_c,
                                 UpdateMode mode);

// Averaged class probabilities: for each target row, F_d comes from
// `draws` distinct source rows chosen uniformly at random (every pool row
// when draws >= pool size) and the softmax outputs of C are averaged.
Tensor predict_target_proba(const CifeModel& model, const Tensor& source_pool,
                            const Tensor& xt, std::size_t draws,
                            std::uint64_t seed);
Labels predict_target(const CifeModel& model, const Tensor& source_pool,
                      const Tensor& xt, std::size_t draws, std::uint64_t seed);

// Dispatches on the model: CIFE models use predict_target, DANN models
// classify C(F(x)) directly.
Labels predict_labels(const AnyModel& model, const Tensor& source_pool,
                      const Tensor& xt, std::size_t draws, std::uint64_t seed);
// Source-side prediction with each example's own F_d.
Labels predict_source(const AnyModel& model, const Tensor& xs);

double evaluate_accuracy(std::span<const Label> predictions,
                         std::span<const Label> truth);

struct ReplicateSummary {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::vector<double> accuracies;
};

ReplicateSummary summarize(std::span<const double> accuracies);

// Seed offset used for target-test prediction after training.
std::uint64_t prediction_seed(std::uint64_t run_seed);

// Trains a fresh model per seed cfg.seed, cfg.seed + 1, ... and aggregates
// target-test accuracy.
ReplicateSummary run_replicates(const TrainConfig& cfg,
                                const DomainDataset& ds, std::size_t n_runs);

}  // namespace cife
