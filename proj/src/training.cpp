#include "cife/training.hpp"

#include <cmath>
#include <numeric>
#include <unordered_set>

#include "cife/errors.hpp"
#include "cife/random.hpp"

namespace cife {

const char* to_string(UpdateMode mode) {
  return mode == UpdateMode::reversal ? "reversal" : "two-phase";
}

UpdateMode parse_update_mode(const std::string& s) {
  if (s == "reversal") return UpdateMode::reversal;
  if (s == "two-phase") return UpdateMode::two_phase;
  throw InvalidArgument("unknown update mode '" + s +
                        "' (expected reversal or two-phase)");
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw InvalidArgument("batch size must be positive");
  if (prediction_draws == 0) {
    throw InvalidArgument("prediction draws must be positive");
  }
  if (!(lambda_d >= 0.0) || !(lambda_c >= 0.0)) {
    throw InvalidArgument("lambda_d and lambda_c must be non-negative");
  }
  if (!(discriminator_lr_scale > 0.0) || !std::isfinite(discriminator_lr_scale)) {
    throw InvalidArgument("discriminator learning-rate scale must be positive");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw InvalidArgument("momentum must lie in [0, 1)");
  }
  schedule.validate();
  architecture.validate();
}

TrainingLoop::TrainingLoop(AnyModel& model, const TrainConfig& cfg,
                           std::size_t total_iterations)
    : model_(model),
      cfg_(cfg),
      total_(total_iterations),
      main_(cfg.schedule.eta0, cfg.momentum),
      disc_(cfg.schedule.eta0 * cfg.discriminator_lr_scale, cfg.momentum) {
  cfg_.validate();
  if (total_iterations == 0) throw InvalidArgument("no iterations to run");
  if (!model_matches(model, cfg.variant)) {
    throw InvalidArgument(std::string("model does not match variant ") +
                          to_string(cfg.variant));
  }
}

double TrainingLoop::progress() const {
  return std::min(1.0, static_cast<double>(iteration_) /
                           static_cast<double>(total_));
}

double TrainingLoop::current_lambda_d() const {
  if (cfg_.variant == Variant::source_only) return 0.0;
  return cfg_.lambda_d * lambda_d_schedule(progress(), cfg_.schedule);
}

namespace {

void check_finite(const LossBundle& b, std::size_t iteration) {
  const std::pair<const char*, double> terms[] = {
      {"l_c", b.l_c}, {"l_d", b.l_d}, {"l_dc", b.l_dc}};
  for (const auto& [name, value] : terms) {
    if (!std::isfinite(value)) {
      throw NumericError(std::string("non-finite ") + name + " (" +
                         std::to_string(value) + ") at iteration " +
                         std::to_string(iteration));
    }
  }
}

Var discriminator_loss(const Objective& o, double lambda_d, double lambda_c) {
  Var loss = scale(o.l_d, lambda_d);
  if (o.has_category()) loss = add(loss, scale(o.l_dc, lambda_c));
  return loss;
}

// Step 8 under the loss sign convention: the extractors descend l_c and
// ascend the discriminators' losses.
Var extractor_loss(const Objective& o, double lambda_d, double lambda_c) {
  return sub(o.l_c, discriminator_loss(o, lambda_d, lambda_c));
}

}  // namespace

LossBundle TrainingLoop::step(const Batch& batch) {
  const double lr = lr_schedule(progress(), cfg_.schedule);
  main_.set_learning_rate(lr);
  disc_.set_learning_rate(lr * cfg_.discriminator_lr_scale);
  const double lambda_d = current_lambda_d();
  LossBundle b = std::visit(
      [&](auto& m) {
        if constexpr (std::is_same_v<std::decay_t<decltype(m)>, CifeModel>) {
          return step_cife(m, batch, lambda_d);
        } else {
          return step_dann(m, batch, lambda_d);
        }
      },
      model_);
  ++iteration_;
  return b;
}

LossBundle TrainingLoop::step_cife(CifeModel& m, const Batch& batch,
                                   double lambda_d) {
  const double lambda_c = cfg_.lambda_c;
  auto extractors = m.extractor_parameters();
  auto discriminators = m.discriminator_parameters();
  if (cfg_.update_mode == UpdateMode::reversal) {
    Tape tape;
    Objective o = total_objective(tape, m, batch, lambda_d, lambda_c,
                                  Routing::reversal);
    check_finite(o.values, iteration_);
    tape.backward(o.total);
    main_.step(extractors);
    disc_.step(discriminators);
    return o.values;
  }
  {
    Tape tape;
    Objective o = total_objective(tape, m, batch, lambda_d, lambda_c,
                                  Routing::detached);
    check_finite(o.values, iteration_);
    tape.backward(discriminator_loss(o, lambda_d, lambda_c));
    disc_.step(discriminators);
  }
  Tape tape;
  Objective o =
      total_objective(tape, m, batch, lambda_d, lambda_c, Routing::plain);
  check_finite(o.values, iteration_);
  tape.backward(extractor_loss(o, lambda_d, lambda_c));
  main_.step(extractors);
  zero_grad(discriminators);
  return o.values;
}

LossBundle TrainingLoop::step_dann(DannModel& m, const Batch& batch,
                                   double lambda_d) {
  auto extractors = m.extractor_parameters();
  auto discriminators = m.discriminator_parameters();
  if (cfg_.variant == Variant::source_only) {
    Tape tape;
    Objective o = source_only_objective(tape, m, batch);
    check_finite(o.values, iteration_);
    tape.backward(o.total);
    main_.step(extractors);
    return o.values;
  }
  if (cfg_.update_mode == UpdateMode::reversal) {
    Tape tape;
    Objective o = total_objective(tape, m, batch, lambda_d, Routing::reversal);
    check_finite(o.values, iteration_);
    tape.backward(o.total);
    main_.step(extractors);
    disc_.step(discriminators);
    return o.values;
  }
  {
    Tape tape;
    Objective o = total_objective(tape, m, batch, lambda_d, Routing::detached);
    check_finite(o.values, iteration_);
    tape.backward(discriminator_loss(o, lambda_d, 0.0));
    disc_.step(discriminators);
  }
  Tape tape;
  Objective o = total_objective(tape, m, batch, lambda_d, Routing::plain);
  check_finite(o.values, iteration_);
  tape.backward(extractor_loss(o, lambda_d, 0.0));
  main_.step(extractors);
  zero_grad(discriminators);
  return o.values;
}

void compute_extractor_gradients(AnyModel& model, const Batch& batch,
                                 double lambda_d, double lambda_c,
                                 UpdateMode mode) {
  const Routing routing =
      mode == UpdateMode::reversal ? Routing::reversal : Routing::plain;
  std::visit(
      [&](auto& m) {
        zero_grad(m.parameters());
        Tape tape;
        Objective o;
        if constexpr (std::is_same_v<std::decay_t<decltype(m)>, CifeModel>) {
          o = total_objective(tape, m, batch, lambda_d, lambda_c, routing);
        } else {
          o = total_objective(tape, m, batch, lambda_d, routing);
        }
        tape.backward(mode == UpdateMode::reversal
                          ? o.total
                          : extractor_loss(o, lambda_d, lambda_c));
        zero_grad(m.discriminator_parameters());
      },
      model);
}

// --- Prediction --------------------------------------------------------------

namespace {

// Floyd's algorithm: `count` distinct values from [0, n).
void sample_distinct(std::size_t n, std::size_t count, Rng& rng,
                     std::vector<std::size_t>& out) {
  out.clear();
  std::unordered_set<std::size_t> seen;
  for (std::size_t j = n - count; j < n; ++j) {
    std::uniform_int_distribution<std::size_t> pick(0, j);
    std::size_t t = pick(rng);
    if (!seen.insert(t).second) {
      seen.insert(j);
      t = j;
    }
    out.push_back(t);
  }
}

Tensor classify_concat(const CifeModel& model, const Tensor& fd,
                       const Tensor& fs) {
  Tape tape(false);
  Var logits = tape.constant(
      model.classifier.infer(concat(tape.constant(fd), tape.constant(fs)).value()));
  return softmax(logits).value();
}

}  // namespace

Tensor predict_target_proba(const CifeModel& model, const Tensor& source_pool,
                            const Tensor& xt, std::size_t draws,
                            std::uint64_t seed) {
  if (source_pool.rank() != 2) throw InvalidArgument("empty source pool");
  if (draws == 0) throw InvalidArgument("prediction draws must be positive");
  const std::size_t pool = source_pool.rows();
  const std::size_t n = xt.rows();
  const Tensor fd_pool = model.fd.infer(source_pool);
  const Tensor fs_t = model.fs.infer(xt);
  const std::size_t k = std::min(draws, pool);

  // choice[r][j] = pool row used by target row r in draw j.
  std::vector<std::vector<std::size_t>> choice(n);
  Rng rng(seed);
  for (std::size_t r = 0; r < n; ++r) {
    if (k == pool) {
      choice[r].resize(pool);
      std::iota(choice[r].begin(), choice[r].end(), std::size_t{0});
    } else {
      sample_distinct(pool, k, rng, choice[r]);
    }
  }

  Tensor avg(Shape{n, model.num_classes()}, 0.0);
  std::vector<std::size_t> rows(n);
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t r = 0; r < n; ++r) rows[r] = choice[r][j];
    const Tensor probs = classify_concat(model, gather_rows(fd_pool, rows), fs_t);
    for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += probs[i];
  }
  for (double& v : avg.data()) v /= static_cast<double>(k);
  return avg;
}

Labels predict_target(const CifeModel& model, const Tensor& source_pool,
                      const Tensor& xt, std::size_t draws, std::uint64_t seed) {
  return argmax_rows(predict_target_proba(model, source_pool, xt, draws, seed));
}

Labels predict_labels(const AnyModel& model, const Tensor& source_pool,
                      const Tensor& xt, std::size_t draws, std::uint64_t seed) {
  if (const auto* m = std::get_if<CifeModel>(&model)) {
    return predict_target(*m, source_pool, xt, draws, seed);
  }
  const auto& d = std::get<DannModel>(model);
  return argmax_rows(d.classifier.infer(d.features.infer(xt)));
}

Labels predict_source(const AnyModel& model, const Tensor& xs) {
  if (const auto* m = std::get_if<CifeModel>(&model)) {
    return argmax_rows(classify_concat(*m, m->fd.infer(xs), m->fs.infer(xs)));
  }
  const auto& d = std::get<DannModel>(model);
  return argmax_rows(d.classifier.infer(d.features.infer(xs)));
}

double evaluate_accuracy(std::span<const Label> predictions,
                         std::span<const Label> truth) {
  if (predictions.size() != truth.size()) {
    throw ShapeError("evaluate_accuracy: " + std::to_string(predictions.size()) +
                     " predictions for " + std::to_string(truth.size()) +
                     " labels");
  }
  if (truth.empty()) throw InvalidArgument("evaluate_accuracy: no labels");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predictions[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

std::uint64_t prediction_seed(std::uint64_t run_seed) {
  return derive_seed(run_seed, 0x5052);
}

// --- Training driver ----------------------------------------------------------

std::vector<EpochMetrics> train(AnyModel& model, const DomainDataset& ds,
                                const TrainConfig& cfg,
                                const EpochCallback& on_epoch) {
  cfg.validate();
  if (!model_matches(model, cfg.variant)) {
    throw InvalidArgument(std::string("model does not match variant ") +
                          to_string(cfg.variant));
  }
  std::vector<EpochMetrics> history;
  if (cfg.epochs == 0) return history;
  ds.validate();
  const TrainingView view = ds.training_view();
  const std::size_t per_epoch = batches_per_epoch(view.source.size(), cfg.batch_size);
  TrainingLoop loop(model, cfg, cfg.epochs * per_epoch);
  const std::uint64_t batch_seed = derive_seed(cfg.seed, 0xBA7C);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    BatchIterator batches(view, cfg.batch_size, batch_seed, epoch);
    EpochMetrics m;
    m.epoch = epoch;
    Batch batch;
    std::size_t count = 0;
    while (batches.next(batch)) {
      const LossBundle b = loop.step(batch);
      m.l_c += b.l_c;
      m.l_d += b.l_d;
      m.l_dc += b.l_dc;
      m.learning_rate = loop.learning_rate();
      m.lambda_d = b.lambda_d;
      ++count;
    }
    m.l_c /= static_cast<double>(count);
    m.l_d /= static_cast<double>(count);
    m.l_dc /= static_cast<double>(count);
    m.source_accuracy =
        evaluate_accuracy(predict_source(model, ds.source.features), ds.source.labels);
    const auto& test = ds.evaluation.target_test;
    m.target_accuracy = evaluate_accuracy(
        predict_labels(model, ds.source.features, test.features,
                       cfg.prediction_draws, derive_seed(cfg.seed, epoch)),
        test.labels);
    if (on_epoch) on_epoch(m);
    history.push_back(m);
  }
  return history;
}

ReplicateSummary summarize(std::span<const double> accuracies) {
  if (accuracies.empty()) throw InvalidArgument("no replicate results");
  ReplicateSummary s;
  s.accuracies.assign(accuracies.begin(), accuracies.end());
  const double n = static_cast<double>(accuracies.size());
  s.mean = std::accumulate(accuracies.begin(), accuracies.end(), 0.0) / n;
  double var = 0.0;
  for (double a : accuracies) var += (a - s.mean) * (a - s.mean);
  s.std = std::sqrt(var / n);
  return s;
}

ReplicateSummary run_replicates(const TrainConfig& cfg,
                                const DomainDataset& ds, std::size_t n_runs) {
  if (n_runs == 0) throw InvalidArgument("run_replicates needs n_runs >= 1");
  std::vector<double> acc;
  for (std::size_t r = 0; r < n_runs; ++r) {
    TrainConfig run = cfg;
    run.seed = cfg.seed + r;
    AnyModel model = make_model(run.variant, ds.input_dim, ds.num_classes,
                                run.architecture, run.seed);
    train(model, ds, run);
    const auto& test = ds.evaluation.target_test;
    acc.push_back(evaluate_accuracy(
        predict_labels(model, ds.source.features, test.features,
                       run.prediction_draws, prediction_seed(run.seed)),
        test.labels));
  }
  return summarize(acc);
}

}  // namespace cife
