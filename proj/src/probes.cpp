#include "cife/probes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cife/errors.hpp"
#include "cife/random.hpp"

namespace cife {

namespace {

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

Split split_half(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t half = n / 2;
  return {std::vector<std::size_t>(order.begin(), order.begin() + half),
          std::vector<std::size_t>(order.begin() + half, order.end())};
}

Labels pick(std::span<const Label> labels, std::span<const std::size_t> idx) {
  Labels out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = labels[idx[i]];
  return out;
}

Tensor stack(const Tensor& a, const Tensor& b) {
  Shape shape = a.shape();
  shape[0] = a.rows() + b.rows();
  std::vector<double> data(a.data().begin(), a.data().end());
  data.insert(data.end(), b.data().begin(), b.data().end());
  return Tensor(shape, std::move(data));
}

class Probe {
 public:
  Probe(const Tensor& x, std::span<const Label> y, std::size_t classes,
        std::uint64_t seed, const ProbeSettings& settings)
      : net_("probe", {x.cols(), settings.hidden, classes}, Head::logits) {
    net_.init_parameters(derive_seed(seed, 0));
    const std::size_t n = x.rows();
    const std::size_t batch = std::min(settings.batch_size, n);
    const std::size_t per_epoch = (n + batch - 1) / batch;
    const std::size_t total = settings.epochs * per_epoch;
    SgdMomentum opt(settings.schedule.eta0, settings.momentum);
    auto params = net_.parameters();
    Rng rng(derive_seed(seed, 1));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t it = 0;
    for (std::size_t e = 0; e < settings.epochs; ++e) {
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t b = 0; b < per_epoch; ++b, ++it) {
        const std::size_t begin = b * batch;
        const std::size_t end = std::min(begin + batch, n);
        std::span<const std::size_t> idx(order.data() + begin, end - begin);
        opt.set_learning_rate(lr_schedule(
            static_cast<double>(it) / static_cast<double>(total), settings.schedule));
        Tape tape;
        Var loss = softmax_cross_entropy(
            net_.forward(tape, tape.constant(gather_rows(x, idx))), pick(y, idx));
        tape.backward(loss);
        opt.step(params);
      }
    }
  }

  double accuracy(const Tensor& x, std::span<const Label> y) const {
    return evaluate_accuracy(argmax_rows(net_.infer(x)), y);
  }

 private:
  Mlp net_;
};

std::size_t class_count(std::span<const Label> labels) {
  return static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1;
}

}  // namespace

ADistance a_distance(const Tensor& features_s, const Tensor& features_t,
                     std::uint64_t seed, const ProbeSettings& settings) {
  if (features_s.rank() != 2 || features_t.rank() != 2 ||
      features_s.rows() < 4 || features_t.rows() < 4) {
    throw InvalidArgument("a_distance needs at least 4 samples per domain");
  }
  if (features_s.cols() != features_t.cols()) {
    throw ShapeError("a_distance: feature widths " +
                     std::to_string(features_s.cols()) + " and " +
                     std::to_string(features_t.cols()) + " differ");
  }
  Rng rng(derive_seed(seed, 7));
  const Split s = split_half(features_s.rows(), rng);
  const Split t = split_half(features_t.rows(), rng);
  auto domain_labels = [](std::size_t ns, std::size_t nt) {
    Labels l(ns, 0);
    l.insert(l.end(), nt, 1);
    return l;
  };
  const Tensor train_x = stack(gather_rows(features_s, s.train),
                               gather_rows(features_t, t.train));
  const Tensor test_x = stack(gather_rows(features_s, s.test),
                              gather_rows(features_t, t.test));
  const Probe probe(train_x, domain_labels(s.train.size(), t.train.size()), 2,
                    seed, settings);
  const double err =
      1.0 - probe.accuracy(test_x, domain_labels(s.test.size(), t.test.size()));
  ADistance out;
  out.epsilon = std::clamp(std::min(err, 1.0 - err), 0.0, 0.5);
  out.d_a = 2.0 * (1.0 - 2.0 * out.epsilon);
  return out;
}

JointHypothesisError adaptability(const Tensor& features_s,
                                  std::span<const Label> labels_s,
                                  const Tensor& features_t,
                                  std::span<const Label> labels_t,
                                  std::uint64_t seed,
                                  const ProbeSettings& settings) {
  if (features_s.rows() != labels_s.size() || features_t.rows() != labels_t.size()) {
    throw ShapeError("adaptability: feature rows and label counts differ");
  }
  if (features_s.cols() != features_t.cols()) {
    throw ShapeError("adaptability: source and target feature widths differ");
  }
  if (features_s.rows() < 2 || features_t.rows() < 2) {
    throw InvalidArgument("adaptability needs at least 2 samples per domain");
  }
  Rng rng(derive_seed(seed, 7));
  const Split s = split_half(features_s.rows(), rng);
  const Split t = split_half(features_t.rows(), rng);
  Labels train_y = pick(labels_s, s.train);
  const Labels train_t = pick(labels_t, t.train);
  train_y.insert(train_y.end(), train_t.begin(), train_t.end());
  const std::size_t classes =
      std::max(class_count(labels_s), class_count(labels_t));
  if (classes < 2) throw InvalidArgument("adaptability: labels contain a single class");
  std::vector<bool> present(classes, false);
  for (Label l : train_y) present[l] = true;
  for (std::size_t c = 0; c < classes; ++c) {
    if (!present[c]) {
      throw InvalidArgument("adaptability: class " + std::to_string(c) +
                            " missing from the joint training set");
    }
  }
  const Probe probe(stack(gather_rows(features_s, s.train),
                          gather_rows(features_t, t.train)),
                    train_y, classes, seed, settings);
  JointHypothesisError out;
  out.source = 1.0 - probe.accuracy(gather_rows(features_s, s.test),
                                    pick(labels_s, s.test));
  out.target = 1.0 - probe.accuracy(gather_rows(features_t, t.test),
                                    pick(labels_t, t.test));
  out.sum = out.source + out.target;
  return out;
}

double feature_probe(const Tensor& features, std::span<const Label> labels,
                     std::uint64_t seed, const ProbeSettings& settings) {
  if (features.rank() != 2 || features.rows() != labels.size()) {
    throw ShapeError("feature_probe: feature rows and label count differ");
  }
  if (std::adjacent_find(labels.begin(), labels.end(), std::not_equal_to<>()) ==
      labels.end()) {
    throw InvalidArgument("feature_probe: labels contain a single class");
  }
  Rng rng(derive_seed(seed, 7));
  const Split split = split_half(features.rows(), rng);
  if (split.train.empty()) throw InvalidArgument("feature_probe: too few samples");
  const Probe probe(gather_rows(features, split.train), pick(labels, split.train),
                    class_count(labels), seed, settings);
  return probe.accuracy(gather_rows(features, split.test), pick(labels, split.test));
}

std::vector<SweepRow> lambda_c_sweep(const DomainDataset& ds,
                                     const TrainConfig& base,
                                     std::span<const double> grid,
                                     std::size_t n_runs) {
  if (grid.empty()) throw InvalidArgument("lambda_c sweep: empty grid");
  std::vector<double> values(grid.begin(), grid.end());
  std::sort(values.begin(), values.end());
  std::vector<SweepRow> rows;
  for (double lambda_c : values) {
    TrainConfig cfg = base;
    cfg.lambda_c = lambda_c;
    const ReplicateSummary s = run_replicates(cfg, ds, n_runs);
    rows.push_back({lambda_c, s.mean, s.std});
  }
  return rows;
}

Tensor extract_features(const AnyModel& model, const Tensor& x,
                        FeatureKind kind) {
  if (const auto* m = std::get_if<CifeModel>(&model)) {
    switch (kind) {
      case FeatureKind::invariant: return m->fs.infer(x);
      case FeatureKind::specific: return m->fd.infer(x);
      case FeatureKind::joint: {
        Tape tape(false);
        return concat(tape.constant(m->fd.infer(x)), tape.constant(m->fs.infer(x)))
            .value();
      }
    }
  }
  const auto& d = std::get<DannModel>(model);
  if (kind == FeatureKind::specific) {
    throw InvalidArgument("DANN models have no domain-specific extractor");
  }
  return d.features.infer(x);
}

}  // namespace cife
