#include "cife/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>

#include "cife/errors.hpp"

namespace cife {

void DomainDataset::validate() const {
  if (num_classes < 2) throw ValidationError("dataset needs at least 2 classes");
  if (input_dim == 0) throw ValidationError("dataset input_dim must be positive");
  auto check_set = [&](const Tensor& x, const Labels* labels, const char* what) {
    if (x.rank() != 2 || x.cols() != input_dim) {
      throw ValidationError(std::string(what) + " features have shape " +
                            shape_string(x.shape()) + ", expected width " +
                            std::to_string(input_dim));
    }
    if (labels == nullptr) return;
    if (labels->size() != x.rows()) {
      throw ValidationError(std::string(what) + ": " +
                            std::to_string(labels->size()) + " labels for " +
                            std::to_string(x.rows()) + " rows");
    }
    for (Label l : *labels) {
      if (l >= num_classes) {
        throw ValidationError(std::string(what) + ": label " +
                              std::to_string(l) + " outside [0, " +
                              std::to_string(num_classes) + ")");
      }
    }
  };
  check_set(source.features, &source.labels, "source");
  check_set(target_train, &evaluation.target_train_labels, "target-train");
  check_set(evaluation.target_test.features, &evaluation.target_test.labels,
            "target-test");
}

void FactorizedTaskSpec::validate() const {
  if (num_classes < 2) throw InvalidArgument("factorized task: K must be >= 2");
  if (!(sigma >= 0.0)) throw InvalidArgument("factorized task: sigma must be >= 0");
  if (class_dim == 0 || nuisance_dim == 0) {
    throw InvalidArgument("factorized task: latent dims must be positive");
  }
  if (input_dim < class_dim + nuisance_dim) {
    throw InvalidArgument("factorized task: input_dim " +
                          std::to_string(input_dim) + " below latent dim " +
                          std::to_string(class_dim + nuisance_dim));
  }
  if (n_source == 0 || n_target == 0 || n_test == 0) {
    throw InvalidArgument("factorized task: sample counts must be positive");
  }
  if (num_classes > 65535) throw InvalidArgument("factorized task: too many classes");
  if (!(prototype_scale > 0.0) || !(nuisance_shift >= 0.0) ||
      !(class_mixing_shift >= 0.0) || !(nuisance_mixing_shift >= 0.0)) {
    throw InvalidArgument("factorized task: invalid shift/scale parameters");
  }
}

Tensor orthonormal_columns(const Tensor& m) {
  const std::size_t rows = m.rows();
  const std::size_t cols = m.cols();
  if (cols > rows) throw ShapeError("orthonormal_columns: matrix is wide");
  Tensor q = m;
  for (std::size_t j = 0; j < cols; ++j) {
    for (std::size_t i = 0; i < j; ++i) {
      double dot = 0.0;
      for (std::size_t r = 0; r < rows; ++r) dot += q(r, i) * q(r, j);
      for (std::size_t r = 0; r < rows; ++r) q(r, j) -= dot * q(r, i);
    }
    double norm = 0.0;
    for (std::size_t r = 0; r < rows; ++r) norm += q(r, j) * q(r, j);
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw DomainError("orthonormal_columns: rank deficient");
    for (std::size_t r = 0; r < rows; ++r) q(r, j) /= norm;
  }
  return q;
}

namespace {

std::vector<double> unit_vector(std::size_t dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& x : v) {
      x = normal(rng);
      norm += x * x;
    }
  } while (norm < 1e-12);
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

FactorizedTask build_factorized_task(const FactorizedTaskSpec& spec) {
  spec.validate();
  FactorizedTask task;
  task.spec = spec;
  Rng rng(derive_seed(spec.seed, 0));
  std::normal_distribution<double> normal(0.0, 1.0);

  // Prototypes on a sphere, kept at least scale/2 apart.
  const double min_gap = 0.5 * spec.prototype_scale;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (int attempt = 0;; ++attempt) {
      auto v = unit_vector(spec.class_dim, rng);
      for (double& x : v) x *= spec.prototype_scale;
      bool ok = std::all_of(task.prototypes.begin(), task.prototypes.end(),
                            [&](const auto& p) { return distance(p, v) >= min_gap; });
      if (ok || attempt > 1000) {
        if (!ok) throw InvalidArgument("factorized task: cannot place distinct prototypes");
        task.prototypes.push_back(std::move(v));
        break;
      }
    }
  }

  auto direction = unit_vector(spec.nuisance_dim, rng);
  task.nuisance_mean_source.resize(spec.nuisance_dim);
  task.nuisance_mean_target.resize(spec.nuisance_dim);
  for (std::size_t i = 0; i < spec.nuisance_dim; ++i) {
    task.nuisance_mean_source[i] = -0.5 * spec.nuisance_shift * direction[i];
    task.nuisance_mean_target[i] = 0.5 * spec.nuisance_shift * direction[i];
  }

  const std::size_t latent = spec.class_dim + spec.nuisance_dim;
  Tensor g_source(Shape{spec.input_dim, latent});
  Tensor g_delta(Shape{spec.input_dim, latent});
  for (double& x : g_source.data()) x = normal(rng);
  for (double& x : g_delta.data()) x = normal(rng);
  Tensor g_target = g_source;
  for (std::size_t r = 0; r < spec.input_dim; ++r) {
    for (std::size_t j = 0; j < latent; ++j) {
      const double shift =
          j < spec.class_dim ? spec.class_mixing_shift : spec.nuisance_mixing_shift;
      g_target(r, j) += shift * g_delta(r, j);
    }
  }
  task.mixing_source = orthonormal_columns(g_source);
  task.mixing_target = orthonormal_columns(g_target);
  return task;
}

LabeledSet sample_factorized(const FactorizedTask& task, bool target,
                             std::size_t n, Rng& rng) {
  const auto& spec = task.spec;
  const Tensor& mix = target ? task.mixing_target : task.mixing_source;
  const auto& mu = target ? task.nuisance_mean_target : task.nuisance_mean_source;
  const std::size_t latent = spec.class_dim + spec.nuisance_dim;
  std::uniform_int_distribution<std::size_t> pick(0, spec.num_classes - 1);
  std::normal_distribution<double> normal(0.0, 1.0);

  LabeledSet out{Tensor(Shape{n, spec.input_dim}), Labels(n)};
  std::vector<double> z(latent);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = pick(rng);
    out.labels[i] = static_cast<Label>(c);
    for (std::size_t j = 0; j < spec.class_dim; ++j) {
      z[j] = task.prototypes[c][j] + spec.sigma * normal(rng);
    }
    for (std::size_t j = 0; j < spec.nuisance_dim; ++j) {
      z[spec.class_dim + j] = mu[j] + spec.sigma * normal(rng);
    }
    auto row = out.features.row(i);
    for (std::size_t r = 0; r < spec.input_dim; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < latent; ++j) s += mix(r, j) * z[j];
      row[r] = s;
    }
  }
  return out;
}

DomainDataset gen_factorized(const FactorizedTaskSpec& spec) {
  const FactorizedTask task = build_factorized_task(spec);
  DomainDataset ds;
  ds.num_classes = spec.num_classes;
  ds.input_dim = spec.input_dim;
  Rng source_rng(derive_seed(spec.seed, 1));
  Rng target_rng(derive_seed(spec.seed, 2));
  Rng test_rng(derive_seed(spec.seed, 3));
  ds.source = sample_factorized(task, false, spec.n_source, source_rng);
  LabeledSet target = sample_factorized(task, true, spec.n_target, target_rng);
  ds.target_train = std::move(target.features);
  ds.evaluation.target_train_labels = std::move(target.labels);
  ds.evaluation.target_test = sample_factorized(task, true, spec.n_test, test_rng);
  return ds;
}

Label latent_oracle(const FactorizedTask& task, bool target,
                    std::span<const double> x) {
  const auto& spec = task.spec;
  const Tensor& mix = target ? task.mixing_target : task.mixing_source;
  std::vector<double> zc(spec.class_dim, 0.0);
  for (std::size_t j = 0; j < spec.class_dim; ++j) {
    for (std::size_t r = 0; r < spec.input_dim; ++r) zc[j] += mix(r, j) * x[r];
  }
  Label best = 0;
  double best_d = distance(zc, task.prototypes[0]);
  for (std::size_t c = 1; c < spec.num_classes; ++c) {
    const double d = distance(zc, task.prototypes[c]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<Label>(c);
    }
  }
  return best;
}

double latent_oracle_accuracy(const FactorizedTask& task, bool target,
                              std::size_t samples, std::uint64_t seed) {
  Rng rng(seed);
  const LabeledSet set = sample_factorized(task, target, samples, rng);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    hits += latent_oracle(task, target, set.features.row(i)) == set.labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(samples);
}

void MoonsShiftSpec::validate() const {
  if (!(angle_degrees >= 0.0 && angle_degrees <= 90.0)) {
    throw InvalidArgument("moons: angle must lie in [0, 90] degrees");
  }
  if (!(noise >= 0.0)) throw InvalidArgument("moons: noise must be >= 0");
  if (n_source == 0 || n_target == 0 || n_test == 0) {
    throw InvalidArgument("moons: sample counts must be positive");
  }
}

namespace {

// Class alternates with the row index so both classes stay balanced.
LabeledSet sample_moons(std::size_t n, double noise, double angle_rad,
                        Rng& rng) {
  std::uniform_real_distribution<double> arc(0.0, std::numbers::pi);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double c = std::cos(angle_rad);
  const double s = std::sin(angle_rad);
  LabeledSet out{Tensor(Shape{n, 2}), Labels(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const Label label = static_cast<Label>(i % 2);
    const double t = arc(rng);
    double x = label == 0 ? std::cos(t) : 1.0 - std::cos(t);
    double y = label == 0 ? std::sin(t) : 0.5 - std::sin(t);
    x += noise * normal(rng);
    y += noise * normal(rng);
    out.features(i, 0) = c * x - s * y;
    out.features(i, 1) = s * x + c * y;
    out.labels[i] = label;
  }
  return out;
}

}  // namespace

DomainDataset gen_moons_shift(const MoonsShiftSpec& spec) {
  spec.validate();
  const double angle = spec.angle_degrees * std::numbers::pi / 180.0;
  DomainDataset ds;
  ds.num_classes = 2;
  ds.input_dim = 2;
  // Source and target-train share one stream so angle 0 means no shift.
  Rng source_rng(derive_seed(spec.seed, 1));
  Rng target_rng(derive_seed(spec.seed, 1));
  Rng test_rng(derive_seed(spec.seed, 3));
  ds.source = sample_moons(spec.n_source, spec.noise, 0.0, source_rng);
  LabeledSet target = sample_moons(spec.n_target, spec.noise, angle, target_rng);
  ds.target_train = std::move(target.features);
  ds.evaluation.target_train_labels = std::move(target.labels);
  ds.evaluation.target_test = sample_moons(spec.n_test, spec.noise, angle, test_rng);
  return ds;
}

std::size_t batches_per_epoch(std::size_t n_source, std::size_t batch_size) {
  return (n_source + batch_size - 1) / batch_size;
}

BatchIterator::BatchIterator(TrainingView view, std::size_t batch_size,
                             std::uint64_t seed, std::size_t epoch)
    : view_(view), batch_size_(batch_size) {
  const std::size_t ns = view.source.size();
  const std::size_t nt = view.target.rows();
  if (batch_size == 0 || batch_size > std::min(ns, nt)) {
    throw InvalidArgument("batch size " + std::to_string(batch_size) +
                          " must lie in [1, min(n_source, n_target) = " +
                          std::to_string(std::min(ns, nt)) + "]");
  }
  num_batches_ = cife::batches_per_epoch(ns, batch_size);
  Rng rng(derive_seed(seed, epoch));
  source_order_.resize(ns);
  std::iota(source_order_.begin(), source_order_.end(), std::size_t{0});
  std::shuffle(source_order_.begin(), source_order_.end(), rng);
  // A target batch never straddles two passes, so it has no repeated rows.
  std::vector<std::size_t> pass(nt);
  std::size_t used = nt;
  for (std::size_t b = 0; b < num_batches_; ++b) {
    const std::size_t len = std::min(batch_size, ns - b * batch_size);
    if (used + len > nt) {
      std::iota(pass.begin(), pass.end(), std::size_t{0});
      std::shuffle(pass.begin(), pass.end(), rng);
      used = 0;
    }
    target_order_.insert(target_order_.end(), pass.begin() + used,
                         pass.begin() + used + len);
    used += len;
  }
}

bool BatchIterator::next(Batch& batch) {
  if (cursor_ >= num_batches_) return false;
  const std::size_t begin = cursor_ * batch_size_;
  const std::size_t end = std::min(begin + batch_size_, source_order_.size());
  ++cursor_;
  batch.source_indices.assign(source_order_.begin() + begin,
                              source_order_.begin() + end);
  batch.target_indices.assign(target_order_.begin() + begin,
                              target_order_.begin() + end);
  batch.source = gather_rows(view_.source.features, batch.source_indices);
  batch.target = gather_rows(view_.target, batch.target_indices);
  batch.labels.resize(batch.source_indices.size());
  for (std::size_t i = 0; i < batch.labels.size(); ++i) {
    batch.labels[i] = view_.source.labels[batch.source_indices[i]];
  }
  return true;
}

// ---------------------------------------------------------------------------
// Binary container

namespace {

constexpr char kMagic[8] = {'C', 'I', 'F', 'E', 'D', 'S', 'E', 'T'};
constexpr char kEvalMarker[4] = {'E', 'V', 'A', 'L'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void bytes(const char* p, std::size_t n) { out_.insert(out_.end(), p, p + n); }
  template <typename T>
  void uint(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      out_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
    }
  }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void tensor(const Tensor& t) {
    for (double v : t.data()) f64(v);
  }
  void labels(const Labels& l) {
    for (Label v : l) uint<std::uint16_t>(v);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == in_.size(); }

  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) {
      throw ParseError(std::string("truncated input while reading ") + what,
                       pos_);
    }
  }
  void expect(const char* tag, std::size_t n, const char* what) {
    need(n, what);
    if (std::memcmp(in_.data() + pos_, tag, n) != 0) {
      throw ParseError(std::string("bad ") + what, pos_);
    }
    pos_ += n;
  }
  template <typename T>
  T uint(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(in_[pos_ + i]) << (8 * i);
    }
    pos_ += sizeof(T);
    return v;
  }
  Tensor tensor(std::size_t rows, std::size_t cols, const char* what) {
    if (cols != 0 && rows > (in_.size() - pos_) / 8 / cols) {
      throw ParseError(std::string("truncated input while reading ") + what,
                       pos_);
    }
    Tensor t(Shape{rows, cols});
    for (double& v : t.data()) v = std::bit_cast<double>(uint<std::uint64_t>(what));
    return t;
  }
  Labels labels(std::size_t n, const char* what) {
    need(2 * n, what);
    Labels l(n);
    for (Label& v : l) v = uint<std::uint16_t>(what);
    return l;
  }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_dataset(const DomainDataset& ds) {
  ds.validate();
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.uint<std::uint32_t>(kVersion);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(ds.num_classes));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(ds.input_dim));
  w.uint<std::uint64_t>(ds.source.size());
  w.uint<std::uint64_t>(ds.target_train.rows());
  w.uint<std::uint64_t>(ds.evaluation.target_test.size());
  w.tensor(ds.source.features);
  w.labels(ds.source.labels);
  w.tensor(ds.target_train);
  w.bytes(kEvalMarker, sizeof kEvalMarker);
  w.labels(ds.evaluation.target_train_labels);
  w.tensor(ds.evaluation.target_test.features);
  w.labels(ds.evaluation.target_test.labels);
  return w.take();
}

DomainDataset parse_dataset(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.expect(kMagic, sizeof kMagic, "magic bytes");
  const std::size_t version_at = r.offset();
  if (r.uint<std::uint32_t>("version") != kVersion) {
    throw ParseError("unsupported dataset version", version_at);
  }
  DomainDataset ds;
  ds.num_classes = r.uint<std::uint32_t>("class count");
  ds.input_dim = r.uint<std::uint32_t>("input dim");
  const std::size_t counts_at = r.offset();
  const std::uint64_t ns = r.uint<std::uint64_t>("source count");
  const std::uint64_t nt = r.uint<std::uint64_t>("target count");
  const std::uint64_t ntest = r.uint<std::uint64_t>("test count");
  if (ds.input_dim == 0 || ns == 0 || nt == 0 || ntest == 0) {
    throw ParseError("zero dimension or sample count in header", counts_at);
  }
  ds.source.features = r.tensor(ns, ds.input_dim, "source features");
  ds.source.labels = r.labels(ns, "source labels");
  ds.target_train = r.tensor(nt, ds.input_dim, "target features");
  r.expect(kEvalMarker, sizeof kEvalMarker, "evaluation section marker");
  ds.evaluation.target_train_labels = r.labels(nt, "target labels");
  ds.evaluation.target_test.features = r.tensor(ntest, ds.input_dim, "test features");
  ds.evaluation.target_test.labels = r.labels(ntest, "test labels");
  if (!r.at_end()) throw ParseError("trailing bytes after dataset", r.offset());
  ds.validate();
  return ds;
}

void save_dataset(const std::string& path, const DomainDataset& ds) {
  const auto bytes = serialize_dataset(ds);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path);
}

DomainDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open dataset " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return parse_dataset(bytes);
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t dataset_checksum(const DomainDataset& ds) {
  return fnv1a64(serialize_dataset(ds));
}

}  // namespace cife
