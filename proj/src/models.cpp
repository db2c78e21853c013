#include "cife/models.hpp"

#include <bit>
#include <cmath>

#include "cife/errors.hpp"
#include "cife/random.hpp"

namespace cife {

const char* to_string(Variant v) {
  switch (v) {
    case Variant::source_only: return "source-only";
    case Variant::dann: return "dann";
    case Variant::cife_dann: return "cife-dann";
    case Variant::cife_cdan: return "cife-cdan";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  if (s == "source-only") return Variant::source_only;
  if (s == "dann") return Variant::dann;
  if (s == "cife-dann") return Variant::cife_dann;
  if (s == "cife-cdan") return Variant::cife_cdan;
  throw InvalidArgument("unknown variant '" + s +
                        "' (expected source-only, dann, cife-dann, cife-cdan)");
}

void Architecture::validate() const {
  for (std::size_t w : extractor_hidden) {
    if (w == 0) throw InvalidArgument("architecture: zero hidden width");
  }
  if (invariant_dim == 0 || specific_dim == 0 || discriminator_hidden == 0 ||
      classifier_hidden == 0) {
    throw InvalidArgument("architecture: widths must be positive");
  }
  if (feature_head == Head::logits) {
    throw InvalidArgument("architecture: feature head must be identity or sigmoid");
  }
}

namespace {

std::vector<std::size_t> chain(std::size_t in,
                               const std::vector<std::size_t>& hidden,
                               std::size_t out) {
  std::vector<std::size_t> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

void expect_width(const Mlp& mlp, std::size_t in, std::size_t out) {
  if (mlp.in_width() != in || mlp.out_width() != out) {
    throw ShapeError(mlp.name() + " maps " + std::to_string(mlp.in_width()) +
                     " -> " + std::to_string(mlp.out_width()) + ", expected " +
                     std::to_string(in) + " -> " + std::to_string(out));
  }
}

void expect_head(const Mlp& mlp, Head head) {
  if (mlp.head() != head) {
    throw ShapeError(mlp.name() + " has head " + to_string(mlp.head()) +
                     ", expected " + to_string(head));
  }
}

void append(std::vector<Parameter*>& out, Mlp& mlp) {
  auto p = mlp.parameters();
  out.insert(out.end(), p.begin(), p.end());
}

void check_batch(const Tensor& x, const char* what) {
  if (x.rank() != 2) {
    throw InvalidArgument(std::string("empty or malformed ") + what + " batch");
  }
}

Var route(Var features, Routing routing, double coefficient) {
  switch (routing) {
    case Routing::reversal: return grad_reverse(features, coefficient);
    case Routing::plain: return features;
    case Routing::detached: return detach(features);
  }
  return features;
}

// BCE with source rows labeled 0 and target rows labeled 1, averaged over
// the pooled batch.
Var domain_bce(Tape& tape, Mlp& disc, Var in_s, Var in_t) {
  const std::size_t ns = in_s.value().rows();
  const std::size_t nt = in_t.value().rows();
  const std::vector<double> zeros(ns, 0.0);
  const std::vector<double> ones(nt, 1.0);
  Var l_s = binary_cross_entropy(disc.forward(tape, in_s), zeros);
  Var l_t = binary_cross_entropy(disc.forward(tape, in_t), ones);
  const double total = static_cast<double>(ns + nt);
  return add(scale(l_s, static_cast<double>(ns) / total),
             scale(l_t, static_cast<double>(nt) / total));
}

Tensor concat_values(const Tensor& a, const Tensor& b) {
  Tape tape(false);
  return concat(tape.constant(a), tape.constant(b)).value();
}

// Class probabilities for target rows, each paired with source row
// i mod n_s for its F_d half (the prediction-time construction).
Tensor paired_target_predictions(const CifeModel& model, const Tensor& fd_s,
                                 const Tensor& fs_t) {
  std::vector<std::size_t> rows(fs_t.rows());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i % fd_s.rows();
  return softmax_rows(
      model.classifier.infer(concat_values(gather_rows(fd_s, rows), fs_t)));
}

Var cife_classification(Tape& tape, CifeModel& model, Var fd, Var fs,
                        std::span<const Label> ys) {
  return softmax_cross_entropy(model.classifier.forward(tape, concat(fd, fs)), ys);
}

Var cife_domain(Tape& tape, CifeModel& model, Var fs_s, Var fs_t,
                const Tensor& fd_s, double coefficient, Routing routing) {
  Var in_s = route(fs_s, routing, coefficient);
  Var in_t = route(fs_t, routing, coefficient);
  if (model.conditioned()) {
    const Tensor p_s = softmax_rows(
        model.classifier.infer(concat_values(fd_s, fs_s.value())));
    const Tensor p_t = paired_target_predictions(model, fd_s, fs_t.value());
    in_s = cdan_condition(in_s, tape.constant(p_s));
    in_t = cdan_condition(in_t, tape.constant(p_t));
  }
  return domain_bce(tape, model.domain_disc, in_s, in_t);
}

Var cife_category(Tape& tape, CifeModel& model, Var fd_s,
                  std::span<const Label> ys, double coefficient,
                  Routing routing) {
  return softmax_cross_entropy(
      model.category_disc.forward(tape, route(fd_s, routing, coefficient)), ys);
}

LossBundle bundle(double l_c, double l_d, double l_dc, double lambda_d,
                  double lambda_c) {
  return LossBundle{l_c, l_d, l_dc, l_c + lambda_d * l_d + lambda_c * l_dc,
                    lambda_d, lambda_c};
}

}  // namespace

CifeModel::CifeModel(std::size_t input_dim, std::size_t num_classes,
                     const Architecture& arch, bool conditioned,
                     std::uint64_t seed)
    : fs("F_s", chain(input_dim, arch.extractor_hidden, arch.invariant_dim),
         arch.feature_head),
      fd("F_d", chain(input_dim, arch.extractor_hidden, arch.specific_dim),
         arch.feature_head),
      classifier("C",
                 {arch.specific_dim + arch.invariant_dim,
                  arch.classifier_hidden, num_classes},
                 Head::logits),
      domain_disc("D_d",
                  {conditioned ? arch.invariant_dim * num_classes
                               : arch.invariant_dim,
                   arch.discriminator_hidden, 1},
                  Head::sigmoid),
      category_disc("D_t",
                    {arch.specific_dim, arch.discriminator_hidden, num_classes},
                    Head::logits),
      conditioned_(conditioned) {
  arch.validate();
  if (num_classes < 2) throw InvalidArgument("CifeModel needs >= 2 classes");
  fs.init_parameters(derive_seed(seed, 0));
  fd.init_parameters(derive_seed(seed, 1));
  classifier.init_parameters(derive_seed(seed, 2));
  domain_disc.init_parameters(derive_seed(seed, 3));
  category_disc.init_parameters(derive_seed(seed, 4));
}

CifeModel::CifeModel(Mlp fs_, Mlp fd_, Mlp classifier_, Mlp domain_disc_,
                     Mlp category_disc_, bool conditioned)
    : fs(std::move(fs_)),
      fd(std::move(fd_)),
      classifier(std::move(classifier_)),
      domain_disc(std::move(domain_disc_)),
      category_disc(std::move(category_disc_)),
      conditioned_(conditioned) {
  check_widths();
}

void CifeModel::check_widths() const {
  const std::size_t k = classifier.out_width();
  if (fd.in_width() != fs.in_width()) {
    throw ShapeError("F_d input width " + std::to_string(fd.in_width()) +
                     " differs from F_s input width " +
                     std::to_string(fs.in_width()));
  }
  expect_width(classifier, fd.out_width() + fs.out_width(), k);
  expect_width(domain_disc,
               conditioned_ ? fs.out_width() * k : fs.out_width(), 1);
  expect_width(category_disc, fd.out_width(), k);
  expect_head(classifier, Head::logits);
  expect_head(domain_disc, Head::sigmoid);
  expect_head(category_disc, Head::logits);
}

std::vector<Parameter*> CifeModel::extractor_parameters() {
  std::vector<Parameter*> out;
  append(out, fs);
  append(out, fd);
  append(out, classifier);
  return out;
}

std::vector<Parameter*> CifeModel::discriminator_parameters() {
  std::vector<Parameter*> out;
  append(out, domain_disc);
  append(out, category_disc);
  return out;
}

std::vector<Parameter*> CifeModel::parameters() {
  auto out = extractor_parameters();
  auto d = discriminator_parameters();
  out.insert(out.end(), d.begin(), d.end());
  return out;
}

DannModel::DannModel(std::size_t input_dim, std::size_t num_classes,
                     const Architecture& arch, std::uint64_t seed)
    : features("F", chain(input_dim, arch.extractor_hidden, arch.invariant_dim),
               arch.feature_head),
      classifier("C", {arch.invariant_dim, arch.classifier_hidden, num_classes},
                 Head::logits),
      domain_disc("D", {arch.invariant_dim, arch.discriminator_hidden, 1},
                  Head::sigmoid) {
  arch.validate();
  if (num_classes < 2) throw InvalidArgument("DannModel needs >= 2 classes");
  features.init_parameters(derive_seed(seed, 0));
  classifier.init_parameters(derive_seed(seed, 2));
  domain_disc.init_parameters(derive_seed(seed, 3));
}

DannModel::DannModel(Mlp features_, Mlp classifier_, Mlp domain_disc_)
    : features(std::move(features_)),
      classifier(std::move(classifier_)),
      domain_disc(std::move(domain_disc_)) {
  check_widths();
}

void DannModel::check_widths() const {
  expect_width(classifier, features.out_width(), classifier.out_width());
  expect_width(domain_disc, features.out_width(), 1);
  expect_head(classifier, Head::logits);
  expect_head(domain_disc, Head::sigmoid);
}

std::vector<Parameter*> DannModel::extractor_parameters() {
  std::vector<Parameter*> out;
  append(out, features);
  append(out, classifier);
  return out;
}

std::vector<Parameter*> DannModel::discriminator_parameters() {
  std::vector<Parameter*> out;
  append(out, domain_disc);
  return out;
}

std::vector<Parameter*> DannModel::parameters() {
  auto out = extractor_parameters();
  append(out, domain_disc);
  return out;
}

AnyModel make_model(Variant variant, std::size_t input_dim,
                    std::size_t num_classes, const Architecture& arch,
                    std::uint64_t seed) {
  switch (variant) {
    case Variant::source_only:
    case Variant::dann:
      return DannModel(input_dim, num_classes, arch, seed);
    case Variant::cife_dann:
      return CifeModel(input_dim, num_classes, arch, false, seed);
    case Variant::cife_cdan:
      return CifeModel(input_dim, num_classes, arch, true, seed);
  }
  throw InvalidArgument("unknown variant");
}

bool model_matches(const AnyModel& model, Variant variant) {
  if (const auto* cife = std::get_if<CifeModel>(&model)) {
    return is_cife(variant) &&
           cife->conditioned() == (variant == Variant::cife_cdan);
  }
  return !is_cife(variant);
}

std::vector<Parameter*> parameters(AnyModel& model) {
  return std::visit([](auto& m) { return m.parameters(); }, model);
}

std::vector<const Parameter*> parameters(const AnyModel& model) {
  auto mutable_params = parameters(const_cast<AnyModel&>(model));
  return {mutable_params.begin(), mutable_params.end()};
}

namespace {

std::uint64_t hash_params(std::uint64_t h,
                          const std::vector<const Parameter*>& params) {
  for (const Parameter* p : params) {
    for (double v : p->value.data()) {
      const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xFF;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

constexpr std::uint64_t kFnvBasis = 0xcbf29ce484222325ULL;

}  // namespace

std::uint64_t parameter_checksum(const Mlp& mlp) {
  return hash_params(kFnvBasis, mlp.parameters());
}

std::uint64_t parameter_checksum(const AnyModel& model) {
  return hash_params(kFnvBasis, parameters(model));
}

// --- CIFE losses -----------------------------------------------------------

Var loss_classification(Tape& tape, CifeModel& model, const Tensor& xs,
                        std::span<const Label> ys) {
  check_batch(xs, "source");
  Var x = tape.constant(xs);
  return cife_classification(tape, model, model.fd.forward(tape, x),
                             model.fs.forward(tape, x), ys);
}

Var loss_domain(Tape& tape, CifeModel& model, const Tensor& xs,
                const Tensor& xt, double reversal, Routing routing) {
  check_batch(xs, "source");
  check_batch(xt, "target");
  Var x_s = tape.constant(xs);
  Var fs_s = model.fs.forward(tape, x_s);
  Var fs_t = model.fs.forward(tape, tape.constant(xt));
  Tensor fd_s;
  if (model.conditioned()) fd_s = model.fd.infer(xs);
  return cife_domain(tape, model, fs_s, fs_t, fd_s, reversal, routing);
}

Var loss_category(Tape& tape, CifeModel& model, const Tensor& xs,
                  std::span<const Label> ys, double reversal,
                  Routing routing) {
  check_batch(xs, "source");
  return cife_category(tape, model, model.fd.forward(tape, tape.constant(xs)),
                       ys, reversal, routing);
}

Objective total_objective(Tape& tape, CifeModel& model, const Batch& batch,
                          double lambda_d, double lambda_c, Routing routing) {
  check_batch(batch.source, "source");
  check_batch(batch.target, "target");
  Var x_s = tape.constant(batch.source);
  Var fs_s = model.fs.forward(tape, x_s);
  Var fd_s = model.fd.forward(tape, x_s);
  Var fs_t = model.fs.forward(tape, tape.constant(batch.target));

  Objective obj;
  obj.l_c = cife_classification(tape, model, fd_s, fs_s, batch.labels);
  obj.l_d = cife_domain(tape, model, fs_s, fs_t, fd_s.value(), 1.0, routing);
  obj.l_dc = cife_category(tape, model, fd_s, batch.labels, 1.0, routing);
  obj.total = add(add(obj.l_c, scale(obj.l_d, lambda_d)),
                  scale(obj.l_dc, lambda_c));
  obj.values = bundle(obj.l_c.item(), obj.l_d.item(), obj.l_dc.item(),
                      lambda_d, lambda_c);
  return obj;
}

// --- DANN losses -----------------------------------------------------------

Var loss_classification(Tape& tape, DannModel& model, const Tensor& xs,
                        std::span<const Label> ys) {
  check_batch(xs, "source");
  Var f = model.features.forward(tape, tape.constant(xs));
  return softmax_cross_entropy(model.classifier.forward(tape, f), ys);
}

Var loss_domain(Tape& tape, DannModel& model, const Tensor& xs,
                const Tensor& xt, double reversal, Routing routing) {
  check_batch(xs, "source");
  check_batch(xt, "target");
  Var f_s = model.features.forward(tape, tape.constant(xs));
  Var f_t = model.features.forward(tape, tape.constant(xt));
  return domain_bce(tape, model.domain_disc, route(f_s, routing, reversal),
                    route(f_t, routing, reversal));
}

Objective total_objective(Tape& tape, DannModel& model, const Batch& batch,
                          double lambda_d, Routing routing) {
  check_batch(batch.source, "source");
  check_batch(batch.target, "target");
  Var f_s = model.features.forward(tape, tape.constant(batch.source));
  Var f_t = model.features.forward(tape, tape.constant(batch.target));
  Objective obj;
  obj.l_c = softmax_cross_entropy(model.classifier.forward(tape, f_s),
                                  batch.labels);
  obj.l_d = domain_bce(tape, model.domain_disc, route(f_s, routing, 1.0),
                       route(f_t, routing, 1.0));
  obj.total = add(obj.l_c, scale(obj.l_d, lambda_d));
  obj.values = bundle(obj.l_c.item(), obj.l_d.item(), 0.0, lambda_d, 0.0);
  return obj;
}

Objective source_only_objective(Tape& tape, DannModel& model,
                                const Batch& batch) {
  Objective obj;
  obj.l_c = loss_classification(tape, model, batch.source, batch.labels);
  obj.total = obj.l_c;
  obj.values = bundle(obj.l_c.item(), 0.0, 0.0, 0.0, 0.0);
  return obj;
}

// --- Conditioning and prediction ------------------------------------------

namespace {

void check_probability_rows(const Tensor& p) {
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double s = 0.0;
    for (double v : p.row(r)) s += v;
    if (std::abs(s - 1.0) > 1e-6) {
      throw DomainError("cdan_condition: prediction row " + std::to_string(r) +
                        " sums to " + std::to_string(s));
    }
  }
}

}  // namespace

Tensor cdan_condition(const Tensor& features, const Tensor& predictions) {
  Tape tape(false);
  return cdan_condition(tape.constant(features), tape.constant(predictions))
      .value();
}

Var cdan_condition(Var features, Var predictions) {
  if (predictions.value().rank() == 2) check_probability_rows(predictions.value());
  return outer_rows(features, predictions);
}

Tensor softmax_rows(const Tensor& logits) {
  Tape tape(false);
  return softmax(tape.constant(logits)).value();
}

Labels argmax_rows(const Tensor& scores) {
  Labels out(scores.rows());
  for (std::size_t r = 0; r < scores.rows(); ++r) {
    auto row = scores.row(r);
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j) {
      if (row[j] > row[best]) best = j;
    }
    out[r] = static_cast<Label>(best);
  }
  return out;
}

Tensor forward_predict_concat(const CifeModel& model, const Tensor& fd_source,
                              const Tensor& xt) {
  if (fd_source.rank() != 2 || fd_source.cols() != model.fd.out_width()) {
    throw ShapeError("forward_predict_concat: F_d features of shape " +
                     shape_string(fd_source.shape()) + ", classifier expects " +
                     std::to_string(model.fd.out_width()) + " columns");
  }
  if (xt.rank() != 2 || xt.rows() != fd_source.rows()) {
    throw ShapeError("forward_predict_concat: " +
                     std::to_string(fd_source.rows()) +
                     " source rows paired with target batch of shape " +
                     shape_string(xt.shape()));
  }
  return softmax_rows(
      model.classifier.infer(concat_values(fd_source, model.fs.infer(xt))));
}

}  // namespace cife
