#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "cife/autodiff.hpp"
#include "cife/data.hpp"
#include "cife/nn.hpp"

namespace cife {

enum class Variant { source_only, dann, cife_dann, cife_cdan };

const char* to_string(Variant v);
Variant parse_variant(const std::string& s);
inline bool is_cife(Variant v) {
  return v == Variant::cife_dann || v == Variant::cife_cdan;
}

struct Architecture {
  std::vector<std::size_t> extractor_hidden{64, 64};
  std::size_t invariant_dim = 32;  // width of F_s output
  std::size_t specific_dim = 32;   // width of F_d output
  std::size_t discriminator_hidden = 32;
  std::size_t classifier_hidden = 32;
  // Output head of F_s, F_d and DANN's F: identity or sigmoid.
  Head feature_head = Head::sigmoid;

  void validate() const;
};

/// The five CIFE components. Features entering the classifier are ordered
/// [F_d(x), F_s(x)]. With `conditioned` set, the domain discriminator reads
/// the flattened outer product of F_s features and class predictions
/// (CDAN-style) instead of raw F_s features.
class CifeModel {
 public:
  CifeModel(std::size_t input_dim, std::size_t num_classes,
            const Architecture& arch, bool conditioned, std::uint64_t seed);
  // Assembles pre-built components; throws ShapeError if widths do not chain.
  CifeModel(Mlp fs, Mlp fd, Mlp classifier, Mlp domain_disc,
            Mlp category_disc, bool conditioned);

  std::size_t input_dim() const { return fs.in_width(); }
  std::size_t num_classes() const { return classifier.out_width(); }
  bool conditioned() const { return conditioned_; }

  // F_s, F_d and C: the minimizing players.
  std::vector<Parameter*> extractor_parameters();
  // D_d and D_t: the maximizing players.
  std::vector<Parameter*> discriminator_parameters();
  std::vector<Parameter*> parameters();

  Mlp fs;
  Mlp fd;
  Mlp classifier;
  Mlp domain_disc;
  Mlp category_disc;

 private:
  void check_widths() const;
  bool conditioned_ = false;
};

/// DANN baseline: F, C, D. Also used for the source-only variant, which never
/// touches D.
class DannModel {
 public:
  DannModel(std::size_t input_dim, std::size_t num_classes,
            const Architecture& arch, std::uint64_t seed);
  DannModel(Mlp features, Mlp classifier, Mlp domain_disc);

  std::size_t input_dim() const { return features.in_width(); }
  std::size_t num_classes() const { return classifier.out_width(); }

  std::vector<Parameter*> extractor_parameters();
  std::vector<Parameter*> discriminator_parameters();
  std::vector<Parameter*> parameters();

  Mlp features;
  Mlp classifier;
  Mlp domain_disc;

 private:
  void check_widths() const;
};

using AnyModel = std::variant<DannModel, CifeModel>;

AnyModel make_model(Variant variant, std::size_t input_dim,
                    std::size_t num_classes, const Architecture& arch,
                    std::uint64_t seed);
bool model_matches(const AnyModel& model, Variant variant);

std::vector<Parameter*> parameters(AnyModel& model);
std::vector<const Parameter*> parameters(const AnyModel& model);
// FNV-1a over the bit patterns of every parameter value, in order.
std::uint64_t parameter_checksum(const Mlp& mlp);
std::uint64_t parameter_checksum(const AnyModel& model);

// How discriminator inputs connect back to the feature extractors.
//   reversal: through grad_reverse(coefficient)
//   plain:    directly (no reversal; used for oracles and the two-phase
//             extractor update)
//   detached: not at all (discriminator-only update)
enum class Routing { reversal, plain, detached };

struct LossBundle {
  double l_c = 0.0;
  double l_d = 0.0;
  double l_dc = 0.0;
  double total = 0.0;
  double lambda_d = 0.0;
  double lambda_c = 0.0;
};

/// Loss terms recorded on a tape. `l_d` / `l_dc` are unbound Vars when the
/// model has no such term (source-only, DANN).
struct Objective {
  LossBundle values;
  Var total;
  Var l_c;
  Var l_d;
  Var l_dc;

  bool has_domain() const { return l_d.tape() != nullptr; }
  bool has_category() const { return l_dc.tape() != nullptr; }
};

// Cross-entropy of C([F_d(xs), F_s(xs)]) against source labels.
Var loss_classification(Tape& tape, CifeModel& model, const Tensor& xs,
                        std::span<const Label> ys);
// BCE of D_d on F_s features, source labeled 0 and target 1. Under
// Routing::reversal the features pass grad_reverse(reversal) first.
Var loss_domain(Tape& tape, CifeModel& model, const Tensor& xs,
                const Tensor& xt, double reversal,
                Routing routing = Routing::reversal);
// Cross-entropy of D_t on F_d(xs) against the true source labels.
Var loss_category(Tape& tape, CifeModel& model, const Tensor& xs,
                  std::span<const Label> ys, double reversal,
                  Routing routing = Routing::reversal);

/// Dual adversarial objective l_c + lambda_d l_d + lambda_c l_dc.
///
/// Min over (F_s, F_d, C), max over (D_d, D_t): the
/// discriminators descend their own cross-entropies (they classify domains
/// and categories) while the extractors ascend them. With Routing::reversal
/// the adversarial terms pass through grad_reverse(1), so a single backward
/// pass on `total` yields descent directions for the discriminators and
/// ascent directions for the extractors, both scaled by their lambda.
Objective total_objective(Tape& tape, CifeModel& model, const Batch& batch,
                          double lambda_d, double lambda_c,
                          Routing routing = Routing::reversal);

Var loss_classification(Tape& tape, DannModel& model, const Tensor& xs,
                        std::span<const Label> ys);
Var loss_domain(Tape& tape, DannModel& model, const Tensor& xs,
                const Tensor& xt, double reversal,
                Routing routing = Routing::reversal);
// l_c + lambda_d l_d.
Objective total_objective(Tape& tape, DannModel& model, const Batch& batch,
                          double lambda_d, Routing routing = Routing::reversal);
// l_c only.
Objective source_only_objective(Tape& tape, DannModel& model,
                                const Batch& batch);

// Row i = features_i (x) predictions_i, flattened feature-major. Rows of
// `predictions` must sum to 1 within 1e-6.
Tensor cdan_condition(const Tensor& features, const Tensor& predictions);
Var cdan_condition(Var features, Var predictions);

Tensor softmax_rows(const Tensor& logits);
// Ties resolve to the lowest class index.
Labels argmax_rows(const Tensor& scores);

// softmax(C([fd_source, F_s(xt)])), row-paired.
Tensor forward_predict_concat(const CifeModel& model, const Tensor& fd_source,
                              const Tensor& xt);

// Checkpoint: JSON document holding the variant, every component's widths,
// head and parameter arrays, plus the run configuration that produced it.
// Doubles are written with round-trip precision, so values reload
// bit-exactly.
struct Checkpoint {
  Variant variant = Variant::cife_dann;
  AnyModel model;
  std::map<std::string, std::string> config;
  std::string config_hash;
  std::uint64_t seed = 0;
};

std::string checkpoint_to_string(const Checkpoint& ckpt);
Checkpoint checkpoint_from_string(const std::string& text);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace cife
