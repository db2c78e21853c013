#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cife/cli.hpp"
#include "cife/errors.hpp"

namespace cife::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOptions& o, const std::string& out_help) {
  cmd->add_option("--config", o.config_path, "key=value experiment config file");
  cmd->add_option("--set", o.overrides, "override one config key (key=value)");
  cmd->add_option("--out", o.out, out_help);
}

ExperimentConfig load_config(const CommonOptions& o) {
  ExperimentConfig cfg = o.config_path.empty()
                             ? ExperimentConfig()
                             : ExperimentConfig::from_file(o.config_path);
  for (const auto& s : o.overrides) cfg.apply_override(s);
  return cfg;
}

void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

void write_text(const fs::path& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw Error("write failed for '" + path.string() + "'");
}

std::string num(double v) { return json(v).dump(); }

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string provenance_line(const std::string& hash, std::uint64_t seed) {
  return "# config_hash=" + hash + " seed=" + std::to_string(seed) + "\n";
}

fs::path output_dir(const CommonOptions& o, const ExperimentConfig& cfg) {
  return o.out.empty() ? fs::path(cfg.get("output.dir")) : fs::path(o.out);
}

void check_compatible(const AnyModel& model, const DomainDataset& ds) {
  const auto [dim, classes] = std::visit(
      [](const auto& m) { return std::pair(m.input_dim(), m.num_classes()); }, model);
  if (dim != ds.input_dim) {
    throw ValidationError("checkpoint expects input dimension " + std::to_string(dim) +
                          " but dataset has input dimension " +
                          std::to_string(ds.input_dim));
  }
  if (classes != ds.num_classes) {
    throw ValidationError("checkpoint expects " + std::to_string(classes) +
                          " classes but dataset has " +
                          std::to_string(ds.num_classes));
  }
}

// ---- generate ----

int cmd_generate(const CommonOptions& o, std::ostream& out) {
  ExperimentConfig cfg = load_config(o);
  const DomainDataset ds = load_or_generate(cfg);
  const fs::path path(o.out);
  ensure_parent(path);
  save_dataset(path.string(), ds);
  cfg.set("dataset.path", path.string());
  std::string manifest = "# dataset manifest\n" +
                         provenance_line(cfg.hash(), cfg.get_uint("dataset.seed")) +
                         "# dataset_checksum=" + hex64(dataset_checksum(ds)) + "\n" +
                         cfg.canonical_text();
  write_text(path.string() + ".manifest", manifest);
  out << "wrote " << path.string() << " (" << ds.source.size() << " source, "
      << ds.target_train.rows() << " target, " << ds.evaluation.target_test.size()
      << " test rows)\n";
  return 0;
}

// ---- train ----

json epoch_record(const EpochMetrics& m) {
  return {{"record", "epoch"},         {"epoch", m.epoch},
          {"l_c", m.l_c},              {"l_d", m.l_d},
          {"l_dc", m.l_dc},            {"learning_rate", m.learning_rate},
          {"lambda_d", m.lambda_d},    {"source_accuracy", m.source_accuracy},
          {"target_accuracy", m.target_accuracy}};
}

int cmd_train(const CommonOptions& o, const std::string& dataset_path,
              std::ostream& out) {
  ExperimentConfig cfg = load_config(o);
  if (!dataset_path.empty()) cfg.set("dataset.path", dataset_path);
  const TrainConfig tc = train_config(cfg);
  const DomainDataset ds = load_or_generate(cfg);
  const std::string hash = cfg.hash();
  const fs::path dir = output_dir(o, cfg);
  fs::create_directories(dir);

  std::ofstream metrics(dir / "metrics.jsonl", std::ios::binary | std::ios::trunc);
  if (!metrics) throw Error("cannot write metrics file in '" + dir.string() + "'");
  metrics << json{{"record", "header"}, {"config_hash", hash}, {"seed", tc.seed},
                  {"variant", to_string(tc.variant)}}
                 .dump()
          << "\n";

  AnyModel model = make_model(tc.variant, ds.input_dim, ds.num_classes,
                              tc.architecture, tc.seed);
  train(model, ds, tc, [&](const EpochMetrics& m) {
    metrics << epoch_record(m).dump() << "\n" << std::flush;
  });

  const double src = evaluate_accuracy(predict_source(model, ds.source.features),
                                       ds.source.labels);
  const double tgt = evaluate_accuracy(
      predict_labels(model, ds.source.features, ds.evaluation.target_test.features,
                     tc.prediction_draws, prediction_seed(tc.seed)),
      ds.evaluation.target_test.labels);
  metrics << json{{"record", "final"}, {"source_accuracy", src},
                  {"target_accuracy", tgt}}
                 .dump()
          << "\n";

  save_checkpoint((dir / "checkpoint.json").string(),
                  Checkpoint{tc.variant, std::move(model), cfg.values(), hash, tc.seed});
  out << "source_accuracy=" << num(src) << " target_accuracy=" << num(tgt) << "\n";
  return 0;
}

// ---- predict / probe share checkpoint loading ----

struct Loaded {
  Checkpoint ckpt;
  ExperimentConfig cfg;
  DomainDataset ds;
};

Loaded load_checkpoint_and_data(const std::string& ckpt_path,
                                const std::string& dataset_path,
                                const std::vector<std::string>& overrides) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  ExperimentConfig cfg = ExperimentConfig::from_map(ckpt.config);
  for (const auto& s : overrides) cfg.apply_override(s);
  if (!dataset_path.empty()) cfg.set("dataset.path", dataset_path);
  DomainDataset ds = load_or_generate(cfg);
  check_compatible(ckpt.model, ds);
  return {std::move(ckpt), std::move(cfg), std::move(ds)};
}

int cmd_predict(const std::string& ckpt_path, const std::string& dataset_path,
                const CommonOptions& o, std::ostream& out) {
  const Loaded l = load_checkpoint_and_data(ckpt_path, dataset_path, o.overrides);
  const TrainConfig tc = train_config(l.cfg);
  const auto& test = l.ds.evaluation.target_test;
  const Labels pred = predict_labels(l.ckpt.model, l.ds.source.features, test.features,
                                     tc.prediction_draws, prediction_seed(l.ckpt.seed));
  std::string csv = provenance_line(l.cfg.hash(), l.ckpt.seed) + "index,prediction,label\n";
  for (std::size_t i = 0; i < pred.size(); ++i) {
    csv += std::to_string(i) + "," + std::to_string(pred[i]) + "," +
           std::to_string(test.labels[i]) + "\n";
  }
  const fs::path path = o.out.empty() ? output_dir(o, l.cfg) / "predictions.csv"
                                      : fs::path(o.out);
  write_text(path, csv);
  out << "target_accuracy=" << num(evaluate_accuracy(pred, test.labels)) << "\n";
  return 0;
}

Tensor stack_rows(const Tensor& a, const Tensor& b) {
  std::vector<double> data(a.data().begin(), a.data().end());
  data.insert(data.end(), b.data().begin(), b.data().end());
  return Tensor(Shape{a.rows() + b.rows(), a.cols()}, std::move(data));
}

int cmd_probe(const std::string& ckpt_path, const std::string& dataset_path,
              const std::string& kinds_arg, const CommonOptions& o,
              std::ostream& out) {
  const Loaded l = load_checkpoint_and_data(ckpt_path, dataset_path, o.overrides);
  const ProbeSettings settings = probe_settings(l.cfg);
  const std::uint64_t seed = l.cfg.get_uint("probes.seed");
  const bool cife = std::holds_alternative<CifeModel>(l.ckpt.model);

  std::vector<std::string> kinds;
  if (!kinds_arg.empty()) {
    ExperimentConfig tmp;
    tmp.set("probes.kinds", kinds_arg);
    kinds = tmp.get_list("probes.kinds");
  } else {
    for (auto& k : l.cfg.get_list("probes.kinds")) {
      if (k != "category-fd" || cife) kinds.push_back(k);
    }
  }

  const auto& xs = l.ds.source.features;
  const auto& xt = l.ds.target_train;
  json report = {{"config_hash", l.cfg.hash()},
                 {"seed", l.ckpt.seed},
                 {"variant", to_string(l.ckpt.variant)}};
  for (const auto& kind : kinds) {
    if (kind == "a-distance") {
      const ADistance a =
          a_distance(extract_features(l.ckpt.model, xs, FeatureKind::invariant),
                     extract_features(l.ckpt.model, xt, FeatureKind::invariant), seed,
                     settings);
      report["a_distance"] = {{"epsilon", a.epsilon}, {"d_a", a.d_a}};
      out << "epsilon=" << num(a.epsilon) << " d_A=" << num(a.d_a) << "\n";
    } else if (kind == "adaptability") {
      const JointHypothesisError e = adaptability(
          extract_features(l.ckpt.model, xs, FeatureKind::joint), l.ds.source.labels,
          extract_features(l.ckpt.model, xt, FeatureKind::joint),
          l.ds.evaluation.target_train_labels, seed, settings);
      report["adaptability"] = {
          {"source_error", e.source}, {"target_error", e.target}, {"sum", e.sum}};
      out << "adaptability source=" << num(e.source) << " target=" << num(e.target)
          << " sum=" << num(e.sum) << "\n";
    } else if (kind == "category-fd" || kind == "category-fs") {
      const FeatureKind fk =
          kind == "category-fd" ? FeatureKind::specific : FeatureKind::invariant;
      const double acc = feature_probe(extract_features(l.ckpt.model, xs, fk),
                                       l.ds.source.labels, seed, settings);
      report[kind == "category-fd" ? "category_on_fd" : "category_on_fs"] = acc;
      out << kind << " accuracy=" << num(acc) << "\n";
    } else if (kind == "domain-fs") {
      Labels domain(xs.rows(), 0);
      domain.insert(domain.end(), xt.rows(), 1);
      const double acc = feature_probe(
          stack_rows(extract_features(l.ckpt.model, xs, FeatureKind::invariant),
                     extract_features(l.ckpt.model, xt, FeatureKind::invariant)),
          domain, seed, settings);
      report["domain_on_fs"] = acc;
      out << "domain-fs accuracy=" << num(acc) << "\n";
    } else {
      throw ConfigError("unknown probe kind '" + kind +
                        "' (expected a-distance, adaptability, category-fd, "
                        "category-fs or domain-fs)");
    }
  }
  const fs::path path = o.out.empty() ? output_dir(o, l.cfg) / "probe_report.json"
                                      : fs::path(o.out);
  write_text(path, report.dump(1) + "\n");
  return 0;
}

// ---- sweep ----

int cmd_sweep(const CommonOptions& o, std::ostream& out) {
  const ExperimentConfig cfg = load_config(o);
  const TrainConfig tc = train_config(cfg);
  if (!is_cife(tc.variant)) {
    throw ConfigError("sweep needs a CIFE variant (cife-dann or cife-cdan)");
  }
  const DomainDataset ds = load_or_generate(cfg);
  const auto grid = cfg.get_double_list("train.lambda_c_grid");
  const auto rows = lambda_c_sweep(ds, tc, grid, cfg.get_uint("train.n_runs"));
  std::string csv = provenance_line(cfg.hash(), tc.seed) + "lambda_c,mean_acc,std_acc\n";
  for (const auto& r : rows) {
    csv += num(r.lambda_c) + "," + num(r.mean) + "," + num(r.std) + "\n";
    out << "lambda_c=" << num(r.lambda_c) << " mean=" << num(r.mean)
        << " std=" << num(r.std) << "\n";
  }
  const fs::path path =
      o.out.empty() ? output_dir(o, cfg) / "sweep.csv" : fs::path(o.out);
  write_text(path, csv);
  return 0;
}

// ---- compare ----

int cmd_compare(const CommonOptions& o, std::ostream& out) {
  const ExperimentConfig cfg = load_config(o);
  const TrainConfig base = train_config(cfg);
  const DomainDataset ds = load_or_generate(cfg);
  const std::size_t n_runs = cfg.get_uint("train.n_runs");
  const std::string hash = cfg.hash();
  std::vector<Variant> variants;
  for (const auto& v : cfg.get_list("train.compare_variants")) {
    try {
      variants.push_back(parse_variant(v));
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
  }
  if (variants.empty()) throw ConfigError("train.compare_variants is empty");

  std::string csv = provenance_line(hash, base.seed) + "variant,mean_acc,std_acc\n";
  json manifest = {{"config_hash", hash}, {"seed", base.seed}, {"n_runs", n_runs},
                   {"variants", json::array()}};
  char line[128];
  std::snprintf(line, sizeof line, "%-12s %s\n", "variant", "target accuracy");
  out << line;
  for (Variant v : variants) {
    TrainConfig tc = base;
    tc.variant = v;
    const ReplicateSummary s = run_replicates(tc, ds, n_runs);
    csv += std::string(to_string(v)) + "," + num(s.mean) + "," + num(s.std) + "\n";
    manifest["variants"].push_back({{"variant", to_string(v)},
                                    {"dataset_checksum", hex64(dataset_checksum(ds))},
                                    {"mean", s.mean},
                                    {"std", s.std},
                                    {"accuracies", s.accuracies}});
    std::snprintf(line, sizeof line, "%-12s %.4f +/- %.4f\n", to_string(v), s.mean,
                  s.std);
    out << line << std::flush;
  }
  const fs::path dir = output_dir(o, cfg);
  write_text(dir / "compare.csv", csv);
  write_text(dir / "compare_manifest.json", manifest.dump(1) + "\n");
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"Category-invariant feature enhancement experiments"};
  app.name("cife");
  app.require_subcommand(1);

  CommonOptions gen, tr, pr, pb, sw, cmp;
  std::string train_dataset, pr_ckpt, pr_dataset, pb_ckpt, pb_dataset, pb_kind;

  auto* g = app.add_subcommand("generate", "generate a synthetic dataset and manifest");
  add_common(g, gen, "dataset file to write");
  g->get_option("--out")->required();

  auto* t = app.add_subcommand("train", "train one model; writes checkpoint and metrics");
  add_common(t, tr, "output directory (default output.dir)");
  t->add_option("--dataset", train_dataset, "dataset file (overrides dataset.path)");

  auto* p = app.add_subcommand("predict", "predict target-test labels from a checkpoint");
  add_common(p, pr, "predictions CSV (default <output.dir>/predictions.csv)");
  p->add_option("--checkpoint", pr_ckpt, "checkpoint file")->required();
  p->add_option("--dataset", pr_dataset, "dataset file");

  auto* b = app.add_subcommand("probe", "run diagnostic probes on a checkpoint");
  add_common(b, pb, "report file (default <output.dir>/probe_report.json)");
  b->add_option("--checkpoint", pb_ckpt, "checkpoint file")->required();
  b->add_option("--dataset", pb_dataset, "dataset file");
  b->add_option("--kind", pb_kind,
                "comma list of a-distance, adaptability, category-fd, "
                "category-fs, domain-fs (default probes.kinds)");

  auto* s = app.add_subcommand("sweep", "lambda_c sweep; writes a CSV table");
  add_common(s, sw, "CSV file (default <output.dir>/sweep.csv)");

  auto* c = app.add_subcommand("compare", "replicate runs per variant; summary table");
  add_common(c, cmp, "output directory (default output.dir)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return e.get_exit_code() == 0 ? 0 : 2;
  }

  try {
    if (g->parsed()) return cmd_generate(gen, out);
    if (t->parsed()) return cmd_train(tr, train_dataset, out);
    if (p->parsed()) return cmd_predict(pr_ckpt, pr_dataset, pr, out);
    if (b->parsed()) return cmd_probe(pb_ckpt, pb_dataset, pb_kind, pb, out);
    if (s->parsed()) return cmd_sweep(sw, out);
    if (c->parsed()) return cmd_compare(cmp, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const InvalidArgument& e) {
    err << "invalid argument: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace cife::cli
