#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cife/cli.hpp"
#include "cife/errors.hpp"

namespace cife::cli {

namespace {

std::string fmt(double v) {
  char buf[64];
  // Shortest round-trip digits; plain decimal notation for ordinary magnitudes.
  const double a = std::abs(v);
  const bool plain = a == 0.0 || (a >= 1e-6 && a < 1e15);
  auto [end, ec] = plain ? std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed)
                         : std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string fmt(std::size_t v) { return std::to_string(v); }

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::map<std::string, std::string> build_defaults() {
  const FactorizedTaskSpec f;
  const MoonsShiftSpec moons;
  const TrainConfig t;
  const Architecture a;
  const ProbeSettings p;
  std::string grid;
  for (double g : kLambdaCGrid) grid += (grid.empty() ? "" : ",") + fmt(g);
  return {
      {"dataset.kind", "factorized"},
      {"dataset.path", ""},
      {"dataset.seed", fmt(std::size_t{f.seed})},
      {"dataset.num_classes", fmt(f.num_classes)},
      {"dataset.input_dim", fmt(f.input_dim)},
      {"dataset.class_dim", fmt(f.class_dim)},
      {"dataset.nuisance_dim", fmt(f.nuisance_dim)},
      {"dataset.sigma", fmt(f.sigma)},
      {"dataset.n_source", fmt(f.n_source)},
      {"dataset.n_target", fmt(f.n_target)},
      {"dataset.n_test", fmt(f.n_test)},
      {"dataset.prototype_scale", fmt(f.prototype_scale)},
      {"dataset.nuisance_shift", fmt(f.nuisance_shift)},
      {"dataset.class_mixing_shift", fmt(f.class_mixing_shift)},
      {"dataset.nuisance_mixing_shift", fmt(f.nuisance_mixing_shift)},
      {"dataset.moons_angle", fmt(moons.angle_degrees)},
      {"dataset.moons_noise", fmt(moons.noise)},
      {"model.variant", to_string(t.variant)},
      {"model.extractor_hidden", join(a.extractor_hidden)},
      {"model.invariant_dim", fmt(a.invariant_dim)},
      {"model.specific_dim", fmt(a.specific_dim)},
      {"model.discriminator_hidden", fmt(a.discriminator_hidden)},
      {"model.classifier_hidden", fmt(a.classifier_hidden)},
      {"model.feature_head", to_string(a.feature_head)},
      {"train.epochs", fmt(t.epochs)},
      {"train.batch_size", fmt(t.batch_size)},
      {"train.eta0", fmt(t.schedule.eta0)},
      {"train.theta", fmt(t.schedule.theta)},
      {"train.beta", fmt(t.schedule.beta)},
      {"train.delta", fmt(t.schedule.delta)},
      {"train.lambda_d", fmt(t.lambda_d)},
      {"train.lambda_c", fmt(t.lambda_c)},
      {"train.momentum", fmt(t.momentum)},
      {"train.disc_lr_scale", fmt(t.discriminator_lr_scale)},
      {"train.prediction_draws", fmt(t.prediction_draws)},
      {"train.seed", fmt(std::size_t{t.seed})},
      {"train.update_mode", to_string(t.update_mode)},
      {"train.n_runs", "3"},
      {"train.lambda_c_grid", grid},
      {"train.compare_variants", "source-only,dann,cife-dann"},
      {"probes.kinds", "a-distance,adaptability,category-fd,category-fs,domain-fs"},
      {"probes.hidden", fmt(p.hidden)},
      {"probes.epochs", fmt(p.epochs)},
      {"probes.batch_size", fmt(p.batch_size)},
      {"probes.seed", "0"},
      {"output.dir", "out"},
  };
}

}  // namespace

const std::map<std::string, std::string>& ExperimentConfig::defaults() {
  static const auto d = build_defaults();
  return d;
}

ExperimentConfig::ExperimentConfig() : values_(defaults()) {}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
}

void ExperimentConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("expected key=value, got '" + assignment + "'");
  }
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

ExperimentConfig ExperimentConfig::from_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.find('=') == std::string::npos) {
      throw ConfigError("config line " + std::to_string(n) + ": expected key = value");
    }
    cfg.apply_override(line);
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

ExperimentConfig ExperimentConfig::from_map(
    const std::map<std::string, std::string>& values) {
  ExperimentConfig cfg;
  for (const auto& [k, v] : values) cfg.set(k, v);
  return cfg;
}

const std::string& ExperimentConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double ExperimentConfig::get_double(const std::string& key) const {
  const std::string& s = get(key);
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    throw ConfigError(key + ": expected a number, got '" + s + "'");
  }
  return v;
}

std::uint64_t ExperimentConfig::get_uint(const std::string& key) const {
  const std::string& s = get(key);
  std::uint64_t v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

std::vector<std::string> ExperimentConfig::get_list(const std::string& key) const {
  std::vector<std::string> out;
  std::stringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> ExperimentConfig::get_double_list(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : get_list(key)) {
    double v = 0.0;
    auto [end, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || end != item.data() + item.size()) {
      throw ConfigError(key + ": bad number '" + item + "'");
    }
    out.push_back(v);
  }
  return out;
}

std::string ExperimentConfig::canonical_text() const {
  std::string s;
  for (const auto& [k, v] : values_) s += k + " = " + v + "\n";
  return s;
}

std::string ExperimentConfig::hash() const {
  const std::string text = canonical_text();
  const auto h = fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(text.data()),
                                   text.size()));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

FactorizedTaskSpec factorized_spec(const ExperimentConfig& cfg) {
  FactorizedTaskSpec s;
  s.seed = cfg.get_uint("dataset.seed");
  s.num_classes = cfg.get_uint("dataset.num_classes");
  s.input_dim = cfg.get_uint("dataset.input_dim");
  s.class_dim = cfg.get_uint("dataset.class_dim");
  s.nuisance_dim = cfg.get_uint("dataset.nuisance_dim");
  s.sigma = cfg.get_double("dataset.sigma");
  s.n_source = cfg.get_uint("dataset.n_source");
  s.n_target = cfg.get_uint("dataset.n_target");
  s.n_test = cfg.get_uint("dataset.n_test");
  s.prototype_scale = cfg.get_double("dataset.prototype_scale");
  s.nuisance_shift = cfg.get_double("dataset.nuisance_shift");
  s.class_mixing_shift = cfg.get_double("dataset.class_mixing_shift");
  s.nuisance_mixing_shift = cfg.get_double("dataset.nuisance_mixing_shift");
  return s;
}

MoonsShiftSpec moons_spec(const ExperimentConfig& cfg) {
  MoonsShiftSpec s;
  s.seed = cfg.get_uint("dataset.seed");
  s.angle_degrees = cfg.get_double("dataset.moons_angle");
  s.noise = cfg.get_double("dataset.moons_noise");
  s.n_source = cfg.get_uint("dataset.n_source");
  s.n_target = cfg.get_uint("dataset.n_target");
  s.n_test = cfg.get_uint("dataset.n_test");
  return s;
}

Architecture architecture(const ExperimentConfig& cfg) {
  Architecture a;
  a.extractor_hidden.clear();
  for (const auto& w : cfg.get_list("model.extractor_hidden")) {
    std::size_t v = 0;
    auto [end, ec] = std::from_chars(w.data(), w.data() + w.size(), v);
    if (ec != std::errc() || end != w.data() + w.size()) {
      throw ConfigError("model.extractor_hidden: bad width '" + w + "'");
    }
    a.extractor_hidden.push_back(v);
  }
  a.invariant_dim = cfg.get_uint("model.invariant_dim");
  a.specific_dim = cfg.get_uint("model.specific_dim");
  a.discriminator_hidden = cfg.get_uint("model.discriminator_hidden");
  a.classifier_hidden = cfg.get_uint("model.classifier_hidden");
  try {
    a.feature_head = parse_head(cfg.get("model.feature_head"));
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  return a;
}

TrainConfig train_config(const ExperimentConfig& cfg) {
  TrainConfig t;
  try {
    t.variant = parse_variant(cfg.get("model.variant"));
    t.update_mode = parse_update_mode(cfg.get("train.update_mode"));
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  t.architecture = architecture(cfg);
  t.epochs = cfg.get_uint("train.epochs");
  t.batch_size = cfg.get_uint("train.batch_size");
  t.schedule.eta0 = cfg.get_double("train.eta0");
  t.schedule.theta = cfg.get_double("train.theta");
  t.schedule.beta = cfg.get_double("train.beta");
  t.schedule.delta = cfg.get_double("train.delta");
  t.lambda_d = cfg.get_double("train.lambda_d");
  t.lambda_c = cfg.get_double("train.lambda_c");
  t.momentum = cfg.get_double("train.momentum");
  t.discriminator_lr_scale = cfg.get_double("train.disc_lr_scale");
  t.prediction_draws = cfg.get_uint("train.prediction_draws");
  t.seed = cfg.get_uint("train.seed");
  try {
    t.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  return t;
}

ProbeSettings probe_settings(const ExperimentConfig& cfg) {
  ProbeSettings p;
  p.hidden = cfg.get_uint("probes.hidden");
  p.epochs = cfg.get_uint("probes.epochs");
  p.batch_size = cfg.get_uint("probes.batch_size");
  p.momentum = cfg.get_double("train.momentum");
  p.schedule.eta0 = cfg.get_double("train.eta0");
  p.schedule.theta = cfg.get_double("train.theta");
  p.schedule.beta = cfg.get_double("train.beta");
  p.schedule.delta = cfg.get_double("train.delta");
  if (p.hidden == 0 || p.epochs == 0 || p.batch_size == 0) {
    throw ConfigError("probes.hidden, probes.epochs and probes.batch_size must be positive");
  }
  return p;
}

DomainDataset load_or_generate(const ExperimentConfig& cfg) {
  const std::string& path = cfg.get("dataset.path");
  if (!path.empty()) return load_dataset(path);
  const std::string& kind = cfg.get("dataset.kind");
  if (kind == "factorized") return gen_factorized(factorized_spec(cfg));
  if (kind == "moons") return gen_moons_shift(moons_spec(cfg));
  throw ConfigError("dataset.kind must be factorized or moons, got '" + kind + "'");
}

}  // namespace cife::cli
