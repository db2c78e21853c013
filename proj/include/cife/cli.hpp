#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "cife/data.hpp"
#include "cife/probes.hpp"
#include "cife/training.hpp"

namespace cife::cli {

/// Flat key=value experiment configuration. Keys carry a section prefix
/// (dataset., model., train., probes., output.); every key has a default
/// and unknown keys are rejected with ConfigError.
class ExperimentConfig {
 public:
  ExperimentConfig();

  // Lines of `key = value`; '#' starts a comment line.
  static ExperimentConfig from_text(const std::string& text);
  static ExperimentConfig from_file(const std::string& path);
  static ExperimentConfig from_map(const std::map<std::string, std::string>& values);

  void set(const std::string& key, const std::string& value);
  // "key=value"
  void apply_override(const std::string& assignment);

  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }

  // Sorted key = value lines.
  std::string canonical_text() const;
  // FNV-1a of canonical_text, 16 hex digits.
  std::string hash() const;

  static const std::map<std::string, std::string>& defaults();

 private:
  std::map<std::string, std::string> values_;
};

FactorizedTaskSpec factorized_spec(const ExperimentConfig& cfg);
MoonsShiftSpec moons_spec(const ExperimentConfig& cfg);
Architecture architecture(const ExperimentConfig& cfg);
TrainConfig train_config(const ExperimentConfig& cfg);
ProbeSettings probe_settings(const ExperimentConfig& cfg);

// Loads dataset.path when set, otherwise generates from dataset.kind.
DomainDataset load_or_generate(const ExperimentConfig& cfg);

// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace cife::cli
