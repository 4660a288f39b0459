#pragma once

// Flat TOML-style experiment configuration: `[section]` headers and
// `key = value` lines where a value is a number, a boolean, a quoted string
// or a bracketed list of those.

#include "cirrl/baselines.hpp"
#include "cirrl/drig.hpp"
#include "cirrl/repr.hpp"
#include "cirrl/scm.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cirrl::config {

struct TomlValue {
  /// Scalars hold one item; lists hold any number.
  std::vector<std::string> items;
  bool is_list = false;
  bool quoted = false;
  int line = 0;
};

class TomlDoc {
 public:
  static TomlDoc parse(const std::string& text);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::vector<std::string> keys() const;

  int get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<int> get_ints(const std::string& key) const;
  std::vector<std::uint64_t> get_u64s(const std::string& key) const;
  std::vector<std::string> get_strings(const std::string& key) const;

 private:
  const TomlValue& at(const std::string& key) const;
  std::map<std::string, TomlValue> values_;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::vector<std::uint64_t> seeds{0};
  std::string out_dir = "runs";

  scm::GenConfig gen;
  /// Real-data path; when set the generator is not used.
  std::optional<std::string> csv_path;

  repr::ReprTrainConfig repr;

  std::vector<double> gammas{0.0, 1.0, 5.0, 10.0};
  drig::WeightScheme weights = drig::WeightScheme::uniform;
  bool eq5_literal = false;

  bool run_erm = true;
  baselines::BaselineConfig erm = baselines::BaselineConfig::erm();
  bool run_irm = true;
  baselines::BaselineConfig irm = baselines::BaselineConfig::irm();

  std::vector<double> etas{10.0};
  std::vector<scm::NoiseFamily> families{scm::NoiseFamily::gaussian};
  int n_test = 2000;

  std::vector<int> elbow_dims{1, 2, 3, 4};

  void validate() const;
};

/// Unknown sections or keys are rejected so typos cannot silently fall back to defaults.
ExperimentConfig experiment_from_toml(const std::string& text);
ExperimentConfig load_experiment(const std::string& path);
Json to_json(const ExperimentConfig& cfg);

/// Comma-separated numbers, e.g. "0,1,5.5".
std::vector<double> parse_number_list(const std::string& text);

}  // namespace cirrl::config
