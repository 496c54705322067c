#pragma once

// Flat key=value experiment configuration. Lines are `key = value`; `#`
// starts a comment. Every key has a default; unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "grerank/reader.hpp"
#include "grerank/synthdata.hpp"
#include "grerank/trainer.hpp"

namespace grerank::config {

struct KeyInfo {
  std::string name;
  std::string default_value;
  std::string doc;
};

/// Every recognized key in declaration order.
const std::vector<KeyInfo>& keys();

class ExperimentConfig {
 public:
  /// All defaults.
  ExperimentConfig();

  /// Throws ParseError with the line number of an unknown key, a malformed
  /// line, or a value that does not parse as the key's type.
  static ExperimentConfig parse(std::istream& in);
  static ExperimentConfig load(const std::filesystem::path& path);

  /// Sets one key, validating the value. Throws ContractError when invalid.
  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;

  std::string get_string(const std::string& key) const { return get(key); }
  double get_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;

  /// Replaces every seed with a value derived from `seed`.
  void override_seeds(std::uint64_t seed);

  /// Full resolved configuration, defaults included, in key order.
  void write(std::ostream& out) const;

  data::TaskSpec task() const;
  reader::ReaderConfig reader() const;
  train::PretrainConfig pretrain() const;
  train::TrainConfig training() const;

  /// Training and held-out episodes; both derive from data_seed and never share a seed.
  std::vector<data::Episode> train_split() const;
  std::vector<data::Episode> test_split() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace grerank::config
