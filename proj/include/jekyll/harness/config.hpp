#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "jekyll/core/types.hpp"

namespace jekyll::harness {

/// Flat "section.key = value" configuration. Lines starting with '#' are
/// comments; later assignments override earlier ones.
class Config {
 public:
  static Config parse(const std::string& text);
  static Config load(const std::filesystem::path& path);
  // Every key the pipeline reads, at its default value.
  static Config defaults();

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  void set(const std::string& key, const std::string& value);
  // Applies "key=value" overrides.
  void apply(const std::vector<std::string>& assignments);
  // Keys from other take precedence.
  void merge(const Config& other);

  std::string get_string(const std::string& key, const std::string& fallback = "") const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  const std::map<std::string, std::string>& values() const { return values_; }
  // Sorted "key = value" lines; the basis of the config hash.
  std::string canonical_text() const;
  std::string hash() const;
  void save(const std::filesystem::path& path) const;

 private:
  std::map<std::string, std::string> values_;
};

LossWeights loss_weights_from(const Config& c);
ExperimentConfig experiment_config_from(const Config& c);

}  // namespace jekyll::harness
