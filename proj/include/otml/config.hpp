#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "otml/trainer.hpp"

namespace otml::config {

struct KeySpec {
  const char* key;            // "section.name"
  const char* default_value;
  const char* doc;
};

// Every documented key with its default; --help and the drift tests iterate
// this table.
std::span<const KeySpec> registry();

// Line-oriented `key = value` configuration in [section] groups. Unknown keys
// are rejected; every key has a registry default; parse(render(c)) == c.
class Config {
 public:
  static Config defaults();
  static Config parse_file(const std::string& path);
  static Config parse_text(const std::string& text, const std::string& origin);

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  std::string render() const;
  std::uint32_t digest() const;  // FNV-1a 32 of the canonical rendering

  bool operator==(const Config& other) const { return values_ == other.values_; }

 private:
  std::map<std::string, std::string> values_;
};

// Fully validated runtime bundle assembled from a Config.
struct RunConfig {
  model::EncoderConfig encoder;
  model::ExpanderConfig expander;
  std::size_t token_count = 8;
  std::size_t heads = 2;
  double temperature = 1.0;
  train::TrainConfig train;
  train::ProbeConfig probe;
};

RunConfig build_run_config(const Config& cfg);

}  // namespace otml::config
