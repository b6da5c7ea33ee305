// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace gridcast::cli {

/// Bad configuration: unknown key, unparsable value, inconsistent settings.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A required input file does not exist.
struct MissingInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct KeySpec {
  std::string key;
  std::string default_value;
  std::string help;
};

/// Every recognised key with its default.
const std::vector<KeySpec>& config_keys();

/// Flat key=value configuration. Values are kept as strings and parsed on
/// access; every key in config_keys() is always present.
class Config {
 public:
  Config();

  /// Reads `key = value` lines; '#' starts a comment. Unknown keys throw.
  void load_file(const std::string& path);
  /// Applies one "key=value" override.
  void apply_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  const std::string& str(const std::string& key) const;
  double real(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;
  std::size_t count(const std::string& key) const;  // non-negative integer
  bool flag(const std::string& key) const;
  std::vector<std::size_t> counts(const std::string& key) const;  // comma list

  /// Canonical "key=value\n" text in key order.
  std::string canonical() const;
  /// FNV-1a 64 of canonical(), as 16 hex digits.
  std::string hash() const;
  nlohmann::json to_json() const;

 private:
  std::map<std::string, std::string> values_;
};

/// Multi-line listing of keys, defaults and descriptions for --help.
std::string describe_keys();

}  // namespace gridcast::cli
