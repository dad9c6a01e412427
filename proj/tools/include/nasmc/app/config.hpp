// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace nasmc::app {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat `key = value` settings with a fixed set of allowed keys.
///
/// Values are layered: defaults, then full-scale defaults, then the config
/// file, then command-line overrides. Keys outside the schema are rejected.
class Config {
 public:
  Config() = default;
  explicit Config(std::map<std::string, std::string> defaults);

  /// Throws ConfigError for a key not in the schema.
  void set(const std::string& key, const std::string& value);
  /// Lines `key = value`; `#` starts a comment. Throws ConfigError with the
  /// line number on a malformed line.
  void merge_text(const std::string& text, const std::string& origin);
  void merge_file(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  long get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  /// Comma-separated list of numbers.
  std::vector<double> get_doubles(const std::string& key) const;

  /// Resolved settings in key order.
  std::string to_text() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace nasmc::app
