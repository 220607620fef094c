#ifndef ENTMAP_CONFIG_FILE_HPP_
#define ENTMAP_CONFIG_FILE_HPP_

#include "entmap/error.hpp"

#include <cstddef>
#include <istream>
#include <map>
#include <string>
#include <vector>

namespace entmap {

/// Parse or type error tied to a line of a config file.
class ConfigError : public InputError {
 public:
  ConfigError(const std::string& source, std::size_t line, const std::string& message)
      : InputError(source + ":" + std::to_string(line) + ": " + message), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct ConfigValue {
  enum class Kind { number, string, boolean, array };
  Kind kind = Kind::number;
  double number = 0.0;
  std::string text;  // strings; also the raw token for numbers
  bool boolean = false;
  std::vector<ConfigValue> items;
  std::size_t line = 0;
};

/// A small TOML subset: `[section]` headers, `key = value` pairs, `#`
/// comments. Values are numbers, double-quoted strings, true/false, or flat
/// arrays of those. Keys are addressed as "section.key" ("key" at top level).
class ConfigFile {
 public:
  static ConfigFile parse(std::istream& in, const std::string& source = "config");
  static ConfigFile load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const ConfigValue& at(const std::string& key) const;
  std::vector<std::string> keys() const;
  std::size_t line_of(const std::string& key) const { return at(key).line; }
  const std::string& source() const { return source_; }

  double number(const std::string& key) const;
  /// Nonnegative integer; fractional or negative values are rejected.
  std::size_t count(const std::string& key) const;
  std::string string(const std::string& key) const;
  bool boolean(const std::string& key) const;
  /// A scalar or array of numbers, as a list.
  std::vector<double> numbers(const std::string& key) const;
  /// A scalar or array of strings and numbers, each rendered as text.
  std::vector<std::string> strings(const std::string& key) const;

  /// Throws ConfigError for the first key not in `known`.
  void reject_unknown(const std::vector<std::string>& known) const;

 private:
  ConfigError error(const std::string& key, const std::string& message) const;

  std::string source_;
  std::map<std::string, ConfigValue> values_;
};

}  // namespace entmap

#endif  // ENTMAP_CONFIG_FILE_HPP_
