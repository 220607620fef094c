#include "entmap/config_file.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

namespace entmap {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

bool valid_key(const std::string& key) {
  if (key.empty()) return false;
  return std::all_of(key.begin(), key.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
  });
}

// Cursor over one line's value text.
struct ValueParser {
  const std::string& text;
  std::size_t pos;
  const std::string& source;
  std::size_t line;

  [[noreturn]] void fail(const std::string& message) const { throw ConfigError(source, line, message); }

  void skip_space() {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  }

  bool at_comment_or_end() {
    skip_space();
    return pos >= text.size() || text[pos] == '#';
  }

  ConfigValue parse_value(bool allow_array) {
    skip_space();
    if (pos >= text.size()) fail("missing value");
    ConfigValue v;
    v.line = line;
    const char c = text[pos];
    if (c == '"') {
      v.kind = ConfigValue::Kind::string;
      ++pos;
      while (true) {
        if (pos >= text.size()) fail("unterminated string");
        const char ch = text[pos++];
        if (ch == '"') break;
        if (ch == '\\') {
          if (pos >= text.size()) fail("unterminated string");
          const char esc = text[pos++];
          switch (esc) {
            case 'n':
              v.text += '\n';
              break;
            case 't':
              v.text += '\t';
              break;
            case '"':
            case '\\':
              v.text += esc;
              break;
            default:
              fail(std::string("unknown escape \\") + esc);
          }
        } else {
          v.text += ch;
        }
      }
      return v;
    }
    if (c == '[') {
      if (!allow_array) fail("nested arrays are not supported");
      v.kind = ConfigValue::Kind::array;
      ++pos;
      skip_space();
      if (pos < text.size() && text[pos] == ']') {
        ++pos;
        return v;
      }
      while (true) {
        v.items.push_back(parse_value(false));
        skip_space();
        if (pos >= text.size()) fail("unterminated array");
        if (text[pos] == ',') {
          ++pos;
          skip_space();
          if (pos < text.size() && text[pos] == ']') {
            ++pos;
            return v;
          }
          continue;
        }
        if (text[pos] == ']') {
          ++pos;
          return v;
        }
        fail("expected ',' or ']' in array");
      }
    }
    std::size_t end = pos;
    while (end < text.size() && text[end] != ',' && text[end] != ']' && text[end] != '#' &&
           !std::isspace(static_cast<unsigned char>(text[end])))
      ++end;
    const std::string token = text.substr(pos, end - pos);
    pos = end;
    if (token == "true" || token == "false") {
      v.kind = ConfigValue::Kind::boolean;
      v.boolean = token == "true";
      v.text = token;
      return v;
    }
    std::string digits;
    for (const char ch : token)
      if (ch != '_') digits += ch;
    try {
      std::size_t used = 0;
      v.number = std::stod(digits, &used);
      if (used != digits.size() || digits.empty()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      fail("invalid value '" + token + "'");
    }
    if (!std::isfinite(v.number)) fail("non-finite number '" + token + "'");
    v.kind = ConfigValue::Kind::number;
    v.text = digits;
    return v;
  }
};

std::string render(const ConfigValue& v) {
  switch (v.kind) {
    case ConfigValue::Kind::boolean:
      return v.boolean ? "true" : "false";
    default:
      return v.text;
  }
}

}  // namespace

ConfigFile ConfigFile::parse(std::istream& in, const std::string& source) {
  ConfigFile cfg;
  cfg.source_ = source;
  std::string section;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    const std::string stripped = trim(raw);
    if (stripped.empty() || stripped[0] == '#') continue;
    if (stripped[0] == '[') {
      const auto close = stripped.find(']');
      if (close == std::string::npos) throw ConfigError(source, line, "unterminated section header");
      const std::string rest = trim(stripped.substr(close + 1));
      if (!rest.empty() && rest[0] != '#') throw ConfigError(source, line, "unexpected text after section header");
      section = trim(stripped.substr(1, close - 1));
      if (!valid_key(section)) throw ConfigError(source, line, "invalid section name '" + section + "'");
      continue;
    }
    const auto eq = raw.find('=');
    if (eq == std::string::npos) throw ConfigError(source, line, "expected 'key = value'");
    const std::string key = trim(raw.substr(0, eq));
    if (!valid_key(key)) throw ConfigError(source, line, "invalid key '" + key + "'");
    ValueParser parser{raw, eq + 1, source, line};
    ConfigValue value = parser.parse_value(true);
    if (!parser.at_comment_or_end()) throw ConfigError(source, line, "unexpected text after value");
    const std::string full = section.empty() ? key : section + "." + key;
    if (cfg.values_.count(full)) {
      throw ConfigError(source, line,
                        "duplicate key '" + full + "' (first set on line " +
                            std::to_string(cfg.values_.at(full).line) + ")");
    }
    cfg.values_.emplace(full, std::move(value));
  }
  return cfg;
}

ConfigFile ConfigFile::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file '" + path + "'");
  return parse(in, path);
}

const ConfigValue& ConfigFile::at(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw InputError(source_ + ": missing key '" + key + "'");
  return it->second;
}

std::vector<std::string> ConfigFile::keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_) out.push_back(k);
  return out;
}

ConfigError ConfigFile::error(const std::string& key, const std::string& message) const {
  return ConfigError(source_, at(key).line, "'" + key + "' " + message);
}

double ConfigFile::number(const std::string& key) const {
  const auto& v = at(key);
  if (v.kind != ConfigValue::Kind::number) throw error(key, "must be a number");
  return v.number;
}

std::size_t ConfigFile::count(const std::string& key) const {
  const double v = number(key);
  if (v < 0 || v != std::floor(v) || v > 9.0e15) throw error(key, "must be a nonnegative integer");
  return static_cast<std::size_t>(v);
}

std::string ConfigFile::string(const std::string& key) const {
  const auto& v = at(key);
  if (v.kind != ConfigValue::Kind::string) throw error(key, "must be a string");
  return v.text;
}

bool ConfigFile::boolean(const std::string& key) const {
  const auto& v = at(key);
  if (v.kind != ConfigValue::Kind::boolean) throw error(key, "must be true or false");
  return v.boolean;
}

std::vector<double> ConfigFile::numbers(const std::string& key) const {
  const auto& v = at(key);
  if (v.kind == ConfigValue::Kind::number) return {v.number};
  if (v.kind != ConfigValue::Kind::array) throw error(key, "must be a number or array of numbers");
  std::vector<double> out;
  for (const auto& item : v.items) {
    if (item.kind != ConfigValue::Kind::number) throw error(key, "must contain only numbers");
    out.push_back(item.number);
  }
  return out;
}

std::vector<std::string> ConfigFile::strings(const std::string& key) const {
  const auto& v = at(key);
  if (v.kind != ConfigValue::Kind::array) return {render(v)};
  std::vector<std::string> out;
  for (const auto& item : v.items) out.push_back(render(item));
  return out;
}

void ConfigFile::reject_unknown(const std::vector<std::string>& known) const {
  const ConfigValue* first = nullptr;
  std::string first_key;
  for (const auto& [k, v] : values_) {
    if (std::find(known.begin(), known.end(), k) != known.end()) continue;
    if (!first || v.line < first->line) {
      first = &v;
      first_key = k;
    }
  }
  if (first) throw ConfigError(source_, first->line, "unknown key '" + first_key + "'");
}

}  // namespace entmap
