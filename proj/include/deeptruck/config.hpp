#pragma once

// Plain-text configuration files.
//
//   # comment            (also ';')
//   key = value          (whitespace around key and value is trimmed)
//   [section]            (keys that follow are stored as "section.key")
//
// Values are kept as strings; typed accessors parse on demand. Lists are
// comma separated. Unknown keys are tolerated so one file can feed several
// stages.

#include <charconv>
#include <cstdio>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "deeptruck/error.hpp"

namespace deeptruck {

inline std::string trim(std::string_view s) {
  const auto* ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_double(std::string_view text, const std::string& context = {}) {
  const std::string t = trim(text);
  double value = 0.0;
  const char* first = t.data();
  const char* last = t.data() + t.size();
  if (!t.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    // from_chars rejects "inf"/"nan" spellings on some libstdc++ builds
    if (t == "inf" || t == "+inf") return INFINITY;
    if (t == "-inf") return -INFINITY;
    throw Error(ErrorKind::Parse, "not a number '" + t + "'" + (context.empty() ? "" : " (" + context + ")"));
  }
  return value;
}

inline long long parse_int(std::string_view text, const std::string& context = {}) {
  const std::string t = trim(text);
  long long value = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size())
    throw Error(ErrorKind::Parse, "not an integer '" + t + "'" + (context.empty() ? "" : " (" + context + ")"));
  return value;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

class Config {
 public:
  Config() = default;

  static Config parse(std::istream& in, const std::string& source = "<config>") {
    Config cfg;
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::string t = trim(line);
      if (t.empty() || t[0] == '#' || t[0] == ';') continue;
      if (t.front() == '[') {
        if (t.back() != ']')
          throw Error(ErrorKind::Parse, source + ":" + std::to_string(lineno) + ": unterminated section header");
        section = trim(std::string_view(t).substr(1, t.size() - 2));
        cfg.sections_.push_back(section);
        continue;
      }
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw Error(ErrorKind::Parse, source + ":" + std::to_string(lineno) + ": expected key = value");
      std::string key = trim(std::string_view(t).substr(0, eq));
      if (key.empty()) throw Error(ErrorKind::Parse, source + ":" + std::to_string(lineno) + ": empty key");
      if (!section.empty()) key = section + "." + key;
      cfg.values_[key] = trim(std::string_view(t).substr(eq + 1));
    }
    return cfg;
  }

  static Config from_string(const std::string& text) {
    std::istringstream in(text);
    return parse(in, "<string>");
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot open config '" + path + "'");
    return parse(in, path);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string require_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw Error(ErrorKind::Parse, "missing key '" + key + "'");
    return it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_double(it->second, key);
  }

  long long get_int(const std::string& key, long long fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_int(it->second, key);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const auto& v = it->second;
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw Error(ErrorKind::Parse, "not a boolean '" + v + "' (" + key + ")");
  }

  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<double> out;
    for (const auto& item : split(it->second, ',')) out.push_back(parse_double(item, key));
    return out;
  }

  /// Keys under `prefix.` with the prefix stripped.
  Config subsection(const std::string& prefix) const {
    Config sub;
    const std::string p = prefix + ".";
    for (const auto& [k, v] : values_)
      if (k.compare(0, p.size(), p) == 0) sub.values_[k.substr(p.size())] = v;
    return sub;
  }

  void merge(const Config& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
  }

  const std::map<std::string, std::string>& values() const { return values_; }
  const std::vector<std::string>& sections() const { return sections_; }

  std::string to_string() const {
    std::ostringstream out;
    for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
    return out.str();
  }

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::string> sections_;
};

/// FNV-1a, used for short identity hashes of configurations.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace deeptruck
