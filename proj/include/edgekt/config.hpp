#pragma once

#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "edgekt/errors.hpp"

namespace edgekt {

/// Parsed run configuration: `key = value` lines under `[section]` headers,
/// UTF-8, `#` comments. Typed getters validate on access; consumed keys are
/// tracked so a run can reject keys it never read.
class ConfigFile {
 public:
  static ConfigFile parse(const std::string& text, const std::string& origin = "config") {
    ConfigFile cfg;
    cfg.origin_ = origin;
    std::istringstream is(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw ConfigError(origin + " line " + std::to_string(lineno) +
                            ": unterminated section header");
        section = line.substr(1, line.size() - 2);
        cfg.sections_[section];
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos || section.empty())
        throw ConfigError(origin + " line " + std::to_string(lineno) +
                          ": expected 'key = value' inside a section");
      const std::string key = trim(line.substr(0, eq));
      const std::string val = trim(line.substr(eq + 1));
      if (cfg.sections_[section].count(key))
        throw ConfigError(origin + " line " + std::to_string(lineno) + ": duplicate key '" +
                          key + "' in [" + section + "]");
      cfg.sections_[section][key] = val;
    }
    return cfg;
  }

  bool has(const std::string& section, const std::string& key) const {
    auto s = sections_.find(section);
    return s != sections_.end() && s->second.count(key) > 0;
  }

  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const {
    mark(section, key);
    auto s = sections_.find(section);
    if (s == sections_.end()) return fallback;
    auto k = s->second.find(key);
    return k == s->second.end() ? fallback : k->second;
  }

  std::string require_string(const std::string& section, const std::string& key) const {
    if (!has(section, key))
      throw ConfigError(origin_ + ": missing required key '" + key + "' in [" + section + "]");
    return get_string(section, key, "");
  }

  long long get_int(const std::string& section, const std::string& key, long long fallback) const {
    if (!has(section, key)) {
      mark(section, key);
      return fallback;
    }
    return parse_int(get_string(section, key, ""), section, key);
  }

  double get_real(const std::string& section, const std::string& key, double fallback) const {
    if (!has(section, key)) {
      mark(section, key);
      return fallback;
    }
    const std::string v = get_string(section, key, "");
    try {
      std::size_t pos = 0;
      const double d = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw ConfigError(origin_ + ": bad real '" + v + "' for " + section + "." + key);
    }
  }

  bool get_bool(const std::string& section, const std::string& key, bool fallback) const {
    if (!has(section, key)) {
      mark(section, key);
      return fallback;
    }
    const std::string v = get_string(section, key, "");
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError(origin_ + ": bad boolean '" + v + "' for " + section + "." + key);
  }

  std::vector<int> get_int_list(const std::string& section, const std::string& key) const {
    std::vector<int> out;
    if (!has(section, key)) {
      mark(section, key);
      return out;
    }
    std::istringstream is(get_string(section, key, ""));
    std::string item;
    while (std::getline(is, item, ','))
      out.push_back(int(parse_int(trim(item), section, key)));
    return out;
  }

  /// Any key never read by the command is an error: catches typos and keys
  /// in the wrong section.
  void reject_unconsumed() const {
    for (const auto& [section, kv] : sections_)
      for (const auto& [key, value] : kv)
        if (!consumed_.count(section + "." + key))
          throw ConfigError(origin_ + ": unknown key '" + key + "' in [" + section + "]");
  }

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
  mutable std::set<std::string> consumed_;
  std::string origin_;

  void mark(const std::string& section, const std::string& key) const {
    consumed_.insert(section + "." + key);
  }

  long long parse_int(const std::string& v, const std::string& section,
                      const std::string& key) const {
    try {
      std::size_t pos = 0;
      const long long n = std::stoll(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return n;
    } catch (const std::exception&) {
      throw ConfigError(origin_ + ": bad integer '" + v + "' for " + section + "." + key);
    }
  }

  static std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }
};

}  // namespace edgekt
