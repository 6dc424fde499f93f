#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "invreg/util.hpp"

namespace invreg {

/// Parse error carrying the offending line number.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& path, int line, const std::string& what)
      : std::runtime_error(path + ":" + std::to_string(line) + ": " + what) {}
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Structured text config: [section] headers with key = value lines.
/// Comments start with '#' or ';'.
class ConfigFile {
 public:
  static ConfigFile parse(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config file not found: " + path);
    ConfigFile cfg;
    cfg.path_ = path;
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find_first_of("#;");
      if (hash != std::string::npos) line.erase(hash);
      const std::string t = trim(line);
      if (t.empty()) continue;
      if (t.front() == '[') {
        if (t.back() != ']') throw ConfigError(path, lineno, "unterminated section header");
        section = trim(t.substr(1, t.size() - 2));
        if (section.empty()) throw ConfigError(path, lineno, "empty section name");
        continue;
      }
      const auto eq = t.find('=');
      if (eq == std::string::npos) throw ConfigError(path, lineno, "expected key = value");
      const std::string key = trim(t.substr(0, eq));
      const std::string val = trim(t.substr(eq + 1));
      if (key.empty()) throw ConfigError(path, lineno, "empty key");
      if (section.empty()) throw ConfigError(path, lineno, "key outside any [section]");
      cfg.values_[section + "." + key] = val;
      cfg.lines_[section + "." + key] = lineno;
    }
    return cfg;
  }

  bool has(const std::string& section, const std::string& key) const {
    return values_.count(section + "." + key) > 0;
  }

  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const {
    const auto it = values_.find(section + "." + key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& section, const std::string& key, double fallback) const {
    const auto it = values_.find(section + "." + key);
    if (it == values_.end()) return fallback;
    return parse_double(it->second, section + "." + key);
  }

  long get_int(const std::string& section, const std::string& key, long fallback) const {
    const auto it = values_.find(section + "." + key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t used = 0;
      const long v = std::stol(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw ConfigError(path_, lines_.at(section + "." + key),
                        "invalid integer for " + key + ": '" + it->second + "'");
    }
  }

  std::vector<double> get_list(const std::string& section, const std::string& key,
                               std::vector<double> fallback) const {
    const auto it = values_.find(section + "." + key);
    if (it == values_.end()) return fallback;
    std::vector<double> out;
    std::string item;
    std::istringstream ss(replace_commas(it->second));
    while (ss >> item) out.push_back(parse_double(item, section + "." + key));
    if (out.empty())
      throw ConfigError(path_, lines_.at(section + "." + key), "empty list for " + key);
    return out;
  }

  std::vector<std::string> get_words(const std::string& section, const std::string& key) const {
    const auto it = values_.find(section + "." + key);
    std::vector<std::string> out;
    if (it == values_.end()) return out;
    std::istringstream ss(replace_commas(it->second));
    std::string w;
    while (ss >> w) out.push_back(w);
    return out;
  }

  const std::string& path() const { return path_; }

 private:
  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }
  static std::string replace_commas(std::string s) {
    for (char& c : s)
      if (c == ',') c = ' ';
    return s;
  }
  double parse_double(const std::string& s, const std::string& where) const {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      const auto ln = lines_.find(where);
      throw ConfigError(path_, ln == lines_.end() ? 0 : ln->second,
                        "invalid number: '" + s + "'");
    }
  }

  std::string path_;
  std::map<std::string, std::string> values_;
  std::map<std::string, int> lines_;
};

}  // namespace invreg
