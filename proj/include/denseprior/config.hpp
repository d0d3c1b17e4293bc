#pragma once

// Flat key=value configuration with dotted section prefixes
// (e.g. "train.steps=5000"). Files are plain text: one pair per line,
// blank lines and '#' comments ignored. Later assignments win, so
// command-line overrides are applied after the file. The full key set a
// command accepts is validated up front; anything else is rejected.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "denseprior/errors.hpp"

namespace dp {

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && (s[a] == ' ' || s[a] == '\t')) ++a;
  while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r'))
    --b;
  return s.substr(a, b - a);
}

}  // namespace detail

class KeyValueConfig {
 public:
  // Parses a config file; malformed lines report their byte offset.
  void load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw io_error("cannot open config file: " + path);
    std::string line;
    size_t offset = 0;
    while (std::getline(f, line)) {
      const size_t line_at = offset;
      offset += line.size() + 1;
      const std::string t = detail::trim(line);
      if (t.empty() || t[0] == '#') continue;
      const size_t eq = t.find('=');
      if (eq == std::string::npos || eq == 0)
        throw format_error("config line is not key=value: " + path, line_at);
      set(detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
    }
  }

  // Applies a single "key=value" override string (from the command line).
  void apply_override(const std::string& kv) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
      throw usage_error("override is not key=value: '" + kv + "'");
    set(detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
  }

  void set(const std::string& key, const std::string& value) {
    if (key.empty()) throw usage_error("empty config key");
    kv_[key] = value;
  }

  void erase(const std::string& key) { kv_.erase(key); }

  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  std::string get_string(const std::string& key,
                         const std::string& fallback = "") const {
    const auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
  }

  // Missing required keys are configuration errors naming the key.
  std::string require_string(const std::string& key) const {
    const auto it = kv_.find(key);
    if (it == kv_.end() || it->second.empty())
      throw config_error("missing required config key: " + key);
    return it->second;
  }

  long long get_int(const std::string& key, long long fallback) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    return parse_int(key, it->second);
  }

  uint64_t get_u64(const std::string& key, uint64_t fallback) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    const std::string& v = it->second;
    try {
      size_t used = 0;
      const uint64_t out = std::stoull(v, &used, 10);
      if (used != v.size() || v.empty() || v[0] == '-') throw config_error("");
      return out;
    } catch (...) {
      throw config_error("config key " + key +
                         " must be a non-negative integer, got '" + v + "'");
    }
  }

  double get_double(const std::string& key, double fallback) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    const std::string& v = it->second;
    try {
      size_t used = 0;
      const double out = std::stod(v, &used);
      if (used != v.size() || v.empty()) throw config_error("");
      return out;
    } catch (...) {
      throw config_error("config key " + key + " must be a number, got '" +
                         v + "'");
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw config_error("config key " + key +
                       " must be true/false/1/0/on/off, got '" + v + "'");
  }

  // Comma-separated integer list, e.g. "0,1,2".
  std::vector<int> get_int_list(const std::string& key,
                                const std::vector<int>& fallback) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    std::vector<int> out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ','))
      out.push_back(int(parse_int(key, detail::trim(item))));
    if (out.empty())
      throw config_error("config key " + key + " must list integers");
    return out;
  }

  // Rejects any key not in the allowed set (catches typos and stale keys).
  void require_allowed(const std::set<std::string>& allowed) const {
    for (const auto& [key, value] : kv_)
      if (!allowed.count(key))
        throw config_error("unknown config key: " + key);
  }

  // Deterministic echo of the effective configuration, one pair per line,
  // sorted by key (std::map order).
  std::string render() const {
    std::string out;
    for (const auto& [key, value] : kv_) out += key + "=" + value + "\n";
    return out;
  }

  const std::map<std::string, std::string>& items() const { return kv_; }

 private:
  static long long parse_int(const std::string& key, const std::string& v) {
    try {
      size_t used = 0;
      const long long out = std::stoll(v, &used, 10);
      if (used != v.size() || v.empty()) throw config_error("");
      return out;
    } catch (...) {
      throw config_error("config key " + key + " must be an integer, got '" +
                         v + "'");
    }
  }

  std::map<std::string, std::string> kv_;
};

}  // namespace dp
