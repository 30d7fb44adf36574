// SPDX-License-Identifier: Apache-2.0
#pragma once

// Flat key-value documents ("section.key = value", '#' comments). Used for
// schemas, synthetic-stream configs and run configs.

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ddp/error.hpp"

namespace ddp {

inline std::string trim(std::string_view s) {
  const auto* ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(s.substr(start));
      break;
    }
    out.emplace_back(s.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view text, T& out) {
  const std::string t = trim(text);
  if (t.empty()) return false;
  if constexpr (std::is_floating_point_v<T>) {
    // from_chars for doubles is available in libstdc++ 11 but strtod accepts
    // the same grammar and handles "1e-3" etc.
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (end != t.c_str() + t.size()) return false;
    out = static_cast<T>(v);
    return true;
  } else {
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
    return ec == std::errc() && ptr == t.data() + t.size();
  }
}

class KeyValueDoc {
 public:
  KeyValueDoc() = default;

  static KeyValueDoc parse(std::string_view text, const std::string& origin = "<string>") {
    KeyValueDoc doc;
    std::size_t line_no = 0;
    for (const auto& raw : split(text, '\n')) {
      ++line_no;
      std::string line = raw;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        fail(ErrorCode::ConfigError,
             origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
      }
      std::string key = trim(std::string_view(line).substr(0, eq));
      std::string value = trim(std::string_view(line).substr(eq + 1));
      if (key.empty()) {
        fail(ErrorCode::ConfigError, origin + ":" + std::to_string(line_no) + ": empty key");
      }
      doc.set(key, value);
    }
    return doc;
  }

  static KeyValueDoc load(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::UnreadableFile, "cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  void set(const std::string& key, const std::string& value) {
    if (!values_.contains(key)) order_.push_back(key);
    values_[key] = value;
  }

  bool has(const std::string& key) const { return values_.contains(key); }

  const std::string& raw(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) fail(ErrorCode::ConfigError, "missing key '" + key + "'");
    return it->second;
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    return has(key) ? raw(key) : fallback;
  }

  template <typename T>
  T get(const std::string& key, T fallback) const {
    if (!has(key)) return fallback;
    return require<T>(key);
  }

  template <typename T>
  T require(const std::string& key) const {
    const auto& text = raw(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (text == "true" || text == "1" || text == "yes") return true;
      if (text == "false" || text == "0" || text == "no") return false;
      fail(ErrorCode::ConfigError, "key '" + key + "': expected boolean, got '" + text + "'");
    } else if constexpr (std::is_same_v<T, std::string>) {
      return text;
    } else {
      T out{};
      if (!parse_number(text, out)) {
        fail(ErrorCode::ConfigError, "key '" + key + "': cannot parse '" + text + "'");
      }
      return out;
    }
  }

  template <typename T>
  std::vector<T> get_list(const std::string& key, std::vector<T> fallback) const {
    if (!has(key)) return fallback;
    std::vector<T> out;
    const auto& text = raw(key);
    if (trim(text).empty()) return out;
    for (const auto& part : split(text, ',')) {
      T v{};
      if (!parse_number(part, v)) {
        fail(ErrorCode::ConfigError, "key '" + key + "': cannot parse list item '" + part + "'");
      }
      out.push_back(v);
    }
    return out;
  }

  /// Throws CONFIG_ERROR naming the first key not accepted by `allowed`.
  template <typename Pred>
  void reject_unknown(Pred allowed) const {
    for (const auto& key : order_) {
      if (!allowed(key)) fail(ErrorCode::ConfigError, "unknown key '" + key + "'");
    }
  }

  const std::vector<std::string>& keys() const { return order_; }

  std::string serialize() const {
    std::ostringstream os;
    for (const auto& key : order_) os << key << " = " << values_.at(key) << '\n';
    return os.str();
  }

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

/// 64-bit FNV-1a. Stable across platforms, unlike std::hash.
inline std::uint64_t fnv1a64(std::string_view data,
                             std::uint64_t seed = 0xcbf29ce484222325ULL) {
  std::uint64_t h = seed;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace ddp
