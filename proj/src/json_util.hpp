#pragma once

// Strict reading of JSON config objects: every key must be consumed, wrong
// types and unknown keys raise ConfigError naming the key.

#include <set>
#include <string>

#include "json.hpp"
#include "mfb/errors.hpp"

namespace mfb::detail {

class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string context) : j_(j), context_(std::move(context)) {
    if (!j_.is_object()) throw ConfigError(context_ + ": expected a JSON object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  void read(const std::string& key, T& out) {
    used_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!it->is_number_unsigned())
          throw ConfigError(context_ + ": key '" + key + "' must be a non-negative integer");
      } else if constexpr (std::is_same_v<T, double>) {
        if (!it->is_number()) throw ConfigError(context_ + ": key '" + key + "' must be a number");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError(context_ + ": key '" + key + "' must be a boolean");
      }
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(context_ + ": key '" + key + "': " + e.what());
    }
  }

  template <typename T>
  void require(const std::string& key, T& out) {
    if (!has(key)) throw ConfigError(context_ + ": missing required key '" + key + "'");
    read(key, out);
  }

  std::string read_string(const std::string& key, const std::string& fallback) {
    used_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return fallback;
    if (!it->is_string()) throw ConfigError(context_ + ": key '" + key + "' must be a string");
    return it->get<std::string>();
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ConfigError(context_ + ": unknown key '" + it.key() + "'");
  }

 private:
  const nlohmann::json& j_;
  std::string context_;
  std::set<std::string> used_;
};

inline nlohmann::json parse_json(const std::string& text, const std::string& context) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(context + ": invalid JSON: " + e.what());
  }
}

}  // namespace mfb::detail
