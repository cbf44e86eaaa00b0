#pragma once

#include <cstdio>
#include <initializer_list>
#include <string>
#include <string_view>

#include "battta/errors.hpp"
#include "json.hpp"

namespace battta {

// Throws ConfigError when `j` is not an object or holds a key outside `allowed`.
inline void require_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                         std::string_view context) {
  if (!j.is_object()) throw ConfigError(std::string(context) + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (auto a : allowed) known = known || a == key;
    if (!known) throw ConfigError(std::string(context) + ": unknown key '" + key + "'");
  }
}

// Reads j[key] into `out` when present; type mismatches become ConfigError.
template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

// Fixed-point text for CSV cells.
inline std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace battta
