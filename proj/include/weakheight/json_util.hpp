#pragma once

#include <set>
#include <string>
#include <string_view>

#include <json.hpp>

#include "weakheight/errors.hpp"

namespace weakheight::jsonutil {

using json = nlohmann::json;

/// Throws ConfigError if `obj` is not an object or has keys outside `allowed`.
inline void require_keys_within(const json& obj, const std::set<std::string_view>& allowed,
                                const std::string& context) {
  if (!obj.is_object()) throw ConfigError(context + ": expected a JSON object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.contains(key)) throw ConfigError(context + ": unknown key '" + key + "'");
  }
}

/// Overwrites `field` when `key` is present; type mismatches become ConfigError.
template <typename T>
void read_optional(const json& obj, const char* key, T& field, const std::string& context) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    field = it->template get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(context + "." + key + ": " + e.what());
  }
}

}  // namespace weakheight::jsonutil
