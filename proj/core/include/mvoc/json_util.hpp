#pragma once

#include <json.hpp>

#include <initializer_list>
#include <stdexcept>
#include <string>

namespace mvoc {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Rejects unknown keys so config typos fail loudly.
inline void check_keys(const nlohmann::json& j, const std::string& ctx,
                       std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(ctx + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok) throw ConfigError(ctx + ": unknown key '" + it.key() + "'");
  }
}

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("field '") + key + "': " + e.what());
  }
}

// Structural validation against the JSON Schema subset used by the files in
// schemas/: type, properties, required, additionalProperties, items,
// minItems, enum.
inline void validate_schema(const nlohmann::json& inst, const nlohmann::json& schema,
                            const std::string& where = "$") {
  auto fail = [&](const std::string& msg) { throw ConfigError(where + ": " + msg); };
  const std::string type = schema.value("type", "");
  if (type == "object") {
    if (!inst.is_object()) fail("expected an object");
    if (schema.contains("required"))
      for (const auto& k : schema.at("required"))
        if (!inst.contains(k.get<std::string>()))
          fail("missing key '" + k.get<std::string>() + "'");
    const nlohmann::json props = schema.value("properties", nlohmann::json::object());
    const bool extra_ok = schema.value("additionalProperties", true);
    for (auto it = inst.begin(); it != inst.end(); ++it) {
      if (props.contains(it.key()))
        validate_schema(it.value(), props.at(it.key()), where + "." + it.key());
      else if (!extra_ok)
        fail("unexpected key '" + it.key() + "'");
    }
  } else if (type == "array") {
    if (!inst.is_array()) fail("expected an array");
    if (schema.contains("minItems") && inst.size() < schema.at("minItems").get<std::size_t>())
      fail("fewer than minItems entries");
    if (schema.contains("items")) {
      std::size_t i = 0;
      for (const auto& v : inst)
        validate_schema(v, schema.at("items"), where + "[" + std::to_string(i++) + "]");
    }
  } else if (type == "string") {
    if (!inst.is_string()) fail("expected a string");
  } else if (type == "integer") {
    if (!inst.is_number_integer() && !inst.is_number_unsigned()) fail("expected an integer");
  } else if (type == "number") {
    if (!inst.is_number()) fail("expected a number");
  } else if (type == "boolean") {
    if (!inst.is_boolean()) fail("expected a boolean");
  } else if (!type.empty()) {
    fail("schema uses unsupported type '" + type + "'");
  }
  if (schema.contains("enum")) {
    bool hit = false;
    for (const auto& v : schema.at("enum")) hit = hit || v == inst;
    if (!hit) fail("value not in enum");
  }
}

}  // namespace mvoc
