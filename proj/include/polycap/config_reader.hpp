#pragma once

#include "polycap/error.hpp"

#include <json.hpp>

#include <set>
#include <string>

namespace polycap {

/// Reads optional fields from a JSON object and rejects keys nobody asked for.
class ConfigReader {
 public:
  ConfigReader(const nlohmann::json& j, std::string context) : j_(j), context_(std::move(context)) {
    if (!j_.is_object()) fail(ErrorCode::InvalidConfig, context_ + " must be a JSON object");
  }

  template <class T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::InvalidConfig, context_ + "." + key + ": " + e.what());
    }
  }

  /// Sub-object for nested sections; missing sections yield an empty object.
  nlohmann::json section(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) return nlohmann::json::object();
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) fail(ErrorCode::InvalidConfig, "unknown key " + context_ + "." + key);
    }
  }

 private:
  const nlohmann::json& j_;
  std::string context_;
  std::set<std::string> seen_;
};

}  // namespace polycap
