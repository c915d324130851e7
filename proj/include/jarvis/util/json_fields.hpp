#pragma once

#include "jarvis/numerics/errors.hpp"

#include <nlohmann/json.hpp>

#include <set>
#include <string>

namespace jarvis {

/// Reads optional keys out of a JSON object and rejects any key that was
/// never asked for. `path` prefixes error messages ("model.heads").
class FieldReader {
 public:
  FieldReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("'" + path_ + "' must be an object");
  }

  template <typename T>
  bool read(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return false;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("'" + qualified(key) + "': " + e.what());
    }
    return true;
  }

  const nlohmann::json* sub(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (seen_.count(it.key()) == 0) throw ConfigError("unknown key '" + qualified(it.key()) + "'");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace jarvis
