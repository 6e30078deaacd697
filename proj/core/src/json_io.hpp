#pragma once

// Internal: strict JSON conversion for the configuration structs. Unknown
// keys are rejected; missing keys keep their defaults.

#include <set>
#include <string>

#include <json.hpp>

#include "yoho/error.hpp"
#include "yoho/image.hpp"

namespace yoho::detail {

using nlohmann::json;

class StrictReader {
 public:
  StrictReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw Error(ErrorCode::InvalidConfig, where_ + " must be an object");
  }

  template <class T>
  StrictReader& get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return *this;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidConfig, where_ + "." + key + ": " + e.what());
    }
    return *this;
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw Error(ErrorCode::InvalidConfig, "unknown key '" + where_ + "." + key + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline json size_to_json(Size2 s) { return json::array({s.height, s.width}); }

inline Size2 size_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer()) {
    throw Error(ErrorCode::InvalidConfig, where + " must be [height, width]");
  }
  return {j[0].get<int>(), j[1].get<int>()};
}

}  // namespace yoho::detail
