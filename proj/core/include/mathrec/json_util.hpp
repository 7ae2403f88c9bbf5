// SPDX-License-Identifier: Apache-2.0
//
// Strict reading of JSON config objects: every key must be known and
// typed correctly, and errors name the offending dotted field.
#pragma once

#include <nlohmann/json.hpp>

#include <set>
#include <string>

#include "mathrec/errors.hpp"

namespace mathrec {

class JsonFields {
 public:
  JsonFields(const nlohmann::json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw Error(ErrorKind::ConfigError, where() + ": expected an object");
  }

  /// Reads `key` into `out` when present; leaves the default otherwise.
  template <class T>
  bool get(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end() || it->is_null()) return false;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::ConfigError, field(key) + ": wrong type (" + e.what() + ")");
    }
    return true;
  }

  template <class T>
  void require(const std::string& key, T& out) {
    if (!get(key, out)) throw Error(ErrorKind::ConfigError, field(key) + ": required field missing");
  }

  /// Sub-object for nested parsing, or nullptr when absent.
  const nlohmann::json* child(const std::string& key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() || it->is_null() ? nullptr : &*it;
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  /// Throws on keys that were never read.
  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.contains(it.key())) throw Error(ErrorKind::ConfigError, field(it.key()) + ": unknown field");
    }
  }

  [[noreturn]] void fail(const std::string& key, const std::string& message) const {
    throw Error(ErrorKind::ConfigError, field(key) + ": " + message);
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const nlohmann::json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

/// Applies `dotted.key=value` onto a JSON document. The value is parsed as
/// JSON when possible and kept as a string otherwise.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error(ErrorKind::ConfigError, "override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw Error(ErrorKind::ConfigError, "override key '" + key + "' has an empty component");
    if (!node->is_object()) throw Error(ErrorKind::ConfigError, "override key '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = nlohmann::json::object();
    start = dot + 1;
  }
}

}  // namespace mathrec
