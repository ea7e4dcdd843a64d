#pragma once

// Reads known keys of a JSON object into typed fields and collects one
// message per type error or unknown key, so a whole config can be reported at once.

#include <json.hpp>

#include <set>
#include <string>
#include <vector>

namespace vlaforge::detail {

class FieldReader {
 public:
  FieldReader(const nlohmann::json& object, std::string prefix, std::vector<std::string>& problems)
      : object_(object), prefix_(std::move(prefix)), problems_(problems) {
    if (!object_.is_object()) {
      problems_.push_back(name_of("") + " must be an object");
    }
  }

  FieldReader(const FieldReader&) = delete;
  FieldReader& operator=(const FieldReader&) = delete;

  ~FieldReader() {
    if (!object_.is_object()) {
      return;
    }
    for (const auto& item : object_.items()) {
      if (!known_.count(item.key())) {
        problems_.push_back("unknown key " + name_of(item.key()));
      }
    }
  }

  template <typename T>
  FieldReader& field(const std::string& key, T& out) {
    known_.insert(key);
    if (!object_.is_object() || !object_.contains(key)) {
      return *this;
    }
    try {
      out = object_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      problems_.push_back(name_of(key) + " has the wrong type");
    }
    return *this;
  }

  // Marks a key as handled elsewhere (nested objects).
  FieldReader& known(const std::string& key) {
    known_.insert(key);
    return *this;
  }

  bool has(const std::string& key) const { return object_.is_object() && object_.contains(key); }
  const nlohmann::json& at(const std::string& key) const { return object_.at(key); }
  std::string name_of(const std::string& key) const {
    if (prefix_.empty()) return key.empty() ? "config" : key;
    if (key.empty()) return prefix_;
    return prefix_ + "." + key;
  }

 private:
  const nlohmann::json& object_;
  std::string prefix_;
  std::vector<std::string>& problems_;
  std::set<std::string> known_;
};

}  // namespace vlaforge::detail
