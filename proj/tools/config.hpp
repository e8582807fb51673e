#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace vlfuse::cli {

/// Bad or missing configuration; the command exits with status 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inputs that exist but fail validation, or a metric below its expected floor; status 1.
class ValidationFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A run's configuration: one JSON document. Keys may be dotted ("oracle.top_n")
/// to reach nested objects. Relative paths resolve against the config file's directory.
class RunConfig {
 public:
  RunConfig() = default;
  static RunConfig from_file(const std::filesystem::path& path);

  /// "key=value"; value is parsed as JSON when possible and kept as a string otherwise.
  void assign(const std::string& assignment);
  void set(const std::string& key, nlohmann::json value);

  bool has(const std::string& key) const;
  const nlohmann::json& at(const std::string& key) const;

  template <typename T>
  T get(const std::string& key, T fallback) const {
    return has(key) ? convert<T>(key) : fallback;
  }

  template <typename T>
  T require(const std::string& key) const {
    if (!has(key)) throw ConfigError("missing config key '" + key + "'");
    return convert<T>(key);
  }

  std::filesystem::path path(const std::string& key) const;
  std::optional<std::filesystem::path> optional_path(const std::string& key) const;
  std::filesystem::path resolve(const std::string& given) const;

  const nlohmann::json& doc() const noexcept { return doc_; }

 private:
  template <typename T>
  T convert(const std::string& key) const {
    try {
      return at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config key '" + key + "' has the wrong type: " + at(key).dump());
    }
  }

  static nlohmann::json::json_pointer pointer(const std::string& key);

  nlohmann::json doc_ = nlohmann::json::object();
  std::filesystem::path base_;
};

}  // namespace vlfuse::cli
