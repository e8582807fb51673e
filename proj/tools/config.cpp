#include "config.hpp"

#include <fstream>

namespace vlfuse::cli {

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  RunConfig cfg;
  try {
    in >> cfg.doc_;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (!cfg.doc_.is_object()) throw ConfigError(path.string() + ": config must be a JSON object");
  cfg.base_ = path.parent_path();
  return cfg;
}

nlohmann::json::json_pointer RunConfig::pointer(const std::string& key) {
  if (key.empty()) throw ConfigError("empty config key");
  std::string p = "/";
  for (char ch : key) {
    if (ch == '.') {
      p += '/';
    } else if (ch == '~') {
      p += "~0";
    } else if (ch == '/') {
      p += "~1";
    } else {
      p += ch;
    }
  }
  return nlohmann::json::json_pointer(p);
}

void RunConfig::assign(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("expected key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  auto value = nlohmann::json::parse(text, nullptr, false);
  set(key, value.is_discarded() ? nlohmann::json(text) : value);
}

void RunConfig::set(const std::string& key, nlohmann::json value) {
  try {
    doc_[pointer(key)] = std::move(value);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot set '" + key + "': " + e.what());
  }
}

bool RunConfig::has(const std::string& key) const {
  const auto p = pointer(key);
  return doc_.contains(p) && !doc_.at(p).is_null();
}

const nlohmann::json& RunConfig::at(const std::string& key) const {
  const auto p = pointer(key);
  if (!doc_.contains(p)) throw ConfigError("missing config key '" + key + "'");
  return doc_.at(p);
}

std::filesystem::path RunConfig::resolve(const std::string& given) const {
  std::filesystem::path p(given);
  return p.is_absolute() || base_.empty() ? p : base_ / p;
}

std::filesystem::path RunConfig::path(const std::string& key) const { return resolve(require<std::string>(key)); }

std::optional<std::filesystem::path> RunConfig::optional_path(const std::string& key) const {
  if (!has(key)) return std::nullopt;
  return path(key);
}

}  // namespace vlfuse::cli
