#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace s2fuse {

/// Flat `section.key = value` text. '#' starts a comment; blank lines are
/// ignored; duplicate keys are an error.
class Config {
 public:
  static Config parse(const std::string& text);
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get(const std::string& key, const std::string& fallback) const;
  std::string require(const std::string& key) const;
  long long get_int(const std::string& key, long long fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  /// Comma-separated list; empty items dropped.
  std::vector<std::string> get_list(const std::string& key) const;

  /// Throws ParameterError naming every key outside `known`.
  void reject_unknown(const std::set<std::string>& known) const;

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, int> lines_;
};

}  // namespace s2fuse
