#include "s2fuse/config.hpp"

#include <cctype>
#include <charconv>
#include <sstream>

#include "s2fuse/errors.hpp"
#include "s2fuse/raster_io.hpp"

namespace s2fuse {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool valid_key(const std::string& k) {
  const auto dot = k.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == k.size()) return false;
  for (char c : k)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.')) return false;
  return true;
}

}  // namespace

Config Config::parse(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParameterError("config line " + std::to_string(lineno) + ": expected 'section.key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!valid_key(key))
      throw ParameterError("config line " + std::to_string(lineno) + ": malformed key '" + key + "'");
    if (cfg.values_.count(key))
      throw ParameterError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "' (first on line " +
                           std::to_string(cfg.lines_[key]) + ")");
    cfg.values_[key] = value;
    cfg.lines_[key] = lineno;
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) { return parse(read_file(path)); }

std::string Config::get(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::string Config::require(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end() || it->second.empty()) throw ParameterError("config: missing required key '" + key + "'");
  return it->second;
}

long long Config::get_int(const std::string& key, long long fallback) const {
  if (!has(key)) return fallback;
  const std::string& v = values_.at(key);
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ParameterError("config: '" + key + "' must be an integer, got '" + v + "'");
  return out;
}

double Config::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  const std::string& v = values_.at(key);
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw ParameterError("config: '" + key + "' must be a number, got '" + v + "'");
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string& v = values_.at(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ParameterError("config: '" + key + "' must be a boolean, got '" + v + "'");
}

std::vector<std::string> Config::get_list(const std::string& key) const {
  std::vector<std::string> out;
  std::istringstream in(get(key, ""));
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void Config::reject_unknown(const std::set<std::string>& known) const {
  std::string bad;
  for (const auto& [k, v] : values_)
    if (!known.count(k)) bad += (bad.empty() ? "" : ", ") + k + " (line " + std::to_string(lines_.at(k)) + ")";
  if (!bad.empty()) throw ParameterError("config: unknown keys: " + bad);
}

}  // namespace s2fuse
