#include "fresh/config_file.h"

#include <charconv>
#include <fstream>
#include <sstream>

#include "fresh/error.h"

namespace fresh {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw Error(ErrorKind::kConfig, "key '" + key + "': not a number: " + v);
  }
}

long to_long(const std::string& key, const std::string& v) {
  long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw Error(ErrorKind::kConfig, "key '" + key + "': not an integer: " + v);
  }
  return out;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::string_view text) {
  KeyValueConfig cfg;
  std::stringstream ss{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  bool saw_version = false;
  while (std::getline(ss, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::kConfig,
                  "config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    if (key == "version") {
      if (to_long(key, value) != kConfigVersion) {
        throw Error(ErrorKind::kConfig, "unsupported config version " + value);
      }
      saw_version = true;
      continue;
    }
    if (cfg.values_.count(key)) {
      throw Error(ErrorKind::kConfig, "duplicate config key '" + key + "'");
    }
    cfg.values_[key] = value;
  }
  if (!saw_version) throw Error(ErrorKind::kConfig, "config is missing 'version = 1'");
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot read config " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  values_[key] = value;
}

bool KeyValueConfig::has(const std::string& key) const {
  return values_.count(key) > 0;
}

std::string KeyValueConfig::get_string(const std::string& key,
                                       const std::string& fallback) const {
  read_.insert(key);
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  read_.insert(key);
  auto it = values_.find(key);
  return it == values_.end() ? fallback : to_double(key, it->second);
}

long KeyValueConfig::get_int(const std::string& key, long fallback) const {
  read_.insert(key);
  auto it = values_.find(key);
  return it == values_.end() ? fallback : to_long(key, it->second);
}

std::vector<double> KeyValueConfig::get_doubles(
    const std::string& key, const std::vector<double>& fallback) const {
  read_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<double> out;
  for (const auto& item : split_list(it->second)) out.push_back(to_double(key, item));
  return out;
}

std::vector<std::uint64_t> KeyValueConfig::get_uints(
    const std::string& key, const std::vector<std::uint64_t>& fallback) const {
  read_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(it->second)) {
    const long v = to_long(key, item);
    if (v < 0) throw Error(ErrorKind::kConfig, "key '" + key + "': negative value");
    out.push_back(static_cast<std::uint64_t>(v));
  }
  return out;
}

std::vector<std::string> KeyValueConfig::unused_keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_) {
    if (!read_.count(k)) out.push_back(k);
  }
  return out;
}

}  // namespace fresh
