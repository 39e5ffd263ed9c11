#ifndef FRESH_CONFIG_FILE_H_
#define FRESH_CONFIG_FILE_H_

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace fresh {

inline constexpr int kConfigVersion = 1;

// Versioned key-value file:
//
//   # comment
//   version = 1
//   train.epochs = 20
//
// The version line is mandatory. Every key read through the typed getters is
// recorded so unknown (misspelt) keys can be reported afterwards.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(std::string_view text);
  static KeyValueConfig load(const std::string& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long get_int(const std::string& key, long fallback) const;
  std::vector<double> get_doubles(const std::string& key,
                                  const std::vector<double>& fallback) const;
  std::vector<std::uint64_t> get_uints(const std::string& key,
                                       const std::vector<std::uint64_t>& fallback) const;

  // Keys present in the file but never read.
  std::vector<std::string> unused_keys() const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> read_;
};

}  // namespace fresh

#endif  // FRESH_CONFIG_FILE_H_
