#pragma once

// Line-oriented "key = value" run configuration with '#' comments. Entries
// keep insertion order so a round-trip through serialize() is stable.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace hpm {

class Config {
 public:
  void set(const std::string& key, const std::string& value);
  void set_int(const std::string& key, std::int64_t v);
  void set_double(const std::string& key, double v);
  void set_bool(const std::string& key, bool v);

  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;  // throws on missing key
  std::string get_or(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;  // on/off, true/false, 1/0

  std::string serialize() const;
  static Config parse(const std::string& text);
  static Config load(const std::string& path);
  void save(const std::string& path) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace hpm
