#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

// Flat `key = value` configuration text. Blank lines and lines starting
// with '#' are skipped; keys may not repeat.

namespace mars::config {

class KeyValues {
 public:
  static KeyValues parse(const std::string& text);
  static KeyValues read_file(const std::string& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;
  std::vector<std::string> keys() const;  // sorted

  std::optional<std::string> get(const std::string& key) const;
  std::optional<double> get_double(const std::string& key) const;
  std::optional<std::int64_t> get_int(const std::string& key) const;

  std::string render() const;  // canonical key-sorted text form

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace mars::config
