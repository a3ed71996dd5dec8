#include "mars/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mars/errors.hpp"

namespace mars::config {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

KeyValues KeyValues::parse(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected key = value");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": empty key");
    }
    if (kv.values_.count(key)) {
      throw ConfigError("config: duplicate key " + key);
    }
    kv.values_[key] = value;
  }
  return kv;
}

KeyValues KeyValues::read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

void KeyValues::set(const std::string& key, const std::string& value) {
  values_[key] = value;
}

bool KeyValues::has(const std::string& key) const {
  return values_.count(key) != 0;
}

std::vector<std::string> KeyValues::keys() const {
  std::vector<std::string> out;
  out.reserve(values_.size());
  for (const auto& [k, v] : values_) out.push_back(k);
  return out;
}

std::optional<std::string> KeyValues::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::optional<double> KeyValues::get_double(const std::string& key) const {
  auto s = get(key);
  if (!s) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(s->c_str(), &end);
  if (end == s->c_str() || *end != '\0') {
    throw ConfigError("config: " + key + " = " + *s + " is not a number");
  }
  return v;
}

std::optional<std::int64_t> KeyValues::get_int(const std::string& key) const {
  auto s = get(key);
  if (!s) return std::nullopt;
  char* end = nullptr;
  const long long v = std::strtoll(s->c_str(), &end, 10);
  if (end == s->c_str() || *end != '\0') {
    throw ConfigError("config: " + key + " = " + *s + " is not an integer");
  }
  return static_cast<std::int64_t>(v);
}

std::string KeyValues::render() const {
  std::ostringstream out;
  for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
  return out.str();
}

}  // namespace mars::config
