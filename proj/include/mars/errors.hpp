#pragma once

#include <stdexcept>
#include <string>

namespace mars {

// Bad input data (malformed files, violated invariants). CLI maps this to
// exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mars
