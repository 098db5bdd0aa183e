#pragma once

#include <stdexcept>
#include <string>

namespace fstd {

// Exit-code families used by the CLI: config/validation -> 2, numeric -> 3.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fstd
