#pragma once

#include <stdexcept>
#include <string>

namespace mpenssar {

// Error categories map onto the CLI exit codes: config 2, numeric 3, io 4.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid inputs, violated preconditions, malformed configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Singular systems, factorization failures, dimension caps blown at runtime.
class NumericError : public Error {
 public:
  using Error::Error;
};

// File system and parse failures.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mpenssar
