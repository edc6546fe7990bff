#pragma once

#include <stdexcept>
#include <string>

namespace localtb {

/// Raised when a precondition of an operation is violated by its inputs.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for invalid run configuration; maps to CLI exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw Error(what);
}

}  // namespace localtb
