#pragma once

#include <stdexcept>
#include <string>

namespace dgr {

/// Input files or records that cannot be parsed.
class ParseError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Well-formed input that violates a documented invariant.
class ValidationError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Bad experiment configuration; maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

}  // namespace dgr
