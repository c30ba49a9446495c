#pragma once

#include <stdexcept>
#include <string>

namespace moesim {

// Invalid model, hardware, or policy configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed trace, config, or report file.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Violated simulator precondition (a bug in the caller, not bad input).
class SimError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace moesim
