#pragma once

#include <stdexcept>
#include <string>

namespace dcnet {

// Shapes that do not compose (tensor ranks, conv geometry, layer chaining).
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A scalar argument outside the domain of a formula (rho <= 0, theta > pi).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// NaN/Inf produced or consumed, zero-norm rows where a direction is needed.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed dataset or checkpoint bytes.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Caller broke a calling protocol, e.g. backward without a matching forward.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Bad user data such as an out-of-range class label.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace dcnet
