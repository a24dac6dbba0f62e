#pragma once

#include <stdexcept>
#include <string>

namespace a2kt {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// Violated precondition on an otherwise well-formed call.
class ContractError : public Error {
 public:
  using Error::Error;
};

}  // namespace a2kt
