#pragma once

#include <stdexcept>
#include <string>

namespace fathom {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A precondition on call order or argument kind was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed data: non-binary labels, duplicate timestamps, empty tables.
class DataError : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A task node could not deliver its contribution to a synchronous round.
class StragglerError : public Error {
 public:
  StragglerError(std::size_t node_id, const std::string& why)
      : Error("node " + std::to_string(node_id) + " unavailable: " + why), node_id_(node_id) {}
  std::size_t node_id() const noexcept { return node_id_; }

 private:
  std::size_t node_id_;
};

}  // namespace fathom
