#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace deta {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class DegenerateVector : public Error {
public:
  using Error::Error;
};

class InvalidParameter : public Error {
public:
  using Error::Error;
};

class OracleFailure : public Error {
public:
  using Error::Error;
};

class ParseError : public Error {
public:
  using Error::Error;
};

class SchemaError : public Error {
public:
  using Error::Error;
};

class MissingWeight : public Error {
public:
  using Error::Error;
};

class EmptyClass : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

/// Non-finite loss or gradient during adaptation. `iteration` is 1-based;
/// 0 means the failure happened outside the adaptation loop.
class DivergenceError : public Error {
public:
  DivergenceError(const std::string& what, std::size_t iteration)
      : Error(what), iteration_(iteration) {}

  std::size_t iteration() const noexcept { return iteration_; }

private:
  std::size_t iteration_;
};

}  // namespace deta
