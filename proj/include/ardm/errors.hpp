#pragma once

#include <stdexcept>
#include <string>

namespace ardm {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input text (CSV, sidecar metadata). Carries a 1-based line
// number when the offending position is known.
class ParseError : public Error {
public:
  explicit ParseError(const std::string& msg, long line = 0)
      : Error(line > 0 ? msg + " (line " + std::to_string(line) + ")" : msg),
        line_(line) {}
  long line() const noexcept { return line_; }

private:
  long line_ = 0;
};

// Data violates a domain contract (missing subject ids, bad flags, ...).
class DomainError : public Error {
public:
  using Error::Error;
};

// Bad definitions: parameter schemas, grammar order, schema versions.
class SchemaError : public Error {
public:
  using Error::Error;
};

class StoreError : public Error {
public:
  using Error::Error;
};

// Another writer holds the store.
class LockError : public StoreError {
public:
  using StoreError::StoreError;
};

class NotFoundError : public Error {
public:
  using Error::Error;
};

// An analysis run failed; nothing was stored for it.
class RunError : public Error {
public:
  using Error::Error;
};

class RenderError : public Error {
public:
  using Error::Error;
};

class ArgumentError : public Error {
public:
  using Error::Error;
};

}  // namespace ardm
