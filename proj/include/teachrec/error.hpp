#pragma once

#include <stdexcept>
#include <string>

namespace teachrec {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input logs. The message carries file:line when known.
class IngestError : public Error {
 public:
  using Error::Error;
};

/// A precondition on an operation's arguments was violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Feature vector or model built against a different feature schema.
class SchemaMismatch : public Error {
 public:
  using Error::Error;
};

/// Serialized payload could not be decoded.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace teachrec
