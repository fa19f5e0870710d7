#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace calkit {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed JSON or a field of the wrong JSON type. Line numbers are 1-based;
// 0 means "not read from a file".
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& message)
      : Error(line ? "line " + std::to_string(line) + ": " + message : message), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Well-formed input that violates a record invariant.
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& message, std::size_t line = 0)
      : Error((line ? "line " + std::to_string(line) + ": " : std::string()) + field + ": " + message),
        field_(std::move(field)),
        line_(line) {}
  const std::string& field() const noexcept { return field_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string field_;
  std::size_t line_;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// Anything that went wrong talking to a model.
class ClientError : public Error {
 public:
  using Error::Error;
};

class TransportError : public ClientError {
 public:
  using ClientError::ClientError;
};

// The server answered but cannot provide what was asked (e.g. no logprobs).
class CapabilityError : public ClientError {
 public:
  using ClientError::ClientError;
};

class PartialResultError : public ClientError {
 public:
  PartialResultError(const std::string& message, std::vector<std::string> received)
      : ClientError(message), received_(std::move(received)) {}
  const std::vector<std::string>& received() const noexcept { return received_; }

 private:
  std::vector<std::string> received_;
};

// A pipeline finished but some of its cells/records could not be computed.
class IncompleteError : public Error {
 public:
  using Error::Error;
};

}  // namespace calkit
