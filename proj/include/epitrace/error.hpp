#pragma once

#include <stdexcept>
#include <string>

namespace epitrace {

// Process exit codes shared by every CLI subcommand.
enum class ExitCode : int {
  kSuccess = 0,
  kFailure = 1,
  kValidation = 2,
  kTransport = 3,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept { return ExitCode::kFailure; }
};

// Malformed input document. `field` names the first offending field.
class ParseError : public Error {
 public:
  ParseError(std::string field, const std::string& what)
      : Error("parse error at '" + field + "': " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }
  ExitCode exit_code() const noexcept override { return ExitCode::kValidation; }

 private:
  std::string field_;
};

// Well-formed document that violates a structural invariant.
class StructuralError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kValidation; }
};

// Argument outside an operation's domain (k > n, zero variance, ...).
class DomainError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kValidation; }
};

class ValidationError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kValidation; }
};

class TransportError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kTransport; }
};

// Annotator kept returning output that does not parse into the stage schema.
class AnnotationError : public Error {
 public:
  AnnotationError(const std::string& what, std::string raw_response)
      : Error(what), raw_response_(std::move(raw_response)) {}
  const std::string& raw_response() const noexcept { return raw_response_; }

 private:
  std::string raw_response_;
};

class FitError : public Error {
 public:
  FitError(const std::string& what, int iteration)
      : Error(what + " (iteration " + std::to_string(iteration) + ")"), iteration_(iteration) {}
  int iteration() const noexcept { return iteration_; }

 private:
  int iteration_;
};

class SamplingError : public Error {
 public:
  using Error::Error;
};

class InterventionError : public Error {
 public:
  using Error::Error;
};

}  // namespace epitrace
