// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace rca {

/// Machine-readable error classes. The string form is what the CLI prints
/// and what scripts match on, so the spelling is part of the interface.
enum class ErrorCode {
  Syntax,
  DuplicateLabel,
  UnresolvedLabel,
  OverlappingPlacement,
  Config,
  Io,
  UnsupportedVersion,
  MalformedLine,
  InvariantViolation,
  MissingInstruction,
  EventArityMismatch,
  InconsistentEvidence,
  UnresolvedMemory,
  UnsupportedCrashShape,
  MissingCrashRecord,
  ImageMismatch,
  OutOfRange,
};

const char *error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string &message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

private:
  ErrorCode code_;
};

/// Assembler diagnostics carry the 1-based source line.
class AsmError : public Error {
public:
  AsmError(ErrorCode code, std::size_t line, const std::string &message)
      : Error(code, "line " + std::to_string(line) + ": " + message),
        line_(line) {}

  std::size_t line() const { return line_; }

private:
  std::size_t line_;
};

/// Footprint parse errors; line is 1-based, 0 when not tied to a line.
class FootprintError : public Error {
public:
  FootprintError(ErrorCode code, std::size_t line, const std::string &message)
      : Error(code, line ? "line " + std::to_string(line) + ": " + message
                         : message),
        line_(line) {}

  std::size_t line() const { return line_; }

private:
  std::size_t line_;
};

/// Raised by recovery when two pieces of evidence disagree on one value.
class InconsistentEvidence : public Error {
public:
  InconsistentEvidence(std::int64_t node, const std::string &message)
      : Error(ErrorCode::InconsistentEvidence, message), node_(node) {}

  /// Offending chain node, or -1 when raised outside a chain.
  std::int64_t node() const { return node_; }

private:
  std::int64_t node_;
};

} // namespace rca
