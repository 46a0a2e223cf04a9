// SPDX-License-Identifier: Apache-2.0
//
// The footprint: action and data events of one crash reproduction, and the
// JSONL file format they are persisted in.
#pragma once

#include "rca/isa.hpp"
#include "rca/semantics.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace rca {

inline constexpr std::string_view kFootprintFormat = "trace-rca/1";

struct ActionEvent {
  std::uint64_t trace_index = 0;
  std::uint32_t pc = 0;

  bool operator==(const ActionEvent &) const = default;
};

struct DataEvent {
  std::uint64_t trace_index = 0;
  std::uint32_t pc = 0;
  AccessKind kind = AccessKind::Read;
  std::uint32_t addr = 0;
  std::uint8_t width = 4;
  std::uint32_t value = 0;

  bool operator==(const DataEvent &) const = default;
};

enum class CrashReason : std::uint8_t {
  InvalidMemoryRead,
  InvalidMemoryWrite,
  InvalidInstructionExecution,
};

std::string_view reason_code(CrashReason r); // "imr", "imw", "iie"

/// How PC got its bad value in an execution crash.
struct Culprit {
  enum class Kind : std::uint8_t { ExplicitPop, ImplicitRegister, SequentialOverrun };
  Kind kind = Kind::SequentialOverrun;
  std::uint32_t stack_addr = 0; // ExplicitPop
  Reg reg = Reg::R0;            // ImplicitRegister

  bool operator==(const Culprit &) const = default;
};

struct CrashDescriptor {
  CrashReason reason = CrashReason::InvalidMemoryRead;
  std::uint64_t trace_index = 0;
  std::uint32_t pc = 0;
  /// Faulting address for memory crashes, the bad target pc for execution
  /// crashes.
  std::uint32_t fault_addr = 0;
  std::optional<Culprit> culprit;

  bool operator==(const CrashDescriptor &) const = default;
};

struct Footprint {
  std::string image; // hex SHA-256 of the image source
  std::uint32_t entry = 0;
  std::vector<ActionEvent> actions;
  std::vector<DataEvent> data;
  std::optional<CrashDescriptor> crash;

  bool operator==(const Footprint &) const = default;
};

/// For each action (by position), the half-open range of its data events.
std::vector<std::pair<std::size_t, std::size_t>>
data_spans(const Footprint &fp);

/// Throws FootprintError(InvariantViolation) naming the first broken rule.
void validate(const Footprint &fp);

std::size_t write_footprint(const Footprint &fp, std::ostream &out);
std::string footprint_to_string(const Footprint &fp);
void save_footprint(const Footprint &fp, const std::string &path);

Footprint parse_footprint(std::istream &in);
Footprint parse_footprint(std::string_view text);
Footprint load_footprint(const std::string &path);

/// The last n actions with their data events and the crash record. Trace
/// indices keep their original values.
Footprint slice_last(const Footprint &fp, std::size_t n);

} // namespace rca
