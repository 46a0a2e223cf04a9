// SPDX-License-Identifier: Apache-2.0
//
// Deterministic execution harness: loads an image into a declared memory
// map, feeds an input stream through one read port and records the
// footprint up to a crash, a halt or the step limit.
#pragma once

#include "rca/footprint.hpp"
#include "rca/isa.hpp"
#include "rca/semantics.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rca {

struct Region {
  std::string name;
  std::uint32_t base = 0;
  std::uint32_t size = 0;
  bool readable = false;
  bool writable = false;
  bool executable = false;
  std::uint8_t fill = 0;

  bool contains(std::uint32_t addr, std::uint32_t width) const {
    return addr >= base && std::uint64_t(addr) + width <= std::uint64_t(base) + size;
  }
};

struct InputPort {
  std::uint32_t base = 0;
  std::uint32_t size = 0;
};

struct MemoryMap {
  std::vector<Region> regions;
  std::optional<InputPort> port;
  /// Hex address or a label of the image.
  std::string entry;
  std::uint32_t initial_sp = 0;
};

/// Parses the JSON memory-map config. Throws Error(Config).
MemoryMap parse_memory_map(std::string_view json_text);
MemoryMap load_memory_map(const std::string &path);

/// Flash at 0x08000000 (rx), RAM at 0x20000000 (rw, 64 KiB), input port at
/// 0x40000000, SP at the top of RAM, entry at label `main` if present.
MemoryMap default_memory_map();

enum class RunOutcome : std::uint8_t { Crashed, Exited, StepLimit };

std::string_view outcome_name(RunOutcome o);

/// One executed step as seen by a test observer: the complete machine state
/// before and after, every access, and which registers were touched.
struct StepRecord {
  std::uint64_t trace_index = 0;
  const DecodedInstr *instr = nullptr;
  MachineState before;
  MachineState after;
  std::vector<MemoryAccess> accesses;
  StepTrace touched;
  bool faulted = false;
};

struct RunOptions {
  bool emit_events = true;
  std::function<void(const StepRecord &)> on_step;
};

struct RunResult {
  Footprint footprint;
  RunOutcome outcome = RunOutcome::StepLimit;
  MachineState final_state;
  std::uint64_t steps = 0;
};

/// Throws Error(Config) for an unusable map or entry; crashes are outcomes.
RunResult run(const Image &image, const MemoryMap &map,
              std::span<const std::uint8_t> stimulus, std::uint64_t max_steps,
              const RunOptions &options = {});

/// True iff rerunning on the same inputs reproduces the footprint byte for
/// byte.
bool replay_check(const Image &image, const MemoryMap &map,
                  std::span<const std::uint8_t> stimulus,
                  const Footprint &footprint);

} // namespace rca
