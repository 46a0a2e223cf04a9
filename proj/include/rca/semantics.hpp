// SPDX-License-Identifier: Apache-2.0
//
// Forward execution, operand use/define extraction and the per-class
// inverse relations that reverse execution is built on.
#pragma once

#include "rca/isa.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace rca {

struct MachineState {
  std::array<std::uint32_t, kNumLocations> regs{};
  std::uint64_t steps = 0;

  std::uint32_t &operator[](Reg r) { return regs[reg_index(r)]; }
  std::uint32_t operator[](Reg r) const { return regs[reg_index(r)]; }

  bool operator==(const MachineState &) const = default;
};

// APSR flag bits.
inline constexpr std::uint32_t kFlagN = 1u << 31;
inline constexpr std::uint32_t kFlagZ = 1u << 30;
inline constexpr std::uint32_t kFlagC = 1u << 29;
inline constexpr std::uint32_t kFlagV = 1u << 28;

bool condition_passed(Cond c, std::uint32_t apsr);

enum class AccessKind : std::uint8_t { Read, Write };

struct MemoryAccess {
  AccessKind kind = AccessKind::Read;
  std::uint32_t addr = 0;
  std::uint8_t width = 4;
  std::uint32_t value = 0;

  bool operator==(const MemoryAccess &) const = default;
};

/// Memory as seen by one instruction. A failed read or write is reported
/// by returning nullopt / false; the caller turns it into a fault.
class MemoryBus {
public:
  virtual ~MemoryBus() = default;
  virtual std::optional<std::uint32_t> read(std::uint32_t addr,
                                            std::uint8_t width) = 0;
  virtual bool write(std::uint32_t addr, std::uint8_t width,
                     std::uint32_t value) = 0;
  virtual bool executable(std::uint32_t) const { return true; }
};

struct StepFault {
  enum class Kind : std::uint8_t { UnmappedAccess, MisalignedStack, UndecodableFetch };
  Kind kind = Kind::UnmappedAccess;
  std::uint32_t addr = 0;
  std::uint8_t width = 0;
  AccessKind access = AccessKind::Read;
};

/// Which registers one step read and wrote, as bit masks over Reg.
/// Sequential PC advance is not a read of PC.
struct StepTrace {
  std::uint32_t reads = 0;
  std::uint32_t writes = 0;
};

struct StepOutcome {
  MachineState state;
  std::vector<MemoryAccess> accesses;
  std::optional<StepFault> fault;
};

/// Executes one instruction. On a fault the returned state equals the input
/// state and no accesses are reported: a faulting instruction commits
/// nothing.
StepOutcome step_forward(const MachineState &state, const DecodedInstr &instr,
                         MemoryBus &bus, StepTrace *trace = nullptr);

/// Fetch check: the instruction at pc, or an UndecodableFetch fault when pc
/// is not executable or holds no instruction.
struct FetchResult {
  const DecodedInstr *instr = nullptr;
  std::optional<StepFault> fault;
};

FetchResult fetch(const Image &image, const MemoryBus &bus, std::uint32_t pc);

// ---------------------------------------------------------------------------
// Use/define extraction.

enum class Origin : std::uint8_t { ExplicitOperand, BaseRegister, IndexRegister, Implicit };

std::string_view origin_name(Origin o);

/// A memory location in terms of the pre-state registers:
/// base + (index << shift) + disp.
struct MemSlot {
  Reg base = Reg::R0;
  std::optional<Reg> index;
  std::uint8_t shift = 0;
  std::int32_t disp = 0;
  std::uint8_t width = 4;

  bool operator==(const MemSlot &) const = default;
};

struct Location {
  bool is_mem = false;
  Reg reg = Reg::R0;
  MemSlot mem;

  static Location of(Reg r) { return Location{false, r, {}}; }
  static Location of(const MemSlot &m) { return Location{true, Reg::R0, m}; }

  bool operator==(const Location &) const = default;
};

std::string to_string(const Location &loc);

struct EffectEntry {
  Location loc;
  Origin origin = Origin::ExplicitOperand;

  bool operator==(const EffectEntry &) const = default;
};

/// All uses and defines of one instruction. Memory slots appear in access
/// order, reads among the uses and writes among the defines.
struct Effect {
  std::vector<EffectEntry> uses;
  std::vector<EffectEntry> defines;

  std::size_t memory_accesses() const;
  bool uses_reg(Reg r) const;
  bool defines_reg(Reg r) const;
};

Effect effects(const DecodedInstr &instr);

// ---------------------------------------------------------------------------
// Inverse relations.

using PartialRegs = std::array<std::optional<std::uint32_t>, kNumLocations>;

/// Deduces the pre-execution registers from the post-execution registers and
/// the instruction's data events. Registers the instruction does not define
/// pass through unchanged; a register that is overwritten without any
/// relation back to its old value comes back Unknown. Throws
/// InconsistentEvidence when the events contradict `after`.
PartialRegs invert(const DecodedInstr &instr, const PartialRegs &after,
                   const std::vector<MemoryAccess> &events);

/// One memory slot of an instruction instance, with whatever is known.
struct SlotView {
  std::optional<std::uint32_t> addr;
  std::optional<std::uint32_t> value;
  std::uint8_t width = 4;
  bool write = false;
};

/// Partial knowledge about one instruction instance. `pre` holds values of
/// the instruction's register uses, `post` of its register defines; entries
/// for other registers are ignored. `complete` is false for an instance that
/// faulted: only its address equations hold then.
struct LocalView {
  PartialRegs pre{};
  PartialRegs post{};
  std::vector<SlotView> mem;
  bool complete = true;
  // Set once the instruction has been replayed with every input Known;
  // every output is then Known too and replaying again adds nothing.
  bool replayed = false;
};

/// Applies the class's forward and inverse relations until nothing new
/// follows. Returns true if any value became Known. Never overwrites a Known
/// value; a contradiction raises InconsistentEvidence(-1).
bool solve_local(const DecodedInstr &instr, const Effect &effect,
                 LocalView &view);

} // namespace rca
