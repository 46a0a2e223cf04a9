// SPDX-License-Identifier: Apache-2.0
//
// The micro instruction set: a Cortex-M flavoured subset with textual
// encoding only. Every instruction is 4 bytes wide and PC reads as the
// address of the instruction being executed.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rca {

/// Architectural locations tracked by the analysis. APSR holds the N, Z, C
/// and V flags as one unit.
enum class Reg : std::uint8_t {
  R0, R1, R2, R3, R4, R5, R6, R7, R8, R9, R10, R11, R12,
  SP, LR, PC,
  APSR,
};

inline constexpr std::size_t kNumLocations = 17;
inline constexpr std::size_t kNumGprs = 16;

inline constexpr std::size_t reg_index(Reg r) {
  return static_cast<std::size_t>(r);
}
inline constexpr Reg reg_from_index(std::size_t i) {
  return static_cast<Reg>(i);
}

std::string_view reg_name(Reg r);
std::optional<Reg> parse_reg(std::string_view name);

enum class Cond : std::uint8_t {
  EQ, NE, CS, CC, MI, PL, VS, VC, HI, LS, GE, LT, GT, LE, AL,
};

std::string_view cond_name(Cond c);

enum class Op : std::uint8_t {
  MOV, MVN, ADD, SUB, ADC, RSB, MUL, AND, ORR, EOR, BIC,
  LSL, LSR, ASR, ROR,
  CMP, CMN, TST,
  LDR, LDRB, LDRH, STR, STRB, STRH,
  LDM, STM, PUSH, POP,
  B, BL, BX, BLX,
  NOP,
};

inline constexpr std::size_t kNumOps = static_cast<std::size_t>(Op::NOP) + 1;

std::string_view op_name(Op op);

enum class Writeback : std::uint8_t { None, PreIndex, PostIndex };

/// `[base, index, LSL #shift]`, `[base, #disp]`, `[base, #disp]!` or
/// `[base], #disp`. An index register excludes a displacement.
struct MemOperand {
  Reg base = Reg::R0;
  std::optional<Reg> index;
  std::uint8_t shift = 0;
  std::int32_t disp = 0;
  std::uint8_t width = 4;
  Writeback writeback = Writeback::None;

  bool operator==(const MemOperand &) const = default;
};

struct Operand {
  enum class Kind : std::uint8_t { Register, Immediate, Memory, RegisterList };

  Kind kind = Kind::Register;
  Reg reg = Reg::R0;
  std::uint32_t imm = 0;
  MemOperand mem;
  std::uint16_t reglist = 0; // bit i set => Ri in the list

  static Operand make_reg(Reg r) {
    Operand o;
    o.kind = Kind::Register;
    o.reg = r;
    return o;
  }
  static Operand make_imm(std::uint32_t v) {
    Operand o;
    o.kind = Kind::Immediate;
    o.imm = v;
    return o;
  }
  static Operand make_mem(const MemOperand &m) {
    Operand o;
    o.kind = Kind::Memory;
    o.mem = m;
    return o;
  }
  static Operand make_list(std::uint16_t mask) {
    Operand o;
    o.kind = Kind::RegisterList;
    o.reglist = mask;
    return o;
  }

  bool is_reg() const { return kind == Kind::Register; }
  bool is_imm() const { return kind == Kind::Immediate; }
  bool is_mem() const { return kind == Kind::Memory; }
  bool is_list() const { return kind == Kind::RegisterList; }

  bool operator==(const Operand &) const = default;
};

struct DecodedInstr {
  std::uint32_t address = 0;
  Op op = Op::NOP;
  Cond cond = Cond::AL;
  bool sets_flags = false;
  /// Base writeback (`Rn!`) for LDM/STM.
  bool base_writeback = false;
  std::vector<Operand> operands;
  std::string text;

  /// The single memory operand of LDR*/STR*, if any.
  const MemOperand *mem_operand() const;
};

// Class predicates.
bool is_single_load(Op op);
bool is_single_store(Op op);
bool is_multi_transfer(Op op); // LDM, STM, PUSH, POP
bool is_compare(Op op);        // CMP, CMN, TST
bool is_branch(Op op);         // B, BL, BX, BLX
std::uint8_t access_width(Op op);

/// True when the instruction may load a new PC from anything but the
/// sequential successor.
bool modifies_pc(const DecodedInstr &instr);

/// Canonical assembly text. Re-assembling it reproduces the instruction.
std::string disassemble(const DecodedInstr &instr);

std::string format_imm(std::int64_t value);

/// An assembled program.
struct DataSegment {
  std::uint32_t address = 0;
  std::vector<std::uint8_t> bytes;
};

struct Image {
  std::map<std::uint32_t, DecodedInstr> code;
  std::vector<DataSegment> data;
  std::map<std::string, std::uint32_t, std::less<>> labels;
  /// Lowercase hex SHA-256 of the source text.
  std::string digest;

  const DecodedInstr *find(std::uint32_t pc) const {
    auto it = code.find(pc);
    return it == code.end() ? nullptr : &it->second;
  }
};

/// Parses µASM source. Throws AsmError on any diagnostic.
Image assemble(std::string_view source);

/// Assembles a single instruction line at the given address (no labels).
DecodedInstr assemble_line(std::string_view line, std::uint32_t address = 0);

std::string sha256_hex(std::string_view bytes);

} // namespace rca
