// SPDX-License-Identifier: Apache-2.0
#include "rca/isa.hpp"

#include "rca/error.hpp"

#include <openssl/evp.h>

#include <array>
#include <cctype>
#include <fmt/format.h>

namespace rca {

namespace {

constexpr std::array<std::string_view, kNumLocations> kRegNames = {
    "R0", "R1", "R2",  "R3",  "R4", "R5", "R6", "R7",   "R8",
    "R9", "R10", "R11", "R12", "SP", "LR", "PC", "APSR",
};

constexpr std::array<std::string_view, 15> kCondNames = {
    "EQ", "NE", "CS", "CC", "MI", "PL", "VS", "VC",
    "HI", "LS", "GE", "LT", "GT", "LE", "AL",
};

constexpr std::array<std::string_view, kNumOps> kOpNames = {
    "MOV", "MVN", "ADD",  "SUB", "ADC", "RSB", "MUL", "AND", "ORR",
    "EOR", "BIC", "LSL",  "LSR", "ASR", "ROR", "CMP", "CMN", "TST",
    "LDR", "LDRB", "LDRH", "STR", "STRB", "STRH", "LDM", "STM", "PUSH",
    "POP", "B",   "BL",   "BX",  "BLX", "NOP",
};

std::string format_reglist(std::uint16_t mask) {
  std::string out = "{";
  bool first = true;
  for (std::size_t i = 0; i < kNumGprs; ++i) {
    if (!(mask & (1u << i)))
      continue;
    if (!first)
      out += ", ";
    out += reg_name(reg_from_index(i));
    first = false;
  }
  out += "}";
  return out;
}

std::string format_mem(const MemOperand &m) {
  std::string base(reg_name(m.base));
  if (m.writeback == Writeback::PostIndex)
    return fmt::format("[{}], #{}", base, format_imm(m.disp));
  std::string inner;
  if (m.index) {
    inner = fmt::format("[{}, {}", base, reg_name(*m.index));
    if (m.shift)
      inner += fmt::format(", LSL #{}", m.shift);
    inner += "]";
  } else {
    inner = fmt::format("[{}, #{}]", base, format_imm(m.disp));
  }
  if (m.writeback == Writeback::PreIndex)
    inner += "!";
  return inner;
}

} // namespace

const char *error_code_name(ErrorCode code) {
  switch (code) {
  case ErrorCode::Syntax: return "E_SYNTAX";
  case ErrorCode::DuplicateLabel: return "E_DUPLICATE_LABEL";
  case ErrorCode::UnresolvedLabel: return "E_UNRESOLVED_LABEL";
  case ErrorCode::OverlappingPlacement: return "E_OVERLAP";
  case ErrorCode::Config: return "E_CONFIG";
  case ErrorCode::Io: return "E_IO";
  case ErrorCode::UnsupportedVersion: return "E_UNSUPPORTED_VERSION";
  case ErrorCode::MalformedLine: return "E_MALFORMED_LINE";
  case ErrorCode::InvariantViolation: return "E_INVARIANT";
  case ErrorCode::MissingInstruction: return "E_MISSING_INSTRUCTION";
  case ErrorCode::EventArityMismatch: return "E_EVENT_ARITY";
  case ErrorCode::InconsistentEvidence: return "E_INCONSISTENT_EVIDENCE";
  case ErrorCode::UnresolvedMemory: return "E_UNRESOLVED_MEMORY";
  case ErrorCode::UnsupportedCrashShape: return "E_CRASH_SHAPE";
  case ErrorCode::MissingCrashRecord: return "E_NO_CRASH";
  case ErrorCode::ImageMismatch: return "E_IMAGE_MISMATCH";
  case ErrorCode::OutOfRange: return "E_OUT_OF_RANGE";
  }
  return "E_UNKNOWN";
}

std::string_view reg_name(Reg r) { return kRegNames[reg_index(r)]; }

std::optional<Reg> parse_reg(std::string_view name) {
  std::string upper(name);
  for (auto &c : upper)
    c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  // APSR is not nameable in assembly.
  for (std::size_t i = 0; i < kNumGprs; ++i)
    if (kRegNames[i] == upper)
      return reg_from_index(i);
  if (upper == "R13")
    return Reg::SP;
  if (upper == "R14")
    return Reg::LR;
  if (upper == "R15")
    return Reg::PC;
  return std::nullopt;
}

std::string_view cond_name(Cond c) {
  return kCondNames[static_cast<std::size_t>(c)];
}

std::string_view op_name(Op op) {
  return kOpNames[static_cast<std::size_t>(op)];
}

const MemOperand *DecodedInstr::mem_operand() const {
  for (const auto &o : operands)
    if (o.is_mem())
      return &o.mem;
  return nullptr;
}

bool is_single_load(Op op) {
  return op == Op::LDR || op == Op::LDRB || op == Op::LDRH;
}

bool is_single_store(Op op) {
  return op == Op::STR || op == Op::STRB || op == Op::STRH;
}

bool is_multi_transfer(Op op) {
  return op == Op::LDM || op == Op::STM || op == Op::PUSH || op == Op::POP;
}

bool is_compare(Op op) {
  return op == Op::CMP || op == Op::CMN || op == Op::TST;
}

bool is_branch(Op op) {
  return op == Op::B || op == Op::BL || op == Op::BX || op == Op::BLX;
}

std::uint8_t access_width(Op op) {
  switch (op) {
  case Op::LDRB:
  case Op::STRB:
    return 1;
  case Op::LDRH:
  case Op::STRH:
    return 2;
  default:
    return 4;
  }
}

bool modifies_pc(const DecodedInstr &instr) {
  if (is_branch(instr.op))
    return true;
  constexpr std::uint16_t pc_bit = 1u << reg_index(Reg::PC);
  switch (instr.op) {
  case Op::MOV:
  case Op::LDR:
    return instr.operands[0].is_reg() && instr.operands[0].reg == Reg::PC;
  case Op::POP:
    return instr.operands[0].reglist & pc_bit;
  case Op::LDM:
    return instr.operands[1].reglist & pc_bit;
  default:
    return false;
  }
}

std::string format_imm(std::int64_t value) {
  if (value < 0)
    return "-" + format_imm(-value);
  if (value < 10)
    return fmt::format("{}", value);
  return fmt::format("0x{:x}", value);
}

std::string disassemble(const DecodedInstr &instr) {
  std::string text(op_name(instr.op));
  if (instr.sets_flags && !is_compare(instr.op))
    text += "S";
  if (instr.cond != Cond::AL)
    text += cond_name(instr.cond);

  std::string ops;
  for (std::size_t i = 0; i < instr.operands.size(); ++i) {
    const Operand &o = instr.operands[i];
    if (i)
      ops += ", ";
    switch (o.kind) {
    case Operand::Kind::Register:
      ops += reg_name(o.reg);
      if (i == 0 && instr.base_writeback)
        ops += "!";
      break;
    case Operand::Kind::Immediate:
      if (instr.op == Op::B || instr.op == Op::BL)
        ops += fmt::format("0x{:x}", o.imm);
      else
        ops += "#" + format_imm(o.imm);
      break;
    case Operand::Kind::Memory:
      ops += format_mem(o.mem);
      break;
    case Operand::Kind::RegisterList:
      ops += format_reglist(o.reglist);
      break;
    }
  }
  if (!ops.empty())
    text += " " + ops;
  return text;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(),
                  nullptr))
    throw Error(ErrorCode::Io, "sha-256 digest failed");
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i)
    out += fmt::format("{:02x}", digest[i]);
  return out;
}

} // namespace rca
