// SPDX-License-Identifier: Apache-2.0
//
// Two-pass µASM assembler: pass one places instructions and data and records
// labels, pass two resolves label references and validates operand shapes.
#include "rca/error.hpp"
#include "rca/isa.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fmt/format.h>

namespace rca {

namespace {

constexpr std::uint16_t bit(Reg r) {
  return static_cast<std::uint16_t>(1u << reg_index(r));
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
    s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
    s.remove_suffix(1);
  return s;
}

std::string upper(std::string_view s) {
  std::string out(s);
  for (auto &c : out)
    c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

bool is_ident_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '.';
}

bool is_ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
}

bool is_identifier(std::string_view s) {
  if (s.empty() || !is_ident_start(s.front()))
    return false;
  return std::all_of(s.begin(), s.end(), is_ident_char);
}

std::optional<std::int64_t> parse_number(std::string_view s) {
  s = trim(s);
  bool neg = false;
  if (!s.empty() && (s.front() == '-' || s.front() == '+')) {
    neg = s.front() == '-';
    s.remove_prefix(1);
  }
  if (s.empty())
    return std::nullopt;
  int base = 10;
  if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
    base = 16;
    s.remove_prefix(2);
  } else if (s.size() > 2 && s[0] == '0' && (s[1] == 'b' || s[1] == 'B')) {
    base = 2;
    s.remove_prefix(2);
  }
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
  if (ec != std::errc() || ptr != s.data() + s.size() || v > 0xFFFFFFFFull)
    return std::nullopt;
  return neg ? -static_cast<std::int64_t>(v) : static_cast<std::int64_t>(v);
}

/// Splits on commas that are not nested in brackets or braces.
std::vector<std::string_view> split_operands(std::string_view s,
                                             std::size_t line) {
  std::vector<std::string_view> out;
  int depth = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    if (c == '[' || c == '{')
      ++depth;
    else if (c == ']' || c == '}')
      --depth;
    else if (c == ',' && depth == 0) {
      out.push_back(trim(s.substr(start, i - start)));
      start = i + 1;
    }
    if (depth < 0)
      throw AsmError(ErrorCode::Syntax, line, "unbalanced brackets");
  }
  if (depth != 0)
    throw AsmError(ErrorCode::Syntax, line, "unbalanced brackets");
  auto last = trim(s.substr(start));
  if (!last.empty() || !out.empty())
    out.push_back(last);
  for (auto piece : out)
    if (piece.empty())
      throw AsmError(ErrorCode::Syntax, line, "empty operand");
  return out;
}

struct Mnemonic {
  Op op;
  bool sets_flags;
  Cond cond;
};

bool flag_setting_allowed(Op op) {
  switch (op) {
  case Op::MOV: case Op::MVN: case Op::ADD: case Op::SUB: case Op::ADC:
  case Op::RSB: case Op::MUL: case Op::AND: case Op::ORR: case Op::EOR:
  case Op::BIC: case Op::LSL: case Op::LSR: case Op::ASR: case Op::ROR:
    return true;
  default:
    return false;
  }
}

std::optional<Cond> parse_cond(std::string_view s) {
  if (s == "HS")
    return Cond::CS;
  if (s == "LO")
    return Cond::CC;
  for (std::size_t i = 0; i < 15; ++i)
    if (cond_name(static_cast<Cond>(i)) == s)
      return static_cast<Cond>(i);
  return std::nullopt;
}

std::optional<Mnemonic> decode_mnemonic(std::string_view raw) {
  std::string m = upper(raw);
  // Longest class name first so BLX wins over BL and B.
  std::vector<Op> ops;
  for (std::size_t i = 0; i < kNumOps; ++i)
    ops.push_back(static_cast<Op>(i));
  std::stable_sort(ops.begin(), ops.end(), [](Op a, Op b) {
    return op_name(a).size() > op_name(b).size();
  });
  for (Op op : ops) {
    auto name = op_name(op);
    if (m.compare(0, name.size(), name) != 0)
      continue;
    std::string_view rest(m);
    rest.remove_prefix(name.size());
    Mnemonic out{op, is_compare(op), Cond::AL};
    if (!rest.empty() && rest.front() == 'S' && flag_setting_allowed(op) &&
        (rest.size() == 1 || parse_cond(rest.substr(1)))) {
      out.sets_flags = true;
      rest.remove_prefix(1);
    }
    if (!rest.empty()) {
      auto c = parse_cond(rest);
      if (!c || op != Op::B)
        continue;
      out.cond = *c;
    }
    return out;
  }
  return std::nullopt;
}

/// An operand plus a label it still refers to.
struct PendingOperand {
  Operand operand;
  std::string label;
};

struct PendingInstr {
  std::size_t line = 0;
  DecodedInstr instr;
  std::vector<std::string> labels; // per operand; empty string if none
};

struct PendingWord {
  std::size_t line = 0;
  std::uint32_t address = 0;
  std::string label;
};

class LineParser {
public:
  explicit LineParser(std::size_t line) : line_(line) {}

  [[noreturn]] void fail(const std::string &msg) const {
    throw AsmError(ErrorCode::Syntax, line_, msg);
  }

  Reg reg(std::string_view s) const {
    auto r = parse_reg(trim(s));
    if (!r)
      fail(fmt::format("expected register, got '{}'", s));
    return *r;
  }

  PendingOperand immediate(std::string_view s) const {
    s = trim(s);
    if (s.empty() || s.front() != '#')
      fail(fmt::format("expected immediate, got '{}'", s));
    s.remove_prefix(1);
    s = trim(s);
    if (is_identifier(s)) {
      PendingOperand p;
      p.operand = Operand::make_imm(0);
      p.label = std::string(s);
      return p;
    }
    auto n = parse_number(s);
    if (!n)
      fail(fmt::format("bad immediate '{}'", s));
    PendingOperand p;
    p.operand = Operand::make_imm(static_cast<std::uint32_t>(*n));
    return p;
  }

  std::uint16_t reglist(std::string_view s) const {
    s = trim(s);
    if (s.size() < 2 || s.front() != '{' || s.back() != '}')
      fail(fmt::format("expected register list, got '{}'", s));
    s = s.substr(1, s.size() - 2);
    std::uint16_t mask = 0;
    std::size_t start = 0;
    auto add = [&](std::string_view item) {
      item = trim(item);
      auto dash = item.find('-');
      if (dash != std::string_view::npos) {
        auto lo = reg_index(reg(item.substr(0, dash)));
        auto hi = reg_index(reg(item.substr(dash + 1)));
        if (lo > hi)
          fail("descending register range");
        for (auto i = lo; i <= hi; ++i) {
          if (mask & (1u << i))
            fail("duplicate register in list");
          mask |= static_cast<std::uint16_t>(1u << i);
        }
        return;
      }
      auto r = reg_index(reg(item));
      if (mask & (1u << r))
        fail("duplicate register in list");
      mask |= static_cast<std::uint16_t>(1u << r);
    };
    for (std::size_t i = 0; i <= s.size(); ++i) {
      if (i == s.size() || s[i] == ',') {
        add(s.substr(start, i - start));
        start = i + 1;
      }
    }
    if (!mask)
      fail("empty register list");
    return mask;
  }

  MemOperand memory(std::string_view s, std::uint8_t width) const {
    s = trim(s);
    MemOperand m;
    m.width = width;
    if (s.empty() || s.front() != '[')
      fail(fmt::format("expected memory operand, got '{}'", s));
    auto close = s.find(']');
    if (close == std::string_view::npos)
      fail("missing ']'");
    auto tail = trim(s.substr(close + 1));
    if (tail == "!")
      m.writeback = Writeback::PreIndex;
    else if (!tail.empty())
      fail(fmt::format("unexpected '{}' after memory operand", tail));
    auto inner = s.substr(1, close - 1);
    auto parts = split_operands(inner, line_);
    if (parts.empty() || parts.size() > 3)
      fail("malformed memory operand");
    m.base = reg(parts[0]);
    if (parts.size() >= 2) {
      if (!parts[1].empty() && parts[1].front() == '#') {
        if (parts.size() != 2)
          fail("displacement cannot be shifted");
        auto n = parse_number(parts[1].substr(1));
        if (!n)
          fail(fmt::format("bad displacement '{}'", parts[1]));
        if (*n < -32768 || *n > 32767)
          fail("displacement out of signed 16-bit range");
        m.disp = static_cast<std::int32_t>(*n);
      } else {
        m.index = reg(parts[1]);
        if (parts.size() == 3) {
          auto sh = trim(parts[2]);
          std::string u = upper(sh);
          if (u.rfind("LSL", 0) != 0)
            fail("only LSL index shifts are supported");
          auto amount = trim(sh.substr(3));
          if (amount.empty() || amount.front() != '#')
            fail("expected '#<shift>'");
          auto n = parse_number(amount.substr(1));
          if (!n || *n < 0 || *n > 31)
            fail("shift out of range 0..31");
          m.shift = static_cast<std::uint8_t>(*n);
        }
        if (m.writeback != Writeback::None)
          fail("writeback is not supported with an index register");
      }
    }
    return m;
  }

private:
  std::size_t line_;
};

void require(bool ok, std::size_t line, const std::string &msg) {
  if (!ok)
    throw AsmError(ErrorCode::Syntax, line, msg);
}

/// Parses one instruction statement. Label references are left in
/// PendingInstr::labels and patched during resolution.
PendingInstr parse_instruction(std::string_view stmt, std::uint32_t address,
                               std::size_t line) {
  LineParser p(line);
  std::size_t ws = 0;
  while (ws < stmt.size() && !std::isspace(static_cast<unsigned char>(stmt[ws])))
    ++ws;
  auto mn_text = stmt.substr(0, ws);
  auto mn = decode_mnemonic(mn_text);
  if (!mn)
    p.fail(fmt::format("unknown mnemonic '{}'", mn_text));

  PendingInstr out;
  out.line = line;
  DecodedInstr &in = out.instr;
  in.address = address;
  in.op = mn->op;
  in.sets_flags = mn->sets_flags;
  in.cond = mn->cond;

  auto rest = trim(stmt.substr(ws));
  auto args = split_operands(rest, line);
  auto push = [&](const Operand &o, std::string label = {}) {
    in.operands.push_back(o);
    out.labels.push_back(std::move(label));
  };
  auto is_imm_text = [](std::string_view s) {
    return !s.empty() && s.front() == '#';
  };
  auto push_reg_or_imm = [&](std::string_view s) {
    if (is_imm_text(s)) {
      auto imm = p.immediate(s);
      push(imm.operand, imm.label);
    } else {
      push(Operand::make_reg(p.reg(s)));
    }
  };

  const Op op = in.op;
  switch (op) {
  case Op::MOV:
  case Op::MVN:
    require(args.size() == 2, line, "expected 'Rd, Rm|#imm'");
    push(Operand::make_reg(p.reg(args[0])));
    push_reg_or_imm(args[1]);
    break;
  case Op::ADD: case Op::SUB: case Op::ADC: case Op::RSB:
  case Op::AND: case Op::ORR: case Op::EOR: case Op::BIC:
  case Op::LSL: case Op::LSR: case Op::ASR: case Op::ROR:
    require(args.size() == 2 || args.size() == 3, line,
            "expected 'Rd, [Rn,] Rm|#imm'");
    push(Operand::make_reg(p.reg(args[0])));
    if (args.size() == 3)
      push(Operand::make_reg(p.reg(args[1])));
    push_reg_or_imm(args.back());
    break;
  case Op::MUL:
    require(args.size() == 2 || args.size() == 3, line,
            "expected 'Rd, [Rn,] Rm'");
    for (auto a : args)
      push(Operand::make_reg(p.reg(a)));
    break;
  case Op::CMP: case Op::CMN: case Op::TST:
    require(args.size() == 2, line, "expected 'Rn, Rm|#imm'");
    push(Operand::make_reg(p.reg(args[0])));
    push_reg_or_imm(args[1]);
    break;
  case Op::LDR: case Op::LDRB: case Op::LDRH:
  case Op::STR: case Op::STRB: case Op::STRH: {
    require(args.size() == 2 || args.size() == 3, line,
            "expected 'Rt, [address]'");
    push(Operand::make_reg(p.reg(args[0])));
    MemOperand m = p.memory(args[1], access_width(op));
    if (args.size() == 3) {
      require(m.writeback == Writeback::None && !m.index && m.disp == 0 &&
                  trim(args[1]).back() == ']',
              line, "post-index form is '[Rn], #disp'");
      auto n = parse_number(trim(args[2]).substr(1));
      require(is_imm_text(trim(args[2])) && n.has_value(), line,
              "bad post-index displacement");
      require(*n >= -32768 && *n <= 32767, line,
              "displacement out of signed 16-bit range");
      m.disp = static_cast<std::int32_t>(*n);
      m.writeback = Writeback::PostIndex;
    }
    push(Operand::make_mem(m));
    break;
  }
  case Op::LDM:
  case Op::STM: {
    require(args.size() == 2, line, "expected 'Rn[!], {list}'");
    auto base = trim(args[0]);
    if (!base.empty() && base.back() == '!') {
      in.base_writeback = true;
      base.remove_suffix(1);
    }
    push(Operand::make_reg(p.reg(base)));
    push(Operand::make_list(p.reglist(args[1])));
    break;
  }
  case Op::PUSH:
  case Op::POP:
    require(args.size() == 1, line, "expected '{list}'");
    push(Operand::make_list(p.reglist(args[0])));
    break;
  case Op::B:
  case Op::BL: {
    require(args.size() == 1, line, "expected branch target");
    auto t = trim(args[0]);
    if (t == ".") {
      push(Operand::make_imm(address));
    } else if (is_identifier(t)) {
      push(Operand::make_imm(0), std::string(t));
    } else {
      auto n = parse_number(t);
      require(n && *n >= 0, line, fmt::format("bad branch target '{}'", t));
      push(Operand::make_imm(static_cast<std::uint32_t>(*n)));
    }
    break;
  }
  case Op::BX:
  case Op::BLX:
    require(args.size() == 1, line, "expected 'Rm'");
    push(Operand::make_reg(p.reg(args[0])));
    break;
  case Op::NOP:
    require(args.empty(), line, "NOP takes no operands");
    break;
  }
  return out;
}

/// Shape rules that the semantics rely on.
void validate(const DecodedInstr &in, std::size_t line) {
  const Op op = in.op;
  auto reg_at = [&](std::size_t i) { return in.operands[i].reg; };
  auto is_reg_pc = [&](std::size_t i) {
    return in.operands[i].is_reg() && in.operands[i].reg == Reg::PC;
  };
  switch (op) {
  case Op::MOV:
    require(!(is_reg_pc(0) && in.operands[1].is_imm()), line,
            "MOV to PC requires a register source");
    require(!(is_reg_pc(0) && in.sets_flags), line,
            "MOVS to PC is not supported");
    break;
  case Op::MVN: case Op::ADD: case Op::SUB: case Op::ADC: case Op::RSB:
  case Op::MUL: case Op::AND: case Op::ORR: case Op::EOR: case Op::BIC:
  case Op::LSL: case Op::LSR: case Op::ASR: case Op::ROR:
    require(!is_reg_pc(0), line, "only MOV, LDR, POP and LDM may write PC");
    if (op == Op::LSL || op == Op::LSR || op == Op::ASR || op == Op::ROR) {
      const Operand &amt = in.operands.back();
      require(!amt.is_imm() || amt.imm <= 31, line, "shift out of range 0..31");
    }
    break;
  case Op::CMP: case Op::CMN: case Op::TST:
    break;
  case Op::LDR: case Op::LDRB: case Op::LDRH:
  case Op::STR: case Op::STRB: case Op::STRH: {
    const MemOperand &m = in.operands[1].mem;
    const Reg rt = reg_at(0);
    if (m.writeback != Writeback::None) {
      require(m.base != Reg::PC, line, "PC base cannot be written back");
      require(m.base != rt, line, "writeback base must differ from Rt");
    }
    require(!m.index || *m.index != Reg::PC, line,
            "PC is not a valid index register");
    if (rt == Reg::PC)
      require(op == Op::LDR, line, "only a word load may target PC");
    break;
  }
  case Op::LDM:
  case Op::STM: {
    const Reg base = reg_at(0);
    const std::uint16_t list = in.operands[1].reglist;
    require(base != Reg::PC, line, "PC is not a valid base");
    require(!(list & bit(Reg::SP)), line, "SP is not allowed in the list");
    if (in.base_writeback)
      require(!(list & (1u << reg_index(base))), line,
              "writeback base cannot be in the list");
    if (op == Op::STM)
      require(!(list & bit(Reg::PC)), line, "STM cannot store PC");
    break;
  }
  case Op::PUSH: {
    const std::uint16_t list = in.operands[0].reglist;
    require(!(list & (bit(Reg::SP) | bit(Reg::PC))), line,
            "PUSH list cannot hold SP or PC");
    break;
  }
  case Op::POP: {
    const std::uint16_t list = in.operands[0].reglist;
    require(!(list & bit(Reg::SP)), line, "POP list cannot hold SP");
    break;
  }
  case Op::B: case Op::BL: case Op::NOP:
    break;
  case Op::BX:
  case Op::BLX:
    require(!is_reg_pc(0), line, "branch through PC is not supported");
    break;
  }
  for (const auto &o : in.operands)
    if (o.is_mem())
      require(o.mem.disp >= -32768 && o.mem.disp <= 32767, line,
              "displacement out of signed 16-bit range");
}

class Placement {
public:
  void claim(std::uint32_t addr, std::uint32_t size, std::size_t line) {
    std::uint64_t end = std::uint64_t(addr) + size;
    if (end > 0x100000000ull)
      throw AsmError(ErrorCode::OverlappingPlacement, line,
                     "placement wraps past the top of the address space");
    auto next = ranges_.lower_bound(addr);
    if (next != ranges_.end() && next->first < end)
      throw AsmError(ErrorCode::OverlappingPlacement, line,
                     fmt::format("overlaps content at 0x{:x}", next->first));
    if (next != ranges_.begin()) {
      auto prev = std::prev(next);
      if (prev->second > addr)
        throw AsmError(ErrorCode::OverlappingPlacement, line,
                       fmt::format("overlaps content at 0x{:x}", prev->first));
    }
    ranges_.emplace(addr, end);
  }

private:
  std::map<std::uint32_t, std::uint64_t> ranges_;
};

} // namespace

Image assemble(std::string_view source) {
  Image image;
  image.digest = sha256_hex(source);

  std::vector<PendingInstr> instrs;
  std::vector<PendingWord> words;
  std::map<std::uint32_t, std::uint8_t> bytes;
  std::map<std::string, std::size_t, std::less<>> label_lines;
  Placement placement;
  std::uint32_t lc = 0;

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= source.size()) {
    auto eol = source.find('\n', pos);
    if (eol == std::string_view::npos)
      eol = source.size();
    auto line = source.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;

    if (auto sc = line.find(';'); sc != std::string_view::npos)
      line = line.substr(0, sc);
    line = trim(line);

    // Leading labels; several may share one line.
    while (true) {
      auto colon = line.find(':');
      if (colon == std::string_view::npos)
        break;
      auto name = trim(line.substr(0, colon));
      if (!is_identifier(name) || name.front() == '.')
        break;
      if (parse_reg(name) || decode_mnemonic(name))
        throw AsmError(ErrorCode::Syntax, line_no,
                       fmt::format("'{}' is reserved", name));
      if (label_lines.count(name))
        throw AsmError(ErrorCode::DuplicateLabel, line_no,
                       fmt::format("label '{}' already defined on line {}",
                                   name, label_lines.find(name)->second));
      label_lines.emplace(std::string(name), line_no);
      image.labels.emplace(std::string(name), lc);
      line = trim(line.substr(colon + 1));
    }
    if (line.empty())
      continue;

    if (line.front() == '.') {
      std::size_t ws = 0;
      while (ws < line.size() &&
             !std::isspace(static_cast<unsigned char>(line[ws])))
        ++ws;
      auto directive = line.substr(0, ws);
      auto args = split_operands(trim(line.substr(ws)), line_no);
      if (directive == ".org") {
        if (args.size() != 1)
          throw AsmError(ErrorCode::Syntax, line_no, ".org takes one address");
        auto n = parse_number(args[0]);
        if (!n || *n < 0)
          throw AsmError(ErrorCode::Syntax, line_no, "bad .org address");
        lc = static_cast<std::uint32_t>(*n);
      } else if (directive == ".word" || directive == ".byte") {
        const bool word = directive == ".word";
        if (args.empty())
          throw AsmError(ErrorCode::Syntax, line_no,
                         fmt::format("{} needs a value", directive));
        for (auto a : args) {
          const std::uint32_t size = word ? 4 : 1;
          placement.claim(lc, size, line_no);
          std::uint32_t value = 0;
          if (word && is_identifier(a)) {
            words.push_back({line_no, lc, std::string(a)});
          } else {
            auto n = parse_number(a);
            const std::int64_t lo = word ? -0x80000000ll : -128;
            const std::int64_t hi = word ? 0xFFFFFFFFll : 0xFF;
            if (!n || *n < lo || *n > hi)
              throw AsmError(ErrorCode::Syntax, line_no,
                             fmt::format("bad {} value '{}'", directive, a));
            value = static_cast<std::uint32_t>(*n);
          }
          for (std::uint32_t i = 0; i < size; ++i)
            bytes[lc + i] = static_cast<std::uint8_t>(value >> (8 * i));
          lc += size;
        }
      } else {
        throw AsmError(ErrorCode::Syntax, line_no,
                       fmt::format("unknown directive '{}'", directive));
      }
      continue;
    }

    if (lc % 4 != 0)
      throw AsmError(ErrorCode::Syntax, line_no,
                     fmt::format("instruction at unaligned address 0x{:x}", lc));
    placement.claim(lc, 4, line_no);
    instrs.push_back(parse_instruction(line, lc, line_no));
    lc += 4;
  }

  auto lookup = [&](const std::string &name, std::size_t line) {
    auto it = image.labels.find(name);
    if (it == image.labels.end())
      throw AsmError(ErrorCode::UnresolvedLabel, line,
                     fmt::format("undefined label '{}'", name));
    return it->second;
  };

  for (auto &pi : instrs) {
    for (std::size_t i = 0; i < pi.labels.size(); ++i)
      if (!pi.labels[i].empty())
        pi.instr.operands[i].imm = lookup(pi.labels[i], pi.line);
    validate(pi.instr, pi.line);
    pi.instr.text = disassemble(pi.instr);
    image.code.emplace(pi.instr.address, std::move(pi.instr));
  }
  for (const auto &w : words) {
    std::uint32_t v = lookup(w.label, w.line);
    for (std::uint32_t i = 0; i < 4; ++i)
      bytes[w.address + i] = static_cast<std::uint8_t>(v >> (8 * i));
  }

  // Coalesce data bytes into contiguous segments.
  for (const auto &[addr, b] : bytes) {
    if (image.data.empty() ||
        image.data.back().address + image.data.back().bytes.size() != addr)
      image.data.push_back({addr, {}});
    image.data.back().bytes.push_back(b);
  }
  return image;
}

DecodedInstr assemble_line(std::string_view line, std::uint32_t address) {
  auto stmt = trim(line);
  if (auto sc = stmt.find(';'); sc != std::string_view::npos)
    stmt = trim(stmt.substr(0, sc));
  auto pi = parse_instruction(stmt, address, 1);
  for (std::size_t i = 0; i < pi.labels.size(); ++i)
    if (!pi.labels[i].empty())
      throw AsmError(ErrorCode::UnresolvedLabel, 1,
                     fmt::format("undefined label '{}'", pi.labels[i]));
  validate(pi.instr, 1);
  pi.instr.text = disassemble(pi.instr);
  return pi.instr;
}

} // namespace rca
