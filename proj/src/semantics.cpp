// SPDX-License-Identifier: Apache-2.0
#include "rca/semantics.hpp"

#include "rca/error.hpp"

#include <bit>
#include <fmt/format.h>

namespace rca {

namespace {

constexpr std::uint32_t mask_of(Reg r) { return 1u << reg_index(r); }

std::uint32_t width_mask(std::uint8_t width) {
  return width >= 4 ? 0xFFFFFFFFu : (1u << (8 * width)) - 1;
}

std::uint32_t nz_flags(std::uint32_t result) {
  std::uint32_t f = 0;
  if (result & 0x80000000u)
    f |= kFlagN;
  if (result == 0)
    f |= kFlagZ;
  return f;
}

struct AddResult {
  std::uint32_t value;
  bool carry;
  bool overflow;
};

AddResult add_with_carry(std::uint32_t a, std::uint32_t b, bool carry_in) {
  std::uint64_t wide = std::uint64_t(a) + b + (carry_in ? 1 : 0);
  auto r = static_cast<std::uint32_t>(wide);
  bool overflow = ((~(a ^ b)) & (a ^ r)) >> 31;
  return {r, (wide >> 32) != 0, overflow};
}

struct ShiftResult {
  std::uint32_t value;
  std::optional<bool> carry; // nullopt: carry unchanged
};

ShiftResult shift_value(Op op, std::uint32_t v, std::uint32_t amount) {
  if (amount == 0)
    return {v, std::nullopt};
  switch (op) {
  case Op::LSL:
    if (amount < 32)
      return {v << amount, ((v >> (32 - amount)) & 1) != 0};
    if (amount == 32)
      return {0, (v & 1) != 0};
    return {0, false};
  case Op::LSR:
    if (amount < 32)
      return {v >> amount, ((v >> (amount - 1)) & 1) != 0};
    if (amount == 32)
      return {0, (v >> 31) != 0};
    return {0, false};
  case Op::ASR:
    if (amount < 32)
      return {static_cast<std::uint32_t>(static_cast<std::int32_t>(v) >>
                                         amount),
              ((v >> (amount - 1)) & 1) != 0};
    return {(v >> 31) ? 0xFFFFFFFFu : 0u, (v >> 31) != 0};
  case Op::ROR: {
    std::uint32_t r = std::rotr(v, static_cast<int>(amount & 31));
    return {r, (r >> 31) != 0};
  }
  default:
    return {v, std::nullopt};
  }
}

/// Flag-setting classes that leave some of NZCV untouched and therefore
/// read the old APSR.
bool partial_flag_update(Op op) {
  switch (op) {
  case Op::ADD: case Op::SUB: case Op::ADC: case Op::RSB:
  case Op::CMP: case Op::CMN:
    return false;
  default:
    return true;
  }
}

bool is_data_processing(Op op) {
  switch (op) {
  case Op::MOV: case Op::MVN: case Op::ADD: case Op::SUB: case Op::ADC:
  case Op::RSB: case Op::MUL: case Op::AND: case Op::ORR: case Op::EOR:
  case Op::BIC: case Op::LSL: case Op::LSR: case Op::ASR: case Op::ROR:
    return true;
  default:
    return false;
  }
}

/// Operand roles of a data-processing instruction after expanding the
/// two-operand shorthand (`ADD Rd, x` means `ADD Rd, Rd, x`).
struct DpShape {
  Reg rd;
  std::optional<Reg> rn;   // first source register; absent for MOV/MVN
  const Operand *second;   // register or immediate
};

DpShape dp_shape(const DecodedInstr &in) {
  const auto &ops = in.operands;
  if (in.op == Op::MOV || in.op == Op::MVN)
    return {ops[0].reg, std::nullopt, &ops[1]};
  if (ops.size() == 3)
    return {ops[0].reg, ops[1].reg, &ops[2]};
  return {ops[0].reg, ops[0].reg, &ops[1]};
}

std::vector<Reg> list_regs(std::uint16_t mask) {
  std::vector<Reg> out;
  for (std::size_t i = 0; i < kNumGprs; ++i)
    if (mask & (1u << i))
      out.push_back(reg_from_index(i));
  return out;
}

const std::uint16_t &reglist_of(const DecodedInstr &in) {
  return in.op == Op::LDM || in.op == Op::STM ? in.operands[1].reglist
                                              : in.operands[0].reglist;
}

class Executor {
public:
  Executor(const MachineState &s, const DecodedInstr &in, MemoryBus &bus,
           StepTrace *trace)
      : state_(s), in_(in), bus_(bus), trace_(trace) {}

  StepOutcome run() {
    StepOutcome out;
    next_pc_ = in_.address + 4;
    if (!execute()) {
      out.state = state_snapshot_;
      out.fault = fault_;
      if (trace_)
        *trace_ = {};
      return out;
    }
    write(Reg::PC, next_pc_);
    state_.steps += 1;
    out.state = state_;
    out.accesses = std::move(accesses_);
    return out;
  }

private:
  std::uint32_t read(Reg r) {
    if (trace_)
      trace_->reads |= mask_of(r);
    if (r == Reg::PC)
      return in_.address;
    return state_[r];
  }

  void write(Reg r, std::uint32_t v) {
    if (trace_)
      trace_->writes |= mask_of(r);
    state_[r] = v;
  }

  std::uint32_t operand_value(const Operand &o) {
    return o.is_imm() ? o.imm : read(o.reg);
  }

  bool load(std::uint32_t addr, std::uint8_t width, std::uint32_t &value) {
    auto v = bus_.read(addr, width);
    if (!v) {
      fault_ = StepFault{StepFault::Kind::UnmappedAccess, addr, width,
                         AccessKind::Read};
      return false;
    }
    value = *v & width_mask(width);
    accesses_.push_back({AccessKind::Read, addr, width, value});
    return true;
  }

  bool store(std::uint32_t addr, std::uint8_t width, std::uint32_t value) {
    value &= width_mask(width);
    if (!bus_.write(addr, width, value)) {
      fault_ = StepFault{StepFault::Kind::UnmappedAccess, addr, width,
                         AccessKind::Write};
      return false;
    }
    accesses_.push_back({AccessKind::Write, addr, width, value});
    return true;
  }

  void set_flags(std::uint32_t flags, std::uint32_t keep_mask) {
    std::uint32_t apsr = 0;
    if (keep_mask)
      apsr = read(Reg::APSR) & keep_mask;
    write(Reg::APSR, apsr | flags);
  }

  bool execute() {
    state_snapshot_ = state_;
    const Op op = in_.op;
    if (is_data_processing(op))
      return data_processing();
    switch (op) {
    case Op::CMP:
    case Op::CMN: {
      std::uint32_t a = read(in_.operands[0].reg);
      std::uint32_t b = operand_value(in_.operands[1]);
      AddResult r = op == Op::CMP ? add_with_carry(a, ~b, true)
                                  : add_with_carry(a, b, false);
      std::uint32_t f = nz_flags(r.value);
      if (r.carry)
        f |= kFlagC;
      if (r.overflow)
        f |= kFlagV;
      set_flags(f, 0);
      return true;
    }
    case Op::TST: {
      std::uint32_t a = read(in_.operands[0].reg);
      std::uint32_t b = operand_value(in_.operands[1]);
      set_flags(nz_flags(a & b), kFlagC | kFlagV);
      return true;
    }
    case Op::LDR: case Op::LDRB: case Op::LDRH:
    case Op::STR: case Op::STRB: case Op::STRH:
      return single_transfer();
    case Op::LDM: case Op::STM: case Op::PUSH: case Op::POP:
      return multi_transfer();
    case Op::B:
      if (in_.cond != Cond::AL && !condition_passed(in_.cond, read(Reg::APSR)))
        return true;
      next_pc_ = in_.operands[0].imm;
      return true;
    case Op::BL:
      write(Reg::LR, in_.address + 4);
      next_pc_ = in_.operands[0].imm;
      return true;
    case Op::BX:
      next_pc_ = read(in_.operands[0].reg);
      return true;
    case Op::BLX: {
      std::uint32_t target = read(in_.operands[0].reg);
      write(Reg::LR, in_.address + 4);
      next_pc_ = target;
      return true;
    }
    case Op::NOP:
      return true;
    default:
      return true;
    }
  }

  bool data_processing() {
    const Op op = in_.op;
    DpShape s = dp_shape(in_);
    std::uint32_t a = s.rn ? read(*s.rn) : 0;
    std::uint32_t b = operand_value(*s.second);
    std::uint32_t result = 0;
    std::uint32_t flags = 0;
    std::uint32_t keep = kFlagC | kFlagV;
    switch (op) {
    case Op::MOV: result = b; break;
    case Op::MVN: result = ~b; break;
    case Op::AND: result = a & b; break;
    case Op::ORR: result = a | b; break;
    case Op::EOR: result = a ^ b; break;
    case Op::BIC: result = a & ~b; break;
    case Op::MUL: result = a * b; break;
    case Op::ADD:
    case Op::SUB:
    case Op::RSB:
    case Op::ADC: {
      AddResult r{};
      if (op == Op::ADD)
        r = add_with_carry(a, b, false);
      else if (op == Op::SUB)
        r = add_with_carry(a, ~b, true);
      else if (op == Op::RSB)
        r = add_with_carry(b, ~a, true);
      else
        r = add_with_carry(a, b, (read(Reg::APSR) & kFlagC) != 0);
      result = r.value;
      if (r.carry)
        flags |= kFlagC;
      if (r.overflow)
        flags |= kFlagV;
      keep = 0;
      break;
    }
    case Op::LSL: case Op::LSR: case Op::ASR: case Op::ROR: {
      std::uint32_t amount = s.second->is_imm() ? b : (b & 0xFF);
      ShiftResult r = shift_value(op, a, amount);
      result = r.value;
      if (r.carry) {
        keep = kFlagV;
        if (*r.carry)
          flags |= kFlagC;
      }
      break;
    }
    default:
      break;
    }
    if (s.rd == Reg::PC)
      next_pc_ = result;
    else
      write(s.rd, result);
    if (in_.sets_flags) {
      // Partial updates read APSR even when this particular shift amount
      // happens to replace C; the location set must not depend on values.
      std::uint32_t old = partial_flag_update(op) ? read(Reg::APSR) : 0;
      write(Reg::APSR, (old & keep) | nz_flags(result) | flags);
    }
    return true;
  }

  bool single_transfer() {
    const Reg rt = in_.operands[0].reg;
    const MemOperand &m = in_.operands[1].mem;
    std::uint32_t base = read(m.base);
    std::uint32_t offset = static_cast<std::uint32_t>(m.disp);
    if (m.index)
      offset = read(*m.index) << m.shift;
    std::uint32_t addr =
        m.writeback == Writeback::PostIndex ? base : base + offset;
    if (is_single_load(in_.op)) {
      std::uint32_t value = 0;
      if (!load(addr, m.width, value))
        return false;
      if (rt == Reg::PC)
        next_pc_ = value;
      else
        write(rt, value);
    } else {
      if (!store(addr, m.width, read(rt)))
        return false;
    }
    if (m.writeback == Writeback::PreIndex)
      write(m.base, addr);
    else if (m.writeback == Writeback::PostIndex)
      write(m.base, base + offset);
    return true;
  }

  bool multi_transfer() {
    const Op op = in_.op;
    const auto regs = list_regs(reglist_of(in_));
    const auto n = static_cast<std::uint32_t>(regs.size());
    const Reg base_reg = (op == Op::LDM || op == Op::STM)
                             ? in_.operands[0].reg
                             : Reg::SP;
    std::uint32_t base = read(base_reg);
    const bool is_load = op == Op::LDM || op == Op::POP;
    if ((op == Op::PUSH || op == Op::POP) && (base & 3)) {
      fault_ = StepFault{StepFault::Kind::MisalignedStack, base, 4,
                         is_load ? AccessKind::Read : AccessKind::Write};
      return false;
    }
    std::uint32_t start = op == Op::PUSH ? base - 4 * n : base;
    std::vector<std::uint32_t> loaded;
    for (std::uint32_t k = 0; k < n; ++k) {
      std::uint32_t addr = start + 4 * k;
      if (is_load) {
        std::uint32_t v = 0;
        if (!load(addr, 4, v))
          return false;
        loaded.push_back(v);
      } else {
        if (!store(addr, 4, read(regs[k])))
          return false;
      }
    }
    for (std::uint32_t k = 0; k < loaded.size(); ++k) {
      if (regs[k] == Reg::PC)
        next_pc_ = loaded[k];
      else
        write(regs[k], loaded[k]);
    }
    if (op == Op::PUSH)
      write(Reg::SP, start);
    else if (op == Op::POP)
      write(Reg::SP, base + 4 * n);
    else if (in_.base_writeback)
      write(base_reg, base + 4 * n);
    return true;
  }

  MachineState state_;
  MachineState state_snapshot_;
  const DecodedInstr &in_;
  MemoryBus &bus_;
  StepTrace *trace_;
  std::uint32_t next_pc_ = 0;
  std::vector<MemoryAccess> accesses_;
  StepFault fault_;
};

} // namespace

bool condition_passed(Cond c, std::uint32_t apsr) {
  const bool n = apsr & kFlagN, z = apsr & kFlagZ, cf = apsr & kFlagC,
             v = apsr & kFlagV;
  switch (c) {
  case Cond::EQ: return z;
  case Cond::NE: return !z;
  case Cond::CS: return cf;
  case Cond::CC: return !cf;
  case Cond::MI: return n;
  case Cond::PL: return !n;
  case Cond::VS: return v;
  case Cond::VC: return !v;
  case Cond::HI: return cf && !z;
  case Cond::LS: return !cf || z;
  case Cond::GE: return n == v;
  case Cond::LT: return n != v;
  case Cond::GT: return !z && n == v;
  case Cond::LE: return z || n != v;
  case Cond::AL: return true;
  }
  return true;
}

StepOutcome step_forward(const MachineState &state, const DecodedInstr &instr,
                         MemoryBus &bus, StepTrace *trace) {
  if (trace)
    *trace = {};
  Executor exec(state, instr, bus, trace);
  return exec.run();
}

FetchResult fetch(const Image &image, const MemoryBus &bus, std::uint32_t pc) {
  FetchResult r;
  if (bus.executable(pc))
    r.instr = image.find(pc);
  if (!r.instr)
    r.fault = StepFault{StepFault::Kind::UndecodableFetch, pc, 4,
                        AccessKind::Read};
  return r;
}

// ---------------------------------------------------------------------------

std::string_view origin_name(Origin o) {
  switch (o) {
  case Origin::ExplicitOperand: return "explicit";
  case Origin::BaseRegister: return "base";
  case Origin::IndexRegister: return "index";
  case Origin::Implicit: return "implicit";
  }
  return "?";
}

std::string to_string(const Location &loc) {
  if (!loc.is_mem)
    return std::string(reg_name(loc.reg));
  const MemSlot &m = loc.mem;
  std::string out = fmt::format("mem({}", reg_name(m.base));
  if (m.index) {
    out += fmt::format(", {}", reg_name(*m.index));
    if (m.shift)
      out += fmt::format(" LSL {}", m.shift);
  }
  out += fmt::format(", {}{}, w{})", m.disp < 0 ? "-" : "+",
                     m.disp < 0 ? -std::int64_t(m.disp) : m.disp, m.width);
  return out;
}

std::size_t Effect::memory_accesses() const {
  std::size_t n = 0;
  for (const auto &e : uses)
    n += e.loc.is_mem;
  for (const auto &e : defines)
    n += e.loc.is_mem;
  return n;
}

bool Effect::uses_reg(Reg r) const {
  for (const auto &e : uses)
    if (!e.loc.is_mem && e.loc.reg == r)
      return true;
  return false;
}

bool Effect::defines_reg(Reg r) const {
  for (const auto &e : defines)
    if (!e.loc.is_mem && e.loc.reg == r)
      return true;
  return false;
}

Effect effects(const DecodedInstr &in) {
  Effect fx;
  auto use = [&](Reg r, Origin o) {
    if (!fx.uses_reg(r))
      fx.uses.push_back({Location::of(r), o});
  };
  auto def = [&](Reg r, Origin o) {
    if (!fx.defines_reg(r))
      fx.defines.push_back({Location::of(r), o});
  };
  auto use_mem = [&](const MemSlot &m) {
    fx.uses.push_back({Location::of(m), Origin::ExplicitOperand});
  };
  auto def_mem = [&](const MemSlot &m) {
    fx.defines.push_back({Location::of(m), Origin::ExplicitOperand});
  };

  const Op op = in.op;
  if (is_data_processing(op)) {
    DpShape s = dp_shape(in);
    if (s.rn)
      use(*s.rn, Origin::ExplicitOperand);
    if (s.second->is_reg())
      use(s.second->reg, Origin::ExplicitOperand);
    if (op == Op::ADC || (in.sets_flags && partial_flag_update(op)))
      use(Reg::APSR, Origin::Implicit);
    def(s.rd, Origin::ExplicitOperand);
    if (in.sets_flags)
      def(Reg::APSR, Origin::Implicit);
  } else {
    switch (op) {
    case Op::CMP: case Op::CMN: case Op::TST:
      use(in.operands[0].reg, Origin::ExplicitOperand);
      if (in.operands[1].is_reg())
        use(in.operands[1].reg, Origin::ExplicitOperand);
      if (op == Op::TST)
        use(Reg::APSR, Origin::Implicit);
      def(Reg::APSR, Origin::Implicit);
      break;
    case Op::LDR: case Op::LDRB: case Op::LDRH:
    case Op::STR: case Op::STRB: case Op::STRH: {
      const Reg rt = in.operands[0].reg;
      const MemOperand &m = in.operands[1].mem;
      MemSlot slot{m.base, m.index, m.shift,
                   m.writeback == Writeback::PostIndex ? 0 : m.disp, m.width};
      if (is_single_load(op)) {
        use_mem(slot);
        use(m.base, Origin::BaseRegister);
        if (m.index)
          use(*m.index, Origin::IndexRegister);
        def(rt, Origin::ExplicitOperand);
      } else {
        use(rt, Origin::ExplicitOperand);
        use(m.base, Origin::BaseRegister);
        if (m.index)
          use(*m.index, Origin::IndexRegister);
        def_mem(slot);
      }
      if (m.writeback != Writeback::None)
        def(m.base, Origin::Implicit);
      break;
    }
    case Op::LDM: case Op::STM: case Op::PUSH: case Op::POP: {
      const auto regs = list_regs(reglist_of(in));
      const auto n = static_cast<std::int32_t>(regs.size());
      const bool multi = op == Op::LDM || op == Op::STM;
      const Reg base = multi ? in.operands[0].reg : Reg::SP;
      const Origin base_origin = multi ? Origin::BaseRegister : Origin::Implicit;
      const std::int32_t start = op == Op::PUSH ? -4 * n : 0;
      if (op == Op::LDM || op == Op::POP) {
        use(base, base_origin);
        for (std::int32_t k = 0; k < n; ++k)
          use_mem(MemSlot{base, std::nullopt, 0, start + 4 * k, 4});
        for (Reg r : regs)
          def(r, Origin::ExplicitOperand);
      } else {
        for (Reg r : regs)
          use(r, Origin::ExplicitOperand);
        use(base, base_origin);
        for (std::int32_t k = 0; k < n; ++k)
          def_mem(MemSlot{base, std::nullopt, 0, start + 4 * k, 4});
      }
      if (!multi || in.base_writeback)
        def(base, Origin::Implicit);
      break;
    }
    case Op::B:
      if (in.cond != Cond::AL)
        use(Reg::APSR, Origin::Implicit);
      break;
    case Op::BL:
      def(Reg::LR, Origin::Implicit);
      break;
    case Op::BX:
      use(in.operands[0].reg, Origin::ExplicitOperand);
      break;
    case Op::BLX:
      use(in.operands[0].reg, Origin::ExplicitOperand);
      def(Reg::LR, Origin::Implicit);
      break;
    default:
      break;
    }
  }
  def(Reg::PC, Origin::Implicit);
  return fx;
}

// ---------------------------------------------------------------------------
// Local solving.

namespace {

/// Serves reads from known slot values and records writes, checking every
/// address against what the view already knows.
class ReplayBus final : public MemoryBus {
public:
  explicit ReplayBus(const std::vector<SlotView> &slots) : slots_(slots) {}

  std::optional<std::uint32_t> read(std::uint32_t addr,
                                    std::uint8_t width) override {
    const SlotView *s = next(addr, width, false);
    if (!s || !s->value)
      return std::nullopt;
    return *s->value;
  }

  bool write(std::uint32_t addr, std::uint8_t width, std::uint32_t) override {
    return next(addr, width, true) != nullptr;
  }

  std::vector<std::uint32_t> addrs;

private:
  const SlotView *next(std::uint32_t addr, std::uint8_t width, bool write) {
    if (pos_ >= slots_.size())
      return nullptr;
    const SlotView &s = slots_[pos_++];
    if (s.write != write || s.width != width)
      return nullptr;
    addrs.push_back(addr);
    return &s;
  }

  const std::vector<SlotView> &slots_;
  std::size_t pos_ = 0;
};

class Solver {
public:
  Solver(const DecodedInstr &in, const Effect &fx, LocalView &v)
      : in_(in), fx_(fx), v_(v) {}

  bool run() {
    bool any = false;
    if (fx_.uses_reg(Reg::PC))
      set(v_.pre[reg_index(Reg::PC)], in_.address, "PC");
    while (true) {
      progress_ = false;
      address_rules();
      if (v_.complete) {
        value_rules();
        forward_all();
      }
      if (!progress_)
        break;
      any = true;
    }
    return any || initial_progress_;
  }

private:
  using Slot = std::optional<std::uint32_t>;

  void set(Slot &slot, std::uint32_t value, std::string_view what) {
    if (slot) {
      if (*slot != value)
        throw InconsistentEvidence(
            -1, fmt::format("{} at 0x{:x}: {} is 0x{:x} but evidence says 0x{:x}",
                            in_.text, in_.address, what, *slot, value));
      return;
    }
    slot = value;
    progress_ = true;
    initial_progress_ = true;
  }

  Slot &pre(Reg r) { return v_.pre[reg_index(r)]; }
  Slot &post(Reg r) { return v_.post[reg_index(r)]; }

  /// Value of a register source in the pre-state (PC reads as the address).
  Slot src(Reg r) {
    if (r == Reg::PC)
      return in_.address;
    return pre(r);
  }

  Slot operand(const Operand &o) {
    if (o.is_imm())
      return o.imm;
    return src(o.reg);
  }

  void address_rules() {
    const Op op = in_.op;
    if (is_single_load(op) || is_single_store(op)) {
      if (v_.mem.empty())
        return;
      const MemOperand &m = in_.operands[1].mem;
      SlotView &slot = v_.mem[0];
      Slot base = src(m.base);
      Slot offset;
      if (!m.index)
        offset = static_cast<std::uint32_t>(m.disp);
      else if (Slot idx = src(*m.index))
        offset = *idx << m.shift;
      const bool post_index = m.writeback == Writeback::PostIndex;
      // addr = base (+ offset unless post-indexed)
      if (base && (post_index || offset))
        set(slot.addr, post_index ? *base : *base + *offset, "address");
      if (slot.addr && m.base != Reg::PC) {
        if (post_index)
          set(pre(m.base), *slot.addr, reg_name(m.base));
        else if (offset)
          set(pre(m.base), *slot.addr - *offset, reg_name(m.base));
      }
      if (slot.addr && m.index && m.shift == 0 && *m.index != m.base) {
        if (Slot b = src(m.base))
          set(pre(*m.index), *slot.addr - *b, reg_name(*m.index));
      }
      if (!v_.complete || m.writeback == Writeback::None)
        return;
      // Writeback: pre-index leaves base = addr, post-index base = addr + disp.
      const std::uint32_t delta =
          post_index ? static_cast<std::uint32_t>(m.disp) : 0u;
      if (slot.addr)
        set(post(m.base), *slot.addr + delta, reg_name(m.base));
      if (Slot wb = post(m.base))
        set(slot.addr, *wb - delta, "address");
      return;
    }
    if (!is_multi_transfer(op))
      return;
    const bool multi = op == Op::LDM || op == Op::STM;
    const Reg base_reg = multi ? in_.operands[0].reg : Reg::SP;
    const auto n = static_cast<std::uint32_t>(v_.mem.size());
    const std::uint32_t start = op == Op::PUSH ? 0u - 4 * n : 0u;
    Slot &base = pre(base_reg);
    if (!base) {
      for (std::uint32_t k = 0; k < n; ++k)
        if (v_.mem[k].addr) {
          set(base, *v_.mem[k].addr - start - 4 * k, reg_name(base_reg));
          break;
        }
    }
    const bool writeback = !multi || in_.base_writeback;
    const std::uint32_t step = op == Op::PUSH ? 0u - 4 * n : 4 * n;
    if (!base && writeback && v_.complete && post(base_reg))
      set(base, *post(base_reg) - step, reg_name(base_reg));
    if (!base)
      return;
    const std::uint32_t b = *base;
    for (std::uint32_t k = 0; k < n; ++k)
      set(v_.mem[k].addr, b + start + 4 * k, "address");
    if (writeback && v_.complete)
      set(post(base_reg), b + step, reg_name(base_reg));
  }

  void value_rules() {
    const Op op = in_.op;
    if (is_data_processing(op)) {
      dp_rules();
      return;
    }
    switch (op) {
    case Op::LDR: case Op::LDRB: case Op::LDRH: {
      if (v_.mem.empty())
        return;
      const Reg rt = in_.operands[0].reg;
      bind(post(rt), v_.mem[0].value, reg_name(rt));
      return;
    }
    case Op::STR: case Op::STRB: case Op::STRH: {
      if (v_.mem.empty())
        return;
      const Reg rt = in_.operands[0].reg;
      SlotView &s = v_.mem[0];
      if (Slot v = src(rt))
        set(s.value, *v & width_mask(s.width), "stored value");
      if (s.width == 4 && s.value && rt != Reg::PC)
        set(pre(rt), *s.value, reg_name(rt));
      return;
    }
    case Op::LDM: case Op::POP: {
      const auto regs = list_regs(reglist_of(in_));
      for (std::size_t k = 0; k < regs.size() && k < v_.mem.size(); ++k)
        bind(post(regs[k]), v_.mem[k].value, reg_name(regs[k]));
      return;
    }
    case Op::STM: case Op::PUSH: {
      const auto regs = list_regs(reglist_of(in_));
      for (std::size_t k = 0; k < regs.size() && k < v_.mem.size(); ++k)
        bind(pre(regs[k]), v_.mem[k].value, reg_name(regs[k]));
      return;
    }
    case Op::BL:
      set(post(Reg::LR), in_.address + 4, "LR");
      return;
    case Op::BX:
    case Op::BLX: {
      const Reg rm = in_.operands[0].reg;
      bind(pre(rm), post(Reg::PC), reg_name(rm));
      if (op == Op::BLX)
        set(post(Reg::LR), in_.address + 4, "LR");
      return;
    }
    default:
      return;
    }
  }

  /// Two-way equality between slots.
  void bind(Slot &a, Slot &b, std::string_view what) {
    if (a && !b)
      set(b, *a, what);
    else if (b)
      set(a, *b, what);
  }

  void dp_rules() {
    const Op op = in_.op;
    DpShape s = dp_shape(in_);
    Slot &d = post(s.rd);
    if (op == Op::MOV || op == Op::MVN) {
      const std::uint32_t flip = op == Op::MVN ? 0xFFFFFFFFu : 0u;
      if (s.second->is_imm()) {
        set(d, s.second->imm ^ flip, reg_name(s.rd));
        return;
      }
      const Reg rm = s.second->reg;
      if (Slot m = src(rm))
        set(d, *m ^ flip, reg_name(s.rd));
      if (d && rm != Reg::PC)
        set(pre(rm), *d ^ flip, reg_name(rm));
      return;
    }

    Slot a = src(*s.rn);
    Slot b = operand(*s.second);
    std::optional<std::uint32_t> carry;
    if (Slot apsr = pre(Reg::APSR))
      carry = (*apsr & kFlagC) ? 1u : 0u;
    // The same register on both inputs makes the relation non-injective.
    const bool same_inputs =
        s.second->is_reg() && s.second->reg == *s.rn;

    auto solve_a = [&](std::uint32_t value) {
      if (*s.rn != Reg::PC)
        set(pre(*s.rn), value, reg_name(*s.rn));
    };
    auto solve_b = [&](std::uint32_t value) {
      if (s.second->is_reg() && s.second->reg != Reg::PC)
        set(pre(s.second->reg), value, reg_name(s.second->reg));
    };

    switch (op) {
    case Op::ADD:
    case Op::SUB:
    case Op::RSB:
    case Op::EOR:
    case Op::ADC: {
      std::uint32_t c = 0;
      if (op == Op::ADC) {
        if (!carry)
          return;
        c = *carry;
      }
      auto fwd = [&](std::uint32_t x, std::uint32_t y) -> std::uint32_t {
        switch (op) {
        case Op::ADD: return x + y;
        case Op::ADC: return x + y + c;
        case Op::SUB: return x - y;
        case Op::RSB: return y - x;
        default: return x ^ y;
        }
      };
      if (a && b)
        set(d, fwd(*a, *b), reg_name(s.rd));
      if (same_inputs || !d)
        return;
      // Recover one input from the result and the other input.
      if (b && !a) {
        switch (op) {
        case Op::ADD: solve_a(*d - *b); break;
        case Op::ADC: solve_a(*d - *b - c); break;
        case Op::SUB: solve_a(*d + *b); break;
        case Op::RSB: solve_a(*b - *d); break;
        default: solve_a(*d ^ *b); break;
        }
      } else if (a && !b) {
        switch (op) {
        case Op::ADD: solve_b(*d - *a); break;
        case Op::ADC: solve_b(*d - *a - c); break;
        case Op::SUB: solve_b(*a - *d); break;
        case Op::RSB: solve_b(*d + *a); break;
        default: solve_b(*d ^ *a); break;
        }
      }
      return;
    }
    case Op::AND:
    case Op::ORR:
    case Op::BIC:
    case Op::MUL:
      if (a && b) {
        std::uint32_t r = op == Op::AND   ? *a & *b
                          : op == Op::ORR ? *a | *b
                          : op == Op::BIC ? *a & ~*b
                                          : *a * *b;
        set(d, r, reg_name(s.rd));
      }
      return;
    case Op::LSL:
    case Op::LSR:
    case Op::ASR:
    case Op::ROR: {
      if (!b)
        return;
      const std::uint32_t amount = s.second->is_imm() ? *b : (*b & 0xFF);
      if (a)
        set(d, shift_value(op, *a, amount).value, reg_name(s.rd));
      if (!d || same_inputs)
        return;
      // Zero shifts and rotations lose no bits.
      if (amount == 0)
        solve_a(*d);
      else if (op == Op::ROR)
        solve_a(std::rotl(*d, static_cast<int>(amount & 31)));
      return;
    }
    default:
      return;
    }
  }

  /// Runs the instruction forward once every input is Known.
  void forward_all() {
    if (v_.replayed)
      return;
    MachineState st;
    for (const auto &e : fx_.uses) {
      if (e.loc.is_mem)
        continue;
      Slot v = src(e.loc.reg);
      if (!v)
        return;
      st[e.loc.reg] = *v;
    }
    for (const auto &s : v_.mem)
      if (!s.write && !s.value)
        return;
    st[Reg::PC] = in_.address;
    ReplayBus bus(v_.mem);
    StepOutcome out = step_forward(st, in_, bus);
    if (out.fault)
      return;
    v_.replayed = true;
    for (std::size_t k = 0; k < v_.mem.size() && k < bus.addrs.size(); ++k)
      set(v_.mem[k].addr, bus.addrs[k], "address");
    std::size_t w = 0;
    for (std::size_t k = 0; k < v_.mem.size(); ++k) {
      if (!v_.mem[k].write)
        continue;
      while (w < out.accesses.size() &&
             out.accesses[w].kind != AccessKind::Write)
        ++w;
      if (w < out.accesses.size())
        set(v_.mem[k].value, out.accesses[w++].value, "stored value");
    }
    for (const auto &e : fx_.defines)
      if (!e.loc.is_mem)
        set(post(e.loc.reg), out.state[e.loc.reg], reg_name(e.loc.reg));
  }

  const DecodedInstr &in_;
  const Effect &fx_;
  LocalView &v_;
  bool progress_ = false;
  bool initial_progress_ = false;
};

} // namespace

bool solve_local(const DecodedInstr &instr, const Effect &effect,
                 LocalView &view) {
  Solver solver(instr, effect, view);
  return solver.run();
}

PartialRegs invert(const DecodedInstr &instr, const PartialRegs &after,
                   const std::vector<MemoryAccess> &events) {
  const Effect fx = effects(instr);
  LocalView view;
  for (std::size_t i = 0; i < kNumLocations; ++i) {
    const Reg r = reg_from_index(i);
    if (fx.defines_reg(r))
      view.post[i] = after[i];
    else
      view.pre[i] = after[i];
  }
  std::size_t slots = 0;
  auto add_slot = [&](const EffectEntry &e, bool write) {
    if (!e.loc.is_mem)
      return;
    SlotView s;
    s.width = e.loc.mem.width;
    s.write = write;
    view.mem.push_back(s);
    ++slots;
  };
  for (const auto &e : fx.uses)
    add_slot(e, false);
  for (const auto &e : fx.defines)
    add_slot(e, true);
  if (!events.empty()) {
    if (events.size() != slots)
      throw Error(ErrorCode::EventArityMismatch,
                  fmt::format("{} expects {} data events, got {}", instr.text,
                              slots, events.size()));
    for (std::size_t k = 0; k < slots; ++k) {
      const MemoryAccess &ev = events[k];
      if ((ev.kind == AccessKind::Write) != view.mem[k].write ||
          ev.width != view.mem[k].width)
        throw InconsistentEvidence(
            -1, fmt::format("{}: data event {} does not match the operand",
                            instr.text, k));
      view.mem[k].addr = ev.addr;
      view.mem[k].value = ev.value;
    }
  }

  solve_local(instr, fx, view);

  PartialRegs before{};
  for (std::size_t i = 0; i < kNumLocations; ++i) {
    const Reg r = reg_from_index(i);
    if (fx.uses_reg(r) || !fx.defines_reg(r))
      before[i] = view.pre[i];
  }
  before[reg_index(Reg::PC)] = instr.address;
  return before;
}

} // namespace rca
