// SPDX-License-Identifier: Apache-2.0
#include "rca/microvm.hpp"

#include "rca/error.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <fstream>
#include <iterator>

namespace rca {

namespace {

[[noreturn]] void config_error(const std::string &msg) {
  throw Error(ErrorCode::Config, msg);
}

std::optional<std::uint32_t> parse_u32(std::string_view s) {
  std::uint64_t v = 0;
  int base = 10;
  if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
    base = 16;
    s.remove_prefix(2);
  }
  if (s.empty())
    return std::nullopt;
  for (char c : s) {
    int d;
    if (c >= '0' && c <= '9')
      d = c - '0';
    else if (base == 16 && c >= 'a' && c <= 'f')
      d = c - 'a' + 10;
    else if (base == 16 && c >= 'A' && c <= 'F')
      d = c - 'A' + 10;
    else
      return std::nullopt;
    v = v * base + d;
    if (v > 0xFFFFFFFFu)
      return std::nullopt;
  }
  return static_cast<std::uint32_t>(v);
}

std::uint32_t number_field(const nlohmann::json &obj, const char *key,
                           const std::string &where) {
  auto it = obj.find(key);
  if (it == obj.end())
    config_error(fmt::format("{}: missing \"{}\"", where, key));
  if (it->is_number_unsigned() && it->get<std::uint64_t>() <= 0xFFFFFFFFu)
    return static_cast<std::uint32_t>(it->get<std::uint64_t>());
  if (it->is_string())
    if (auto v = parse_u32(it->get<std::string>()))
      return *v;
  config_error(fmt::format("{}: \"{}\" must be a 32-bit number", where, key));
}

bool overlaps(std::uint32_t a, std::uint32_t as, std::uint32_t b,
              std::uint32_t bs) {
  return std::uint64_t(a) < std::uint64_t(b) + bs &&
         std::uint64_t(b) < std::uint64_t(a) + as;
}

void check_map(const MemoryMap &m) {
  if (m.regions.empty())
    config_error("memory map has no regions");
  for (std::size_t i = 0; i < m.regions.size(); ++i) {
    const Region &r = m.regions[i];
    if (r.size == 0)
      config_error(fmt::format("region '{}' is empty", r.name));
    if (std::uint64_t(r.base) + r.size > 0x100000000ull)
      config_error(fmt::format("region '{}' wraps the address space", r.name));
    for (std::size_t j = 0; j < i; ++j)
      if (overlaps(r.base, r.size, m.regions[j].base, m.regions[j].size))
        config_error(fmt::format("regions '{}' and '{}' overlap",
                                 m.regions[j].name, r.name));
    if (m.port && overlaps(r.base, r.size, m.port->base, m.port->size))
      config_error(fmt::format("region '{}' overlaps the input port", r.name));
  }
  if (m.port && (m.port->size == 0 ||
                 std::uint64_t(m.port->base) + m.port->size > 0x100000000ull))
    config_error("input port range is invalid");
}

/// Flat little-endian memory over the declared regions plus the input port.
class VmMemory final : public MemoryBus {
public:
  VmMemory(const MemoryMap &map, std::span<const std::uint8_t> stimulus)
      : port_(map.port), stimulus_(stimulus) {
    for (const Region &r : map.regions)
      stores_.push_back({r, std::vector<std::uint8_t>(r.size, r.fill)});
  }

  void load(const Image &image) {
    for (const DataSegment &seg : image.data)
      for (std::size_t i = 0; i < seg.bytes.size(); ++i) {
        const auto addr = static_cast<std::uint32_t>(seg.address + i);
        Store *s = find(addr, 1);
        if (!s)
          config_error(fmt::format("data byte at 0x{:x} is outside every region",
                                   addr));
        s->bytes[addr - s->region.base] = seg.bytes[i];
      }
    for (const auto &[addr, instr] : image.code)
      if (!executable(addr))
        config_error(fmt::format(
            "instruction at 0x{:x} is outside every executable region", addr));
  }

  std::optional<std::uint32_t> read(std::uint32_t addr,
                                    std::uint8_t width) override {
    if (in_port(addr, width)) {
      std::uint32_t v = 0;
      for (std::uint8_t i = 0; i < width; ++i) {
        std::uint32_t byte = pos_ < stimulus_.size() ? stimulus_[pos_] : 0;
        ++pos_;
        v |= byte << (8 * i);
      }
      return v;
    }
    Store *s = find(addr, width);
    if (!s || !s->region.readable)
      return std::nullopt;
    const std::uint8_t *p = s->bytes.data() + (addr - s->region.base);
    std::uint32_t v = 0;
    for (std::uint8_t i = 0; i < width; ++i)
      v |= std::uint32_t(p[i]) << (8 * i);
    return v;
  }

  bool write(std::uint32_t addr, std::uint8_t width,
             std::uint32_t value) override {
    Store *s = find(addr, width);
    if (!s || !s->region.writable)
      return false;
    std::uint8_t *p = s->bytes.data() + (addr - s->region.base);
    for (std::uint8_t i = 0; i < width; ++i)
      p[i] = static_cast<std::uint8_t>(value >> (8 * i));
    return true;
  }

  bool executable(std::uint32_t addr) const override {
    const Store *s = const_cast<VmMemory *>(this)->find(addr, 4);
    return s && s->region.executable;
  }

private:
  struct Store {
    Region region;
    std::vector<std::uint8_t> bytes;
  };

  bool in_port(std::uint32_t addr, std::uint8_t width) const {
    return port_ && addr >= port_->base &&
           std::uint64_t(addr) + width <= std::uint64_t(port_->base) + port_->size;
  }

  Store *find(std::uint32_t addr, std::uint32_t width) {
    if (last_ && last_->region.contains(addr, width))
      return last_;
    for (Store &s : stores_)
      if (s.region.contains(addr, width))
        return last_ = &s;
    return nullptr;
  }

  std::vector<Store> stores_;
  Store *last_ = nullptr;
  std::optional<InputPort> port_;
  std::span<const std::uint8_t> stimulus_;
  std::size_t pos_ = 0;
};

std::uint32_t resolve_entry(const MemoryMap &map, const Image &image) {
  if (map.entry.empty()) {
    if (auto it = image.labels.find("main"); it != image.labels.end())
      return it->second;
    if (image.code.empty())
      config_error("image has no instructions");
    return image.code.begin()->first;
  }
  if (auto v = parse_u32(map.entry))
    return *v;
  auto it = image.labels.find(map.entry);
  if (it == image.labels.end())
    config_error(fmt::format("entry label '{}' is not defined", map.entry));
  return it->second;
}

Culprit classify_culprit(const DecodedInstr &last,
                         const std::vector<MemoryAccess> &accesses) {
  Culprit c;
  const bool pc_load = modifies_pc(last) && !is_branch(last.op) &&
                       last.op != Op::MOV;
  if (pc_load && !accesses.empty()) {
    // PC is the highest register of a list, so its slot is the last read.
    c.kind = Culprit::Kind::ExplicitPop;
    c.stack_addr = accesses.back().addr;
  } else if (last.op == Op::BX || last.op == Op::BLX) {
    c.kind = Culprit::Kind::ImplicitRegister;
    c.reg = last.operands[0].reg;
  } else if (last.op == Op::MOV && modifies_pc(last)) {
    c.kind = Culprit::Kind::ImplicitRegister;
    c.reg = last.operands[1].reg;
  } else {
    c.kind = Culprit::Kind::SequentialOverrun;
  }
  return c;
}

} // namespace

MemoryMap parse_memory_map(std::string_view json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error &e) {
    config_error(fmt::format("memory map is not valid JSON: {}", e.what()));
  }
  if (!j.is_object())
    config_error("memory map must be a JSON object");
  MemoryMap m;
  auto regions = j.find("regions");
  if (regions == j.end() || !regions->is_array())
    config_error("memory map needs a \"regions\" array");
  for (const auto &r : *regions) {
    if (!r.is_object())
      config_error("region entries must be objects");
    Region reg;
    reg.name = r.value("name", fmt::format("region{}", m.regions.size()));
    const std::string where = fmt::format("region '{}'", reg.name);
    reg.base = number_field(r, "base", where);
    reg.size = number_field(r, "size", where);
    const std::string perms = r.value("perms", "");
    for (char c : perms) {
      bool *flag = c == 'r' ? &reg.readable
                   : c == 'w' ? &reg.writable
                   : c == 'x' ? &reg.executable
                              : nullptr;
      if (!flag || *flag)
        config_error(fmt::format("{}: bad perms '{}'", where, perms));
      *flag = true;
    }
    if (r.contains("fill")) {
      std::uint32_t fill = number_field(r, "fill", where);
      if (fill > 0xFF)
        config_error(fmt::format("{}: fill must be a byte", where));
      reg.fill = static_cast<std::uint8_t>(fill);
    }
    m.regions.push_back(reg);
  }
  if (auto p = j.find("input_port"); p != j.end() && !p->is_null()) {
    if (!p->is_object())
      config_error("input_port must be an object");
    m.port = InputPort{number_field(*p, "base", "input_port"),
                       number_field(*p, "size", "input_port")};
  }
  if (auto e = j.find("entry"); e != j.end()) {
    if (e->is_string())
      m.entry = e->get<std::string>();
    else
      m.entry = fmt::format("0x{:x}", number_field(j, "entry", "memory map"));
  }
  m.initial_sp = number_field(j, "initial_sp", "memory map");
  check_map(m);
  return m;
}

MemoryMap load_memory_map(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error(ErrorCode::Io, fmt::format("cannot open {}", path));
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_memory_map(text);
}

MemoryMap default_memory_map() {
  MemoryMap m;
  m.regions.push_back({"flash", 0x08000000u, 0x10000u, true, false, true, 0});
  m.regions.push_back({"ram", 0x20000000u, 0x10000u, true, true, false, 0});
  m.port = InputPort{0x40000000u, 0x100u};
  m.initial_sp = 0x20010000u;
  return m;
}

std::string_view outcome_name(RunOutcome o) {
  switch (o) {
  case RunOutcome::Crashed: return "crashed";
  case RunOutcome::Exited: return "exited";
  case RunOutcome::StepLimit: return "step_limit";
  }
  return "?";
}

RunResult run(const Image &image, const MemoryMap &map,
              std::span<const std::uint8_t> stimulus, std::uint64_t max_steps,
              const RunOptions &options) {
  check_map(map);
  if (max_steps < 1)
    config_error("max_steps must be at least 1");
  VmMemory mem(map, stimulus);
  mem.load(image);
  const std::uint32_t entry = resolve_entry(map, image);
  if (fetch(image, mem, entry).fault)
    config_error(fmt::format("entry 0x{:x} is not an executable instruction",
                             entry));

  RunResult result;
  Footprint &fp = result.footprint;
  fp.image = image.digest;
  fp.entry = entry;
  MachineState state;
  state[Reg::SP] = map.initial_sp;
  state[Reg::PC] = entry;

  const DecodedInstr *last = nullptr;
  std::vector<MemoryAccess> last_accesses;
  StepTrace touched;
  StepTrace *trace = options.on_step ? &touched : nullptr;

  result.outcome = RunOutcome::StepLimit;
  for (std::uint64_t i = 0; i < max_steps; ++i) {
    const std::uint32_t pc = state[Reg::PC];
    FetchResult f = fetch(image, mem, pc);
    if (f.fault) {
      // The instruction that produced this PC is the crash site.
      CrashDescriptor c;
      c.reason = CrashReason::InvalidInstructionExecution;
      c.trace_index = i - 1;
      c.pc = last->address;
      c.fault_addr = pc;
      c.culprit = classify_culprit(*last, last_accesses);
      fp.crash = c;
      result.outcome = RunOutcome::Crashed;
      break;
    }
    const DecodedInstr &in = *f.instr;
    if (options.emit_events)
      fp.actions.push_back({i, pc});
    result.steps = i + 1;
    if (in.op == Op::B && in.cond == Cond::AL && in.operands[0].imm == pc) {
      result.outcome = RunOutcome::Exited;
      break;
    }
    StepOutcome out = step_forward(state, in, mem, trace);
    if (options.on_step) {
      StepRecord rec;
      rec.trace_index = i;
      rec.instr = &in;
      rec.before = state;
      rec.after = out.state;
      rec.accesses = out.accesses;
      rec.touched = touched;
      rec.faulted = out.fault.has_value();
      options.on_step(rec);
    }
    if (out.fault) {
      CrashDescriptor c;
      c.reason = out.fault->access == AccessKind::Write
                     ? CrashReason::InvalidMemoryWrite
                     : CrashReason::InvalidMemoryRead;
      c.trace_index = i;
      c.pc = pc;
      c.fault_addr = out.fault->addr;
      fp.crash = c;
      result.outcome = RunOutcome::Crashed;
      break;
    }
    if (options.emit_events)
      for (const MemoryAccess &a : out.accesses)
        fp.data.push_back({i, pc, a.kind, a.addr, a.width, a.value});
    state = out.state;
    last = &in;
    last_accesses = std::move(out.accesses);
  }
  result.final_state = state;
  return result;
}

bool replay_check(const Image &image, const MemoryMap &map,
                  std::span<const std::uint8_t> stimulus,
                  const Footprint &footprint) {
  try {
    const std::uint64_t n = footprint.actions.size();
    RunResult again = run(image, map, stimulus, n + (footprint.crash ? 1 : 0));
    return footprint_to_string(again.footprint) ==
           footprint_to_string(footprint);
  } catch (const Error &) {
    return false;
  }
}

} // namespace rca
