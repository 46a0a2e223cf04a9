// SPDX-License-Identifier: Apache-2.0
#include "oracle.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <deque>
#include <optional>
#include <unordered_map>

namespace rca::testing {

namespace {

bool followed(std::size_t r) {
  return r != reg_index(Reg::APSR) && r != reg_index(Reg::PC);
}

// Which registers or bytes the crash ultimately blames, and at which step.
struct SinkShape {
  std::size_t step = 0;
  std::vector<Reg> regs;
  std::vector<std::uint32_t> bytes;
};

std::optional<SinkShape> sink_of(const Observation &obs) {
  const auto &crash = obs.result.footprint.crash;
  if (!crash || obs.steps.empty())
    return std::nullopt;
  SinkShape s;
  s.step = obs.steps.size() - 1;
  const DecodedInstr &in = *obs.steps.back().instr;
  auto word = [](std::uint32_t a) {
    return std::vector<std::uint32_t>{a, a + 1, a + 2, a + 3};
  };

  if (crash->reason != CrashReason::InvalidInstructionExecution) {
    if (in.op == Op::PUSH || in.op == Op::POP) {
      s.regs.push_back(Reg::SP);
    } else if (in.op == Op::LDM || in.op == Op::STM) {
      s.regs.push_back(in.operands[0].reg);
    } else {
      const MemOperand &m = in.operands[1].mem;
      s.regs.push_back(m.base);
      if (m.index)
        s.regs.push_back(*m.index);
    }
    return s;
  }
  switch (crash->culprit->kind) {
  case Culprit::Kind::ExplicitPop:
    s.bytes = word(crash->culprit->stack_addr);
    return s;
  case Culprit::Kind::ImplicitRegister:
    s.regs.push_back(crash->culprit->reg);
    return s;
  case Culprit::Kind::SequentialOverrun:
    break;
  }
  // The last transfer that actually left the straight line.
  for (std::size_t k = obs.steps.size(); k-- > 0;) {
    const StepRecord &r = obs.steps[k];
    if (r.after[Reg::PC] == r.before[Reg::PC] + 4)
      continue;
    s.step = k;
    const DecodedInstr &t = *r.instr;
    switch (t.op) {
    case Op::BX: case Op::BLX:
      s.regs.push_back(t.operands[0].reg);
      break;
    case Op::MOV:
      s.regs.push_back(t.operands[1].reg);
      break;
    case Op::LDR: case Op::POP: case Op::LDM:
      for (auto it = r.accesses.rbegin(); it != r.accesses.rend(); ++it)
        if (it->kind == AccessKind::Read) {
          s.bytes = word(it->addr);
          break;
        }
      break;
    default:
      break;
    }
    return s;
  }
  return s;
}

} // namespace

Observation observe(const Image &image, const MemoryMap &map,
                    std::span<const std::uint8_t> stimulus,
                    std::uint64_t max_steps) {
  Observation obs;
  RunOptions opt;
  opt.on_step = [&](const StepRecord &r) { obs.steps.push_back(r); };
  obs.result = run(image, map, stimulus, max_steps, opt);
  return obs;
}

std::vector<Occurrence> reachable_from_sink(const Observation &obs) {
  const auto sink = sink_of(obs);
  if (!sink)
    return {};
  const std::size_t n = obs.steps.size();
  std::vector<std::vector<std::size_t>> deps(n);
  std::array<std::optional<std::size_t>, kNumLocations> reg_writer{};
  std::unordered_map<std::uint32_t, std::size_t> byte_writer;
  std::vector<std::size_t> roots;

  for (std::size_t k = 0; k < n; ++k) {
    const StepRecord &r = obs.steps[k];
    if (k == sink->step) {
      for (Reg reg : sink->regs)
        if (auto w = reg_writer[reg_index(reg)])
          roots.push_back(*w);
      for (std::uint32_t b : sink->bytes)
        if (auto it = byte_writer.find(b); it != byte_writer.end())
          roots.push_back(it->second);
    }
    if (r.faulted)
      break;
    for (std::size_t reg = 0; reg < kNumLocations; ++reg)
      if ((r.touched.reads >> reg & 1u) && followed(reg) && reg_writer[reg])
        deps[k].push_back(*reg_writer[reg]);
    for (const MemoryAccess &a : r.accesses)
      if (a.kind == AccessKind::Read)
        for (std::uint32_t b = 0; b < a.width; ++b)
          if (auto it = byte_writer.find(a.addr + b); it != byte_writer.end())
            deps[k].push_back(it->second);
    for (std::size_t reg = 0; reg < kNumLocations; ++reg)
      if (r.touched.writes >> reg & 1u)
        reg_writer[reg] = k;
    for (const MemoryAccess &a : r.accesses)
      if (a.kind == AccessKind::Write)
        for (std::uint32_t b = 0; b < a.width; ++b)
          byte_writer[a.addr + b] = k;
  }

  std::vector<bool> tainted(n, false);
  tainted[sink->step] = true;
  tainted[n - 1] = true;
  std::deque<std::size_t> work(roots.begin(), roots.end());
  std::vector<bool> expanded(n, false);
  while (!work.empty()) {
    const std::size_t k = work.front();
    work.pop_front();
    tainted[k] = true;
    if (expanded[k])
      continue;
    expanded[k] = true;
    for (std::size_t d : deps[k])
      work.push_back(d);
  }
  std::vector<Occurrence> out;
  for (std::size_t k = 0; k < n; ++k)
    if (tainted[k])
      out.emplace_back(obs.steps[k].trace_index, obs.steps[k].instr->address);
  return out;
}

bool has_memory_alias(const Observation &obs) {
  std::unordered_map<std::uint32_t, bool> written;
  for (const StepRecord &r : obs.steps) {
    for (const MemoryAccess &a : r.accesses)
      if (a.kind == AccessKind::Read)
        for (std::uint32_t b = 0; b < a.width; ++b)
          if (written.count(a.addr + b))
            return true;
    for (const MemoryAccess &a : r.accesses)
      if (a.kind == AccessKind::Write)
        for (std::uint32_t b = 0; b < a.width; ++b)
          written[a.addr + b] = true;
  }
  return false;
}

std::vector<std::string> soundness_violations(const UseDefChain &chain,
                                              const Observation &obs) {
  std::vector<std::string> out;
  std::unordered_map<std::uint64_t, const StepRecord *> by_index;
  for (const StepRecord &r : obs.steps)
    by_index[r.trace_index] = &r;

  for (const Instance &inst : chain.instances) {
    auto it = by_index.find(inst.trace_index);
    if (it == by_index.end()) {
      out.push_back(fmt::format("trace {} was not observed", inst.trace_index));
      continue;
    }
    const StepRecord &r = *it->second;
    std::size_t mem_k = 0;
    for (NodeId n = inst.first; n < inst.end; ++n) {
      const UdNode &node = chain.nodes[n];
      const auto v = chain.value(n);
      const bool use = node.kind == NodeKind::Use;
      auto bad = [&](std::string_view what, std::uint32_t got,
                     std::uint32_t want) {
        out.push_back(fmt::format("trace {} '{}' node {} {}: 0x{:x} != 0x{:x}",
                                  inst.trace_index, inst.instr->text, n, what,
                                  got, want));
      };
      if (node.loc.is_mem) {
        const std::size_t k = mem_k++;
        if (!inst.complete) {
          if (v)
            bad("value of an access that never happened", *v, 0);
          continue;
        }
        const MemoryAccess &a = r.accesses.at(k);
        if (node.addr && *node.addr != a.addr)
          bad("address", *node.addr, a.addr);
        if (v && *v != a.value)
          bad("value", *v, a.value);
        continue;
      }
      if (!v)
        continue;
      if (use) {
        if (*v != r.before[node.loc.reg])
          bad(reg_name(node.loc.reg), *v, r.before[node.loc.reg]);
      } else if (!inst.complete) {
        bad("define of a faulted instruction", *v, 0);
      } else if (*v != r.after[node.loc.reg]) {
        bad(reg_name(node.loc.reg), *v, r.after[node.loc.reg]);
      }
    }
  }
  return out;
}

} // namespace rca::testing
