// SPDX-License-Identifier: Apache-2.0
#include "rca/taint.hpp"

#include "rca/error.hpp"

#include <fmt/format.h>

#include <algorithm>

namespace rca {

namespace {

bool followed(const UdNode &n) {
  return n.loc.is_mem || (n.loc.reg != Reg::APSR && n.loc.reg != Reg::PC);
}

/// The use nodes that determine the new PC of a control transfer.
std::vector<NodeId> pc_sources(const UseDefChain &c, const Instance &inst) {
  const DecodedInstr &in = *inst.instr;
  std::vector<NodeId> out;
  if (!modifies_pc(in))
    return out;
  if (in.op == Op::BX || in.op == Op::BLX || in.op == Op::MOV) {
    const Reg src = in.op == Op::MOV ? in.operands[1].reg : in.operands[0].reg;
    for (NodeId n = inst.first; n < inst.def_begin; ++n)
      if (!c.nodes[n].loc.is_mem && c.nodes[n].loc.reg == src)
        out.push_back(n);
  } else if (in.op == Op::LDR || in.op == Op::POP || in.op == Op::LDM) {
    // PC is the highest listed register, so it comes from the last slot.
    for (NodeId n = inst.def_begin; n-- > inst.first;)
      if (c.nodes[n].loc.is_mem) {
        out.push_back(n);
        break;
      }
  }
  return out;
}

[[noreturn]] void unsupported(const std::string &msg) {
  throw Error(ErrorCode::UnsupportedCrashShape, msg);
}

} // namespace

std::string describe_node(const UseDefChain &chain, NodeId n) {
  const UdNode &node = chain.nodes[n];
  if (!node.loc.is_mem)
    return std::string(reg_name(node.loc.reg));
  if (node.addr)
    return fmt::format("mem 0x{:x}", *node.addr);
  return to_string(node.loc);
}

TaintSink identify_sink(const UseDefChain &chain) {
  if (!chain.crash)
    throw Error(ErrorCode::MissingCrashRecord, "footprint has no crash record");
  if (chain.instances.empty())
    unsupported("empty chain");
  const CrashDescriptor &crash = *chain.crash;
  const auto last = static_cast<std::uint32_t>(chain.instances.size() - 1);
  const Instance &site = chain.instances[last];
  if (site.trace_index != crash.trace_index)
    unsupported("crash record does not match the last action");

  TaintSink sink;
  sink.instance = last;
  sink.trace_index = site.trace_index;
  auto reg_use = [&](const Instance &inst, Reg r) {
    for (NodeId n = inst.first; n < inst.def_begin; ++n)
      if (!chain.nodes[n].loc.is_mem && chain.nodes[n].loc.reg == r)
        return n;
    return kNoNode;
  };

  if (crash.reason != CrashReason::InvalidInstructionExecution) {
    const DecodedInstr &in = *site.instr;
    if (const MemOperand *m = in.mem_operand()) {
      sink.nodes.push_back(reg_use(site, m->base));
      if (m->index && *m->index != m->base)
        sink.nodes.push_back(reg_use(site, *m->index));
    } else if (is_multi_transfer(in.op)) {
      const Reg base = in.op == Op::LDM || in.op == Op::STM
                           ? in.operands[0].reg
                           : Reg::SP;
      sink.nodes.push_back(reg_use(site, base));
    } else {
      unsupported(fmt::format("memory crash at 0x{:x} but '{}' has no memory "
                              "operand",
                              site.pc, in.text));
    }
    return sink;
  }

  if (!crash.culprit)
    unsupported("execution crash without culprit");
  const Culprit &cu = *crash.culprit;
  switch (cu.kind) {
  case Culprit::Kind::ExplicitPop:
    for (NodeId n = site.first; n < site.def_begin; ++n) {
      const UdNode &u = chain.nodes[n];
      if (u.loc.is_mem && u.addr && *u.addr == cu.stack_addr)
        sink.nodes.push_back(n);
    }
    if (sink.nodes.empty()) {
      // Without events the slot address may still be unknown; fall back to
      // the slot that loaded PC.
      sink.nodes = pc_sources(chain, site);
    }
    if (sink.nodes.empty())
      unsupported(fmt::format("no stack slot 0x{:x} read by '{}'",
                              cu.stack_addr, site.instr->text));
    return sink;
  case Culprit::Kind::ImplicitRegister: {
    NodeId n = reg_use(site, cu.reg);
    if (n == kNoNode)
      unsupported(fmt::format("'{}' does not use {}", site.instr->text,
                              reg_name(cu.reg)));
    sink.nodes.push_back(n);
    return sink;
  }
  case Culprit::Kind::SequentialOverrun:
    // Execution ran off the end of a block: blame the transfer that led
    // there.
    for (std::uint32_t i = last + 1; i-- > 0;) {
      const Instance &inst = chain.instances[i];
      const bool taken = i == last || chain.instances[i + 1].pc != inst.pc + 4;
      if (!modifies_pc(*inst.instr) || !taken)
        continue;
      auto nodes = pc_sources(chain, inst);
      if (nodes.empty())
        unsupported(fmt::format("control transfer '{}' has no register or "
                                "memory source",
                                inst.instr->text));
      sink.instance = i;
      sink.trace_index = inst.trace_index;
      sink.nodes = std::move(nodes);
      return sink;
    }
    unsupported("no control transfer precedes the overrun");
  }
  unsupported("unknown culprit");
}

TaintResult propagate(const UseDefChain &chain, const TaintSink &sink) {
  TaintResult r;
  r.tainted.assign(chain.instances.size(), false);
  std::vector<bool> seen(chain.nodes.size(), false);
  std::vector<bool> def_seen(chain.nodes.size(), false);
  std::vector<NodeId> work;
  for (NodeId n : sink.nodes)
    if (n != kNoNode && !seen[n]) {
      seen[n] = true;
      work.push_back(n);
    }
  // The crash site is tainted even if its sink is a live-in.
  if (chain.crash && !chain.instances.empty())
    r.tainted.back() = true;

  while (!work.empty()) {
    const NodeId h = work.back();
    work.pop_back();
    ++r.visited;
    r.tainted[chain.nodes[h].instance] = true;
    if (chain.unresolved[h]) {
      ++r.unresolved;
      continue;
    }
    auto follow = [&](NodeId d) {
      const UdNode &def = chain.nodes[d];
      r.tainted[def.instance] = true;
      if (def_seen[d])
        return;
      def_seen[d] = true;
      if (def.loc.is_mem)
        r.reached_memory_defines.push_back(d);
      const Instance &src = chain.instances[def.instance];
      for (NodeId u = src.first; u < src.def_begin; ++u)
        if (!seen[u] && followed(chain.nodes[u])) {
          seen[u] = true;
          work.push_back(u);
        }
    };
    if (chain.reach[h] == kNoNode)
      continue;
    follow(chain.reach[h]);
    // A partly overwritten word also depends on its older bytes.
    if (chain.nodes[h].loc.is_mem) {
      auto it = std::lower_bound(
          chain.partial_reach.begin(), chain.partial_reach.end(),
          std::pair<NodeId, NodeId>{h, 0});
      for (; it != chain.partial_reach.end() && it->first == h; ++it)
        follow(it->second);
    }
  }

  for (std::size_t i = 0; i < chain.instances.size(); ++i)
    if (r.tainted[i])
      r.occurrences.emplace_back(chain.instances[i].trace_index,
                                 chain.instances[i].pc);
  for (const auto &o : r.occurrences)
    r.addresses.push_back(o.second);
  std::sort(r.addresses.begin(), r.addresses.end());
  r.addresses.erase(std::unique(r.addresses.begin(), r.addresses.end()),
                    r.addresses.end());
  return r;
}

} // namespace rca
