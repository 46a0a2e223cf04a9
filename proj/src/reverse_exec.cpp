// SPDX-License-Identifier: Apache-2.0
#include "rca/reverse_exec.hpp"

#include "rca/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <ostream>
#include <unordered_map>

namespace rca {

namespace {

bool is_mem_node(const UdNode &n) { return n.loc.is_mem; }

bool ranges_overlap(std::uint32_t a, std::uint8_t aw, std::uint32_t b,
                    std::uint8_t bw) {
  return std::uint64_t(a) < std::uint64_t(b) + bw &&
         std::uint64_t(b) < std::uint64_t(a) + aw;
}

std::string opt_hex(const std::optional<std::uint32_t> &v) {
  return v ? fmt::format("\"0x{:x}\"", *v) : "null";
}

/// Fixpoint engine over one chain.
class Recovery {
public:
  Recovery(UseDefChain &c, RecoveryMode mode) : c_(c), mode_(mode) {}

  RecoveryStats run() {
    c_.mode = mode_;
    if (mode_ == RecoveryMode::NoEvents)
      mask_events();
    seed();
    index_users();
    index_mem_defines();
    c_.reach.assign(c_.nodes.size(), kNoNode);
    rebuild_register_reach();
    c_.unresolved.assign(c_.nodes.size(), false);
    pending_.clear();
    for (const UdNode &n : c_.nodes)
      if (n.kind == NodeKind::Use && is_mem_node(n))
        pending_.push_back(n.id);
    link_head_.assign(c_.cells.size(), kNoLink);
    link_edges_.clear();

    // Event addresses are known up front, so aliases can be linked before
    // any instance is solved.
    if (mode_ == RecoveryMode::WithEvents)
      resolve_with_byte_map();
    for (std::size_t i = c_.instances.size(); i-- > 0;)
      enqueue(static_cast<std::uint32_t>(i));
    while (true) {
      drain();
      if (!resolve_by_scan() && dirty_count_ == 0)
        break;
    }
    for (NodeId u : pending_)
      c_.unresolved[u] = true;
    collect_partial_suppliers();
    c_.recovered = true;
    RecoveryStats s = chain_stats(c_);
    s.instance_visits = visits_;
    return s;
  }

private:
  void mask_events() {
    for (UdNode &n : c_.nodes)
      if (is_mem_node(n)) {
        n.addr.reset();
        c_.cells[n.cell].reset();
      }
  }

  void seed() {
    // Each completed action's PC define is the next action's pc.
    for (std::size_t i = 0; i < c_.instances.size(); ++i) {
      const Instance &inst = c_.instances[i];
      std::optional<std::uint32_t> next_pc;
      if (i + 1 < c_.instances.size())
        next_pc = c_.instances[i + 1].pc;
      else if (c_.crash &&
               c_.crash->reason == CrashReason::InvalidInstructionExecution)
        next_pc = c_.crash->fault_addr;
      if (!next_pc)
        continue;
      for (NodeId n = inst.def_begin; n < inst.end; ++n) {
        UdNode &node = c_.nodes[n];
        if (!is_mem_node(node) && node.loc.reg == Reg::PC)
          set_cell(node.cell, *next_pc, n, false);
      }
    }
    // A single faulting access happened at the reported address.
    if (c_.crash && c_.crash->reason != CrashReason::InvalidInstructionExecution &&
        !c_.instances.empty()) {
      const Instance &inst = c_.instances.back();
      std::vector<NodeId> mem;
      for (NodeId n = inst.first; n < inst.end; ++n)
        if (is_mem_node(c_.nodes[n]))
          mem.push_back(n);
      if (mem.size() == 1 && !is_multi_transfer(inst.instr->op))
        set_addr(mem.front(), c_.crash->fault_addr);
    }
  }

  void index_users() {
    user_begin_.assign(c_.cells.size() + 1, 0);
    for (const UdNode &n : c_.nodes)
      ++user_begin_[n.cell + 1];
    for (std::size_t i = 1; i < user_begin_.size(); ++i)
      user_begin_[i] += user_begin_[i - 1];
    users_.assign(c_.nodes.size(), 0);
    std::vector<std::uint32_t> fill(user_begin_.begin(), user_begin_.end() - 1);
    for (const UdNode &n : c_.nodes)
      users_[fill[n.cell]++] = n.instance;
  }

  void index_mem_defines() {
    mem_defs_.clear();
    for (const UdNode &n : c_.nodes)
      if (n.kind == NodeKind::Define && is_mem_node(n) &&
          c_.instances[n.instance].complete)
        mem_defs_.push_back(n.id);
  }

  void rebuild_register_reach() {
    std::array<NodeId, kNumLocations> last{};
    last.fill(kNoNode);
    for (const Instance &inst : c_.instances) {
      for (NodeId n = inst.first; n < inst.def_begin; ++n) {
        const UdNode &u = c_.nodes[n];
        if (!is_mem_node(u))
          c_.reach[n] = last[reg_index(u.loc.reg)];
      }
      for (NodeId n = inst.def_begin; n < inst.end; ++n) {
        const UdNode &d = c_.nodes[n];
        if (!is_mem_node(d))
          last[reg_index(d.loc.reg)] = n;
      }
    }
  }

  void enqueue(std::uint32_t inst) {
    if (dirty_.size() != c_.instances.size())
      dirty_.assign(c_.instances.size(), false);
    if (dirty_[inst])
      return;
    dirty_[inst] = true;
    ++dirty_count_;
  }

  void set_addr(NodeId n, std::uint32_t addr) {
    UdNode &node = c_.nodes[n];
    if (node.addr) {
      if (*node.addr != addr)
        throw InconsistentEvidence(
            n, fmt::format("node {}: address 0x{:x} conflicts with 0x{:x}", n,
                           addr, *node.addr));
      return;
    }
    node.addr = addr;
    if (!user_begin_.empty())
      enqueue(node.instance);
  }

  /// Sets a cell and everything linked to it by exact memory aliasing.
  void set_cell(std::uint32_t cell, std::uint32_t value, NodeId blame,
                bool notify = true) {
    stack_.clear();
    stack_.push_back(cell);
    while (!stack_.empty()) {
      std::uint32_t c = stack_.back();
      stack_.pop_back();
      auto &slot = c_.cells[c];
      if (slot) {
        if (*slot != value)
          throw InconsistentEvidence(
              blame, fmt::format("node {}: value 0x{:x} conflicts with 0x{:x}",
                                 blame, value, *slot));
        continue;
      }
      slot = value;
      // The blamed instance already holds its own fixpoint for `cell`.
      const std::uint32_t self = c == cell ? c_.nodes[blame].instance : kNoLink;
      if (notify)
        for (std::uint32_t k = user_begin_[c]; k < user_begin_[c + 1]; ++k)
          if (users_[k] != self)
            enqueue(users_[k]);
      if (c < link_head_.size())
        for (std::uint32_t e = link_head_[c]; e != kNoLink;
             e = link_edges_[e].next)
          stack_.push_back(link_edges_[e].cell);
    }
  }

  /// Alternating forward and backward sweeps over dirty instances, so a
  /// value travels the whole trace in one sweep. Forward goes first: loads
  /// and the entry state feed most of what follows.
  void drain() {
    LocalView view;
    bool forward = true;
    while (dirty_count_ > 0) {
      const std::size_t n = c_.instances.size();
      for (std::size_t k = 0; k < n; ++k) {
        const std::uint32_t i = static_cast<std::uint32_t>(forward ? k : n - 1 - k);
        if (!dirty_[i])
          continue;
        dirty_[i] = false;
        --dirty_count_;
        ++visits_;
        solve(i, view);
      }
      forward = !forward;
    }
  }

  void solve(std::uint32_t i, LocalView &view) {
    const Instance &inst = c_.instances[i];
    view.pre.fill(std::nullopt);
    view.post.fill(std::nullopt);
    view.mem.clear();
    view.complete = inst.complete;
    if (replayed_.size() != c_.instances.size())
      replayed_.assign(c_.instances.size(), false);
    view.replayed = replayed_[i];
    for (NodeId n = inst.first; n < inst.end; ++n) {
      const UdNode &node = c_.nodes[n];
      const bool use = n < inst.def_begin;
      if (is_mem_node(node)) {
        view.mem.push_back(
            {node.addr, c_.cells[node.cell], node.width, !use});
      } else {
        auto &slot = use ? view.pre : view.post;
        slot[reg_index(node.loc.reg)] = c_.cells[node.cell];
      }
    }
    try {
      const bool progress = solve_local(*inst.instr, effect_of(i), view);
      replayed_[i] = view.replayed;
      if (!progress)
        return;
    } catch (const InconsistentEvidence &e) {
      throw InconsistentEvidence(
          inst.first, fmt::format("node {} (trace {}): {}", inst.first,
                                  inst.trace_index, e.what()));
    }
    std::size_t k = 0;
    for (NodeId n = inst.first; n < inst.end; ++n) {
      const UdNode &node = c_.nodes[n];
      const bool use = n < inst.def_begin;
      std::optional<std::uint32_t> v;
      if (is_mem_node(node)) {
        const SlotView &s = view.mem[k++];
        if (s.addr && !node.addr)
          set_addr(n, *s.addr);
        v = s.value;
      } else {
        v = (use ? view.pre : view.post)[reg_index(node.loc.reg)];
      }
      if (v && !c_.cells[node.cell])
        set_cell(node.cell, *v, n);
    }
  }

  const Effect &effect_of(std::uint32_t i) {
    if (effect_ptr_.size() != c_.instances.size())
      effect_ptr_.assign(c_.instances.size(), nullptr);
    if (!effect_ptr_[i]) {
      const DecodedInstr *in = c_.instances[i].instr;
      auto it = effects_.find(in);
      if (it == effects_.end())
        it = effects_.emplace(in, effects(*in)).first;
      effect_ptr_[i] = &it->second;
    }
    return *effect_ptr_[i];
  }

  void add_link(std::uint32_t from, std::uint32_t to) {
    link_edges_.push_back({to, link_head_[from]});
    link_head_[from] = static_cast<std::uint32_t>(link_edges_.size() - 1);
  }

  /// Records that `use` reads what `def` wrote and, for an exact match,
  /// ties their values together.
  bool link(NodeId use, NodeId def) {
    c_.reach[use] = def;
    const UdNode &u = c_.nodes[use];
    const UdNode &d = c_.nodes[def];
    if (*u.addr != *d.addr || u.width != d.width)
      return false;
    add_link(u.cell, d.cell);
    add_link(d.cell, u.cell);
    const auto uv = c_.cells[u.cell];
    const auto dv = c_.cells[d.cell];
    if (uv && dv) {
      if (*uv != *dv)
        throw InconsistentEvidence(
            use, fmt::format("node {}: reads 0x{:x} but node {} wrote 0x{:x}",
                             use, *uv, def, *dv));
      return false;
    }
    if (uv)
      set_cell(d.cell, *uv, def);
    else if (dv)
      set_cell(u.cell, *dv, use);
    return uv || dv;
  }

  /// Bulk pass when every completed access has a known address: one sweep
  /// with a byte-to-last-writer map.
  bool resolve_with_byte_map() {
    std::unordered_map<std::uint32_t, NodeId> writer;
    writer.reserve(4 * mem_defs_.size());
    bool changed = false;
    std::vector<NodeId> still;
    std::size_t p = 0;
    for (const Instance &inst : c_.instances) {
      for (; p < pending_.size() && c_.nodes[pending_[p]].instance ==
                                        static_cast<std::uint32_t>(&inst - c_.instances.data());
           ++p) {
        const NodeId u = pending_[p];
        const UdNode &node = c_.nodes[u];
        if (!node.addr) {
          still.push_back(u);
          continue;
        }
        NodeId best = kNoNode;
        for (std::uint32_t b = 0; b < node.width; ++b) {
          auto it = writer.find(*node.addr + b);
          if (it != writer.end() && (best == kNoNode || it->second > best))
            best = it->second;
        }
        if (best != kNoNode)
          changed |= link(u, best);
      }
      if (!inst.complete)
        continue;
      for (NodeId n = inst.def_begin; n < inst.end; ++n) {
        const UdNode &d = c_.nodes[n];
        if (!is_mem_node(d))
          continue;
        if (!d.addr) {
          // Cannot happen with events bound; fall back to scanning.
          still.clear();
          return resolve_by_scan();
        }
        for (std::uint32_t b = 0; b < d.width; ++b)
          writer[*d.addr + b] = n;
      }
    }
    pending_ = std::move(still);
    return changed;
  }

  /// Walks back from each pending use through earlier memory defines. A
  /// define with an unknown address blocks the walk: it might alias.
  bool resolve_by_scan() {
    bool changed = false;
    std::vector<NodeId> still;
    for (NodeId u : pending_) {
      const UdNode &node = c_.nodes[u];
      if (!node.addr) {
        still.push_back(u);
        continue;
      }
      auto end = std::lower_bound(
          mem_defs_.begin(), mem_defs_.end(), u,
          [&](NodeId d, NodeId use) {
            return c_.nodes[d].instance < c_.nodes[use].instance;
          });
      bool blocked = false;
      NodeId found = kNoNode;
      for (auto it = end; it != mem_defs_.begin();) {
        --it;
        const UdNode &d = c_.nodes[*it];
        if (!d.addr) {
          blocked = true;
          break;
        }
        if (ranges_overlap(*node.addr, node.width, *d.addr, d.width)) {
          found = *it;
          break;
        }
      }
      if (blocked) {
        still.push_back(u);
        continue;
      }
      if (found != kNoNode)
        changed |= link(u, found);
    }
    pending_ = std::move(still);
    return changed;
  }

  /// A use linked to a define that covers only some of its bytes also
  /// reads the older writers of the rest. Writers older than a define of
  /// unknown address are not trusted.
  void collect_partial_suppliers() {
    c_.partial_reach.clear();
    std::unordered_map<std::uint32_t, NodeId> writer;
    writer.reserve(4 * mem_defs_.size());
    std::optional<std::uint32_t> blind; // latest instance with a blind store
    for (std::uint32_t i = 0; i < c_.instances.size(); ++i) {
      const Instance &inst = c_.instances[i];
      for (NodeId u = inst.first; u < inst.def_begin; ++u) {
        const UdNode &node = c_.nodes[u];
        const NodeId d = c_.reach[u];
        if (!is_mem_node(node) || !node.addr || d == kNoNode)
          continue;
        const UdNode &def = c_.nodes[d];
        const std::size_t mark = c_.partial_reach.size();
        for (std::uint32_t b = 0; b < node.width; ++b) {
          const std::uint32_t a = *node.addr + b;
          if (ranges_overlap(a, 1, *def.addr, def.width))
            continue;
          auto it = writer.find(a);
          if (it == writer.end() || it->second == d ||
              (blind && c_.nodes[it->second].instance < *blind))
            continue;
          bool dup = false;
          for (std::size_t k = mark; k < c_.partial_reach.size(); ++k)
            dup = dup || c_.partial_reach[k].second == it->second;
          if (!dup)
            c_.partial_reach.emplace_back(u, it->second);
        }
      }
      if (!inst.complete)
        continue;
      for (NodeId n = inst.def_begin; n < inst.end; ++n) {
        const UdNode &d = c_.nodes[n];
        if (!is_mem_node(d))
          continue;
        if (!d.addr) {
          blind = i;
          continue;
        }
        for (std::uint32_t b = 0; b < d.width; ++b)
          writer[*d.addr + b] = n;
      }
    }
  }

  UseDefChain &c_;
  RecoveryMode mode_;
  std::vector<std::uint32_t> user_begin_;
  std::vector<std::uint32_t> users_;
  static constexpr std::uint32_t kNoLink = 0xffffffffu;
  struct LinkEdge {
    std::uint32_t cell;
    std::uint32_t next;
  };
  std::vector<std::uint32_t> link_head_; // per cell, into link_edges_
  std::vector<LinkEdge> link_edges_;
  std::vector<std::uint32_t> stack_;
  std::vector<const Effect *> effect_ptr_;
  std::vector<bool> replayed_;
  std::vector<NodeId> mem_defs_;
  std::vector<NodeId> pending_;
  std::vector<bool> dirty_;
  std::size_t dirty_count_ = 0;
  std::unordered_map<const DecodedInstr *, Effect> effects_;
  std::size_t visits_ = 0;
};

} // namespace

UseDefChain build_chain(const Footprint &fp, const Image &image) {
  UseDefChain c;
  c.crash = fp.crash;
  const auto spans = data_spans(fp);
  std::array<std::optional<std::uint32_t>, kNumLocations> reg_cell{};
  std::unordered_map<const DecodedInstr *, Effect> cache;

  c.instances.reserve(fp.actions.size());
  for (std::size_t a = 0; a < fp.actions.size(); ++a) {
    const ActionEvent &act = fp.actions[a];
    const DecodedInstr *in = image.find(act.pc);
    if (!in)
      throw Error(ErrorCode::MissingInstruction,
                  fmt::format("trace {}: no instruction at 0x{:x}",
                              act.trace_index, act.pc));
    auto it = cache.find(in);
    if (it == cache.end())
      it = cache.emplace(in, effects(*in)).first;
    const Effect &fx = it->second;

    Instance inst;
    inst.trace_index = act.trace_index;
    inst.pc = act.pc;
    inst.instr = in;
    inst.complete = !(fp.crash && a + 1 == fp.actions.size() &&
                      fp.crash->reason != CrashReason::InvalidInstructionExecution);
    const auto [ev_begin, ev_end] = spans[a];
    const std::size_t expected = inst.complete ? fx.memory_accesses() : 0;
    if (ev_end - ev_begin != expected)
      throw Error(ErrorCode::EventArityMismatch,
                  fmt::format("trace {}: {} expects {} data events, found {}",
                              act.trace_index, in->text, expected,
                              ev_end - ev_begin));
    std::size_t ev = ev_begin;
    const auto instance_no = static_cast<std::uint32_t>(c.instances.size());

    auto add = [&](const EffectEntry &e, NodeKind kind) {
      UdNode n;
      n.id = static_cast<NodeId>(c.nodes.size());
      n.instance = instance_no;
      n.kind = kind;
      n.loc = e.loc;
      n.origin = e.origin;
      if (e.loc.is_mem) {
        n.width = e.loc.mem.width;
        n.cell = static_cast<std::uint32_t>(c.cells.size());
        c.cells.emplace_back();
        if (inst.complete) {
          const DataEvent &d = fp.data[ev++];
          const AccessKind want =
              kind == NodeKind::Use ? AccessKind::Read : AccessKind::Write;
          if (d.kind != want || d.width != n.width)
            throw Error(ErrorCode::EventArityMismatch,
                        fmt::format("trace {}: data event does not match "
                                    "operand {} of {}",
                                    act.trace_index, to_string(e.loc), in->text));
          n.addr = d.addr;
          c.cells.back() = d.value;
        }
      } else {
        const std::size_t r = reg_index(e.loc.reg);
        if (kind == NodeKind::Use) {
          if (!reg_cell[r]) {
            reg_cell[r] = static_cast<std::uint32_t>(c.cells.size());
            c.cells.emplace_back();
          }
          n.cell = *reg_cell[r];
        } else {
          n.cell = static_cast<std::uint32_t>(c.cells.size());
          c.cells.emplace_back();
        }
      }
      c.nodes.push_back(n);
    };

    inst.first = static_cast<NodeId>(c.nodes.size());
    for (const auto &e : fx.uses)
      add(e, NodeKind::Use);
    inst.def_begin = static_cast<NodeId>(c.nodes.size());
    for (const auto &e : fx.defines)
      add(e, NodeKind::Define);
    inst.end = static_cast<NodeId>(c.nodes.size());
    // Defines take effect after all uses of the same instance.
    for (NodeId n = inst.def_begin; n < inst.end; ++n)
      if (!c.nodes[n].loc.is_mem)
        reg_cell[reg_index(c.nodes[n].loc.reg)] = c.nodes[n].cell;
    c.instances.push_back(inst);
  }

  // Reaching defines as far as the bound events allow; recover() refines.
  c.reach.assign(c.nodes.size(), kNoNode);
  c.unresolved.assign(c.nodes.size(), false);
  std::array<NodeId, kNumLocations> last{};
  last.fill(kNoNode);
  std::unordered_map<std::uint32_t, NodeId> writer;
  for (const Instance &inst : c.instances) {
    for (NodeId n = inst.first; n < inst.def_begin; ++n) {
      const UdNode &u = c.nodes[n];
      if (!u.loc.is_mem) {
        c.reach[n] = last[reg_index(u.loc.reg)];
      } else if (!u.addr) {
        c.unresolved[n] = true;
      } else {
        for (std::uint32_t b = 0; b < u.width; ++b) {
          auto it = writer.find(*u.addr + b);
          if (it != writer.end() &&
              (c.reach[n] == kNoNode || it->second > c.reach[n]))
            c.reach[n] = it->second;
        }
      }
    }
    for (NodeId n = inst.def_begin; n < inst.end; ++n) {
      const UdNode &d = c.nodes[n];
      if (!d.loc.is_mem)
        last[reg_index(d.loc.reg)] = n;
      else if (d.addr)
        for (std::uint32_t b = 0; b < d.width; ++b)
          writer[*d.addr + b] = n;
    }
  }
  return c;
}

RecoveryStats recover(UseDefChain &chain, RecoveryMode mode) {
  Recovery r(chain, mode);
  return r.run();
}

RecoveryStats chain_stats(const UseDefChain &chain) {
  RecoveryStats s;
  s.nodes = chain.nodes.size();
  for (const UdNode &n : chain.nodes) {
    if (chain.cells[n.cell])
      ++s.known_values;
    if (n.loc.is_mem && n.addr)
      ++s.known_addresses;
    if (n.kind == NodeKind::Use && chain.unresolved[n.id])
      ++s.unresolved_uses;
  }
  return s;
}

std::optional<NodeId> reaching_define(const UseDefChain &chain, NodeId use) {
  if (use >= chain.nodes.size() || chain.nodes[use].kind != NodeKind::Use)
    throw Error(ErrorCode::OutOfRange, fmt::format("node {} is not a use", use));
  if (chain.unresolved[use])
    throw Error(ErrorCode::UnresolvedMemory,
                fmt::format("node {}: memory address is unresolved", use));
  const NodeId d = chain.reach[use];
  if (d == kNoNode)
    return std::nullopt;
  return d;
}

std::vector<NodeId> byte_suppliers(const UseDefChain &chain, NodeId use) {
  std::vector<NodeId> out;
  if (auto d = reaching_define(chain, use))
    out.push_back(*d);
  auto [lo, hi] = std::equal_range(
      chain.partial_reach.begin(), chain.partial_reach.end(),
      std::pair<NodeId, NodeId>{use, 0},
      [](const auto &a, const auto &b) { return a.first < b.first; });
  for (auto it = lo; it != hi; ++it)
    out.push_back(it->second);
  return out;
}

void dump_chain(const UseDefChain &chain, std::ostream &out) {
  for (const UdNode &n : chain.nodes) {
    const Instance &inst = chain.instances[n.instance];
    std::string loc = n.loc.is_mem ? to_string(n.loc)
                                    : std::string(reg_name(n.loc.reg));
    std::string def = "null";
    if (n.kind == NodeKind::Use) {
      if (chain.unresolved[n.id])
        def = "\"unresolved\"";
      else if (chain.reach[n.id] != kNoNode)
        def = std::to_string(chain.reach[n.id]);
    }
    out << fmt::format(
        R"({{"id":{},"i":{},"pc":"0x{:x}","kind":"{}","loc":"{}","origin":"{}","addr":{},"w":{},"val":{},"def":{}}})",
        n.id, inst.trace_index, inst.pc,
        n.kind == NodeKind::Use ? "use" : "def", loc, origin_name(n.origin),
        n.loc.is_mem ? opt_hex(n.addr) : "null", n.loc.is_mem ? n.width : 4,
        opt_hex(chain.cells[n.cell]), def)
        << '\n';
  }
}

} // namespace rca
