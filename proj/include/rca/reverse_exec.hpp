// SPDX-License-Identifier: Apache-2.0
//
// Use-define chain over a footprint and backward value recovery.
#pragma once

#include "rca/footprint.hpp"
#include "rca/isa.hpp"
#include "rca/semantics.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

namespace rca {

using NodeId = std::uint32_t;
inline constexpr NodeId kNoNode = 0xFFFFFFFFu;

enum class NodeKind : std::uint8_t { Use, Define };

enum class RecoveryMode : std::uint8_t { WithEvents, NoEvents };

struct UdNode {
  NodeId id = 0;
  std::uint32_t instance = 0; // position of the owning action in the chain
  NodeKind kind = NodeKind::Use;
  Location loc;               // symbolic form from effects()
  Origin origin = Origin::ExplicitOperand;
  std::optional<std::uint32_t> addr; // memory nodes only
  std::uint8_t width = 4;
  std::uint32_t cell = 0;     // value cell shared along register def-use edges
};

/// One executed instruction: its nodes are [first, def_begin) uses followed
/// by [def_begin, end) defines.
struct Instance {
  std::uint64_t trace_index = 0;
  std::uint32_t pc = 0;
  const DecodedInstr *instr = nullptr;
  NodeId first = 0;
  NodeId def_begin = 0;
  NodeId end = 0;
  /// False for the crash-site instruction of a memory crash: it never
  /// completed, so only its address equations hold.
  bool complete = true;
};

struct UseDefChain {
  std::vector<Instance> instances;
  std::vector<UdNode> nodes;
  std::vector<std::optional<std::uint32_t>> cells;
  /// Reaching define per node (uses only); kNoNode for live-in or, for
  /// memory uses, not (yet) resolved.
  std::vector<NodeId> reach;
  /// Memory uses whose reaching define could not be determined.
  std::vector<bool> unresolved;
  /// (use, define) pairs for older defines that still supply some bytes of
  /// a memory use whose `reach` covers it only partly. Sorted by use.
  std::vector<std::pair<NodeId, NodeId>> partial_reach;
  std::optional<CrashDescriptor> crash;
  RecoveryMode mode = RecoveryMode::WithEvents;
  bool recovered = false;

  std::optional<std::uint32_t> value(NodeId n) const { return cells[nodes[n].cell]; }
  const Instance &instance_of(NodeId n) const { return instances[nodes[n].instance]; }
};

/// Throws MissingInstruction and EventArityMismatch.
UseDefChain build_chain(const Footprint &fp, const Image &image);

struct RecoveryStats {
  std::size_t nodes = 0;
  std::size_t known_values = 0;
  std::size_t known_addresses = 0;
  std::size_t unresolved_uses = 0;
  std::size_t instance_visits = 0;
};

/// Runs backward/forward recovery to a fixpoint. In NoEvents mode the data
/// event addresses and values are discarded first. Throws
/// InconsistentEvidence naming a node.
RecoveryStats recover(UseDefChain &chain, RecoveryMode mode);

RecoveryStats chain_stats(const UseDefChain &chain);

/// The most recent earlier define of the use's location, or nullopt for a
/// live-in. Throws Error(UnresolvedMemory) for a memory use whose define
/// could not be determined.
std::optional<NodeId> reaching_define(const UseDefChain &chain, NodeId use);

/// Every define that supplies at least one byte of `use`: the reaching
/// define first, then older partial suppliers. Empty for a live-in.
std::vector<NodeId> byte_suppliers(const UseDefChain &chain, NodeId use);

/// One JSON object per node.
void dump_chain(const UseDefChain &chain, std::ostream &out);

} // namespace rca
