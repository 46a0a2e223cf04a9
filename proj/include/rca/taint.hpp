// SPDX-License-Identifier: Apache-2.0
//
// Taint sink selection and backward worklist propagation over a recovered
// use-define chain.
#pragma once

#include "rca/footprint.hpp"
#include "rca/reverse_exec.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace rca {

struct TaintSink {
  /// Position in the chain of the instruction holding the sink.
  std::uint32_t instance = 0;
  std::uint64_t trace_index = 0;
  std::vector<NodeId> nodes; // use nodes
};

/// Human-readable sink location, e.g. "R3" or "mem 0x2000fffc".
std::string describe_node(const UseDefChain &chain, NodeId n);

/// Throws Error(UnsupportedCrashShape) when the crash cannot be mapped onto
/// use nodes of the chain, Error(MissingCrashRecord) without a crash.
TaintSink identify_sink(const UseDefChain &chain);

struct TaintResult {
  /// Per chain instance: whether it is tainted.
  std::vector<bool> tainted;
  /// (trace_index, pc), ascending by trace_index.
  std::vector<std::pair<std::uint64_t, std::uint32_t>> occurrences;
  /// Distinct tainted pcs, ascending.
  std::vector<std::uint32_t> addresses;
  /// Memory defines reached by the propagation, in discovery order.
  std::vector<NodeId> reached_memory_defines;
  std::size_t visited = 0;
  std::size_t unresolved = 0;
};

/// Backward propagation from the sink. APSR and PC use nodes are not
/// followed: the taint is data flow only.
TaintResult propagate(const UseDefChain &chain, const TaintSink &sink);

} // namespace rca
