// SPDX-License-Identifier: Apache-2.0
//
// Ground truth from forward simulation: full machine state around every
// step, the exact dynamic dependency graph built from it, and checks of
// recovered chains against that state.
#pragma once

#include "rca/microvm.hpp"
#include "rca/reverse_exec.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace rca::testing {

struct Observation {
  RunResult result;
  std::vector<StepRecord> steps; // one per executed action, in order
};

/// Runs with the full-state observer attached. `image` must outlive the
/// observation.
Observation observe(const Image &image, const MemoryMap &map,
                    std::span<const std::uint8_t> stimulus,
                    std::uint64_t max_steps = 1000000);

using Occurrence = std::pair<std::uint64_t, std::uint32_t>; // trace index, pc

/// Occurrences backward reachable from the crash sink through register and
/// per-byte memory writers. Flag reads and the PC are not followed. Sorted.
std::vector<Occurrence> reachable_from_sink(const Observation &obs);

/// True when some read returns bytes written earlier in the trace.
bool has_memory_alias(const Observation &obs);

/// Every Known value or address in a recovered chain that disagrees with
/// the observed state, one message each.
std::vector<std::string> soundness_violations(const UseDefChain &chain,
                                              const Observation &obs);

} // namespace rca::testing
