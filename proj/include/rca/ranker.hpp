// SPDX-License-Identifier: Apache-2.0
//
// Suspicious scores for tainted instructions: redundant-loop suppression,
// history-write prioritization and the final ordering.
#pragma once

#include "rca/reverse_exec.hpp"
#include "rca/taint.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace rca {

struct LoopRegion {
  std::size_t start = 0; // position in the pc sequence
  std::vector<std::uint32_t> body;
  std::size_t reps = 0;

  std::size_t end() const { return start + body.size() * reps; }
};

/// Maximal non-overlapping repetitions of at least `min_reps` copies,
/// chosen left to right by covered length, shortest body on ties.
std::vector<LoopRegion> detect_loops(std::span<const std::uint32_t> pcs,
                                     std::size_t min_reps,
                                     std::size_t max_body = 64);

struct Strategies {
  bool redundant_loop = false;
  bool history_write = false;
};

struct RankParams {
  double sigma = 0.1;
  double beta = 1.0;
  std::size_t min_reps = 3;
  std::size_t max_body = 64;
};

enum Tag : std::uint8_t {
  kTagLoopSuppressed = 1,
  kTagHistoryWrite = 2,
  kTagSinkSite = 4,
};

struct ScoredInstruction {
  std::uint32_t pc = 0;
  double score = 1.0;
  std::size_t rank = 0;
  std::vector<std::uint64_t> occurrences; // tainted trace indices, ascending
  std::uint8_t tags = 0;
};

std::vector<std::string> tag_names(std::uint8_t tags);

/// Every tainted pc, ranked. A pc is loop suppressed when all of its tainted
/// occurrences lie inside detected loops. The crash index is that of the
/// last action.
std::vector<ScoredInstruction> score(const TaintResult &taint,
                                     const UseDefChain &chain,
                                     Strategies strategies,
                                     const RankParams &params);

std::vector<ScoredInstruction> top_k(const std::vector<ScoredInstruction> &scored,
                                     std::size_t k);

} // namespace rca
