// SPDX-License-Identifier: Apache-2.0
//
// The analysis pipeline behind `trace-rca analyze` and its renderings.
#pragma once

#include "rca/footprint.hpp"
#include "rca/ranker.hpp"
#include "rca/reverse_exec.hpp"
#include "rca/taint.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rca {

/// `full`, a count of trailing actions, or a percentage such as `50%`.
struct Depth {
  enum class Kind : std::uint8_t { Full, Count, Percent };
  Kind kind = Kind::Full;
  std::uint64_t value = 0;

  static Depth parse(std::string_view text); // throws Error(Config)
  std::string to_string() const;
  /// Number of trailing actions to keep out of `total`.
  std::size_t resolve(std::size_t total) const;
};

struct AnalysisConfig {
  Depth depth;
  Strategies strategies{true, true};
  RecoveryMode recovery = RecoveryMode::WithEvents;
  std::size_t top = 10;
  RankParams params;
  bool timings = false;
};

Strategies parse_strategies(std::string_view text); // none|rl|hw|both
std::string strategies_name(Strategies s);

struct PhaseTimings {
  double chain_ms = 0;
  double recovery_ms = 0;
  double taint_ms = 0;
  double ranking_ms = 0;
};

struct ReportEntry {
  ScoredInstruction scored;
  std::string text;
};

struct Report {
  std::string image;
  CrashDescriptor crash;
  std::string crash_text;
  AnalysisConfig config;
  std::size_t total_actions = 0;
  std::size_t analyzed_actions = 0;
  std::uint64_t first_trace_index = 0;
  std::uint64_t sink_trace_index = 0;
  std::uint32_t sink_pc = 0;
  std::vector<std::string> sink_locations;
  RecoveryStats recovery;
  std::size_t tainted_occurrences = 0;
  std::size_t tainted_pcs = 0;
  std::size_t taint_visited = 0;
  std::size_t unresolved = 0;
  std::vector<ReportEntry> ranking;
  PhaseTimings timings;
};

/// Everything the pipeline computed, for callers that need more than the
/// report (tests, the chain dump).
struct Analysis {
  UseDefChain chain;
  TaintSink sink;
  TaintResult taint;
  std::vector<ScoredInstruction> scored;
  Report report;
};

/// build_chain, recover, identify_sink, propagate, score, top_k.
Analysis analyze(const Image &image, const Footprint &footprint,
                 const AnalysisConfig &config);

std::string render_json(const Report &report);
std::string render_text(const Report &report);

} // namespace rca
