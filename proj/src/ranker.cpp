// SPDX-License-Identifier: Apache-2.0
#include "rca/ranker.hpp"

#include <algorithm>
#include <map>

namespace rca {

std::vector<LoopRegion> detect_loops(std::span<const std::uint32_t> pcs,
                                     std::size_t min_reps,
                                     std::size_t max_body) {
  std::vector<LoopRegion> out;
  if (min_reps < 2)
    min_reps = 2;
  const std::size_t n = pcs.size();
  std::size_t i = 0;
  while (i < n) {
    std::size_t best_p = 0, best_k = 0;
    const std::size_t limit = std::min(max_body, (n - i) / min_reps);
    for (std::size_t p = 1; p <= limit; ++p) {
      // Length of the stretch that agrees with itself shifted by p.
      std::size_t run = 0;
      while (i + run + p < n && pcs[i + run] == pcs[i + run + p])
        ++run;
      const std::size_t k = 1 + run / p;
      if (k >= min_reps && k * p > best_k * best_p) {
        best_p = p;
        best_k = k;
      }
    }
    if (best_p == 0) {
      ++i;
      continue;
    }
    LoopRegion r;
    r.start = i;
    r.body.assign(pcs.begin() + static_cast<std::ptrdiff_t>(i),
                  pcs.begin() + static_cast<std::ptrdiff_t>(i + best_p));
    r.reps = best_k;
    i = r.end();
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<std::string> tag_names(std::uint8_t tags) {
  std::vector<std::string> out;
  if (tags & kTagLoopSuppressed)
    out.emplace_back("loop_suppressed");
  if (tags & kTagHistoryWrite)
    out.emplace_back("history_write");
  if (tags & kTagSinkSite)
    out.emplace_back("sink_site");
  return out;
}

std::vector<ScoredInstruction> score(const TaintResult &taint,
                                     const UseDefChain &chain,
                                     Strategies strategies,
                                     const RankParams &params) {
  std::vector<ScoredInstruction> out;
  if (chain.instances.empty())
    return out;
  const std::uint64_t crash_idx = chain.instances.back().trace_index;

  // Whether each trace position lies inside a detected loop.
  std::vector<bool> in_loop;
  if (strategies.redundant_loop) {
    std::vector<std::uint32_t> pcs;
    pcs.reserve(chain.instances.size());
    for (const Instance &inst : chain.instances)
      pcs.push_back(inst.pc);
    in_loop.assign(pcs.size(), false);
    for (const LoopRegion &r :
         detect_loops(pcs, params.min_reps, params.max_body))
      std::fill(in_loop.begin() + static_cast<std::ptrdiff_t>(r.start),
                in_loop.begin() + static_cast<std::ptrdiff_t>(r.end()), true);
  }

  std::map<std::uint32_t, ScoredInstruction> by_pc;
  std::map<std::uint32_t, bool> all_in_loop;
  for (std::size_t i = 0; i < chain.instances.size(); ++i) {
    if (!taint.tainted[i])
      continue;
    const Instance &inst = chain.instances[i];
    ScoredInstruction &s = by_pc[inst.pc];
    s.pc = inst.pc;
    s.occurrences.push_back(inst.trace_index);
    if (strategies.redundant_loop) {
      auto [it, fresh] = all_in_loop.try_emplace(inst.pc, true);
      it->second = it->second && in_loop[i];
    }
  }
  if (!chain.instances.empty() && taint.tainted.back())
    by_pc[chain.instances.back().pc].tags |= kTagSinkSite;

  if (strategies.redundant_loop)
    for (auto &[pc, all_in] : all_in_loop)
      if (all_in) {
        by_pc[pc].score *= params.sigma;
        by_pc[pc].tags |= kTagLoopSuppressed;
      }

  if (strategies.history_write) {
    std::map<std::uint32_t, std::uint64_t> earliest;
    for (NodeId d : taint.reached_memory_defines) {
      const Instance &inst = chain.instance_of(d);
      auto [it, fresh] = earliest.try_emplace(inst.pc, inst.trace_index);
      if (!fresh)
        it->second = std::min(it->second, inst.trace_index);
    }
    for (const auto &[pc, write_idx] : earliest) {
      auto it = by_pc.find(pc);
      if (it == by_pc.end())
        continue;
      const double frac =
          crash_idx == 0 ? 0.0
                         : double(crash_idx - write_idx) / double(crash_idx);
      it->second.score *= 1.0 + params.beta * frac;
      it->second.tags |= kTagHistoryWrite;
    }
  }

  for (auto &[pc, s] : by_pc)
    out.push_back(std::move(s));
  std::sort(out.begin(), out.end(),
            [&](const ScoredInstruction &a, const ScoredInstruction &b) {
              if (a.score != b.score)
                return a.score > b.score;
              // Farther from the crash first.
              if (a.occurrences.front() != b.occurrences.front())
                return a.occurrences.front() < b.occurrences.front();
              return a.pc < b.pc;
            });
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i].rank = i + 1;
  return out;
}

std::vector<ScoredInstruction> top_k(const std::vector<ScoredInstruction> &scored,
                                     std::size_t k) {
  const std::size_t n = std::min(k, scored.size());
  return {scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n)};
}

} // namespace rca
