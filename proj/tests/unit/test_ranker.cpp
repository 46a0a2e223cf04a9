// SPDX-License-Identifier: Apache-2.0
#include "corpus.hpp"
#include "rca/microvm.hpp"
#include "rca/ranker.hpp"
#include "rca/report.hpp"

#include <doctest.h>

#include <algorithm>

using namespace rca;

namespace {

/// Smallest p such that s[i] == s[i + p] for all i, by brute force.
std::size_t period(const std::vector<std::uint32_t> &s) {
  for (std::size_t p = 1; p <= s.size(); ++p) {
    bool ok = true;
    for (std::size_t i = 0; i + p < s.size() && ok; ++i)
      ok = s[i] == s[i + p];
    if (ok)
      return p;
  }
  return s.size();
}

std::size_t rank_of(const std::vector<ScoredInstruction> &v, std::uint32_t pc) {
  for (const auto &s : v)
    if (s.pc == pc)
      return s.rank;
  return 0;
}

Analysis analyze_source(const std::string &src, AnalysisConfig cfg,
                        std::vector<std::uint8_t> stim = {}) {
  Image img = assemble(src);
  RunResult r = run(img, default_memory_map(), stim, 1000000);
  REQUIRE(r.outcome == RunOutcome::Crashed);
  return analyze(img, r.footprint, cfg);
}

} // namespace

TEST_SUITE("ranker") {

TEST_CASE("a repeated triple is one loop") {
  const std::vector<std::uint32_t> s{1, 2, 3, 1, 2, 3, 1, 2, 3};
  auto loops = detect_loops(s, 3);
  REQUIRE(loops.size() == 1);
  CHECK(loops[0].start == 0);
  CHECK(loops[0].body == std::vector<std::uint32_t>{1, 2, 3});
  CHECK(loops[0].reps == 3);
}

TEST_CASE("straight-line code has no loops") {
  std::vector<std::uint32_t> s(200);
  for (std::uint32_t i = 0; i < s.size(); ++i)
    s[i] = 0x08000000 + 4 * i;
  CHECK(detect_loops(s, 2).empty());
}

TEST_CASE("regions are non-overlapping and prefer the shortest body") {
  // aaaa is both (a)x4 and (aa)x2; abab ababab overlaps at the seam.
  auto loops = detect_loops(std::vector<std::uint32_t>{7, 7, 7, 7}, 2);
  REQUIRE(loops.size() == 1);
  CHECK(loops[0].body.size() == 1);
  CHECK(loops[0].reps == 4);
  auto two = detect_loops(std::vector<std::uint32_t>{1, 2, 1, 2, 1, 2, 9, 3, 3, 3}, 3);
  REQUIRE(two.size() == 2);
  CHECK(two[0].end() <= two[1].start);
}

TEST_CASE("a copy loop traced by the machine is one region per iteration") {
  Image img = assemble(".org 0x08000000\nmain:\n"
                       "  MOV R0, #0x20000000\n"
                       "  MOV R1, #0x20001000\n"
                       "  MOV R3, #100\n"
                       "copy:\n"
                       "  LDR R4, [R0, #0]\n"
                       "  STR R4, [R1, #0]\n"
                       "  ADD R0, R0, #4\n"
                       "  ADD R1, R1, #4\n"
                       "  SUBS R3, R3, #1\n"
                       "  BNE copy\n"
                       "h: B h\n");
  RunResult r = run(img, default_memory_map(), {}, 10000);
  REQUIRE(r.outcome == RunOutcome::Exited);
  std::vector<std::uint32_t> pcs;
  for (const auto &a : r.footprint.actions)
    pcs.push_back(a.pc);
  auto loops = detect_loops(pcs, 3);
  REQUIRE(loops.size() == 1);
  std::vector<std::uint32_t> covered(pcs.begin() + loops[0].start,
                                     pcs.begin() + loops[0].end());
  CHECK(period(covered) == loops[0].body.size());
  CHECK(loops[0].body.size() == 6);
  CHECK(loops[0].reps == 100);
  CHECK(loops[0].start == 3);
}

TEST_CASE("no strategies: unit scores ordered by distance then pc") {
  AnalysisConfig cfg;
  cfg.strategies = {};
  Analysis a = analyze_source(".org 0x08000000\nmain:\n"
                              "  MOV R1, #0x20000100\n"
                              "  MOV R0, #0\n"
                              "  STR R0, [R1, #8]\n"
                              "  LDR R6, [R1, #8]\n"
                              "  LDR R2, [R6, #4]\n",
                              cfg);
  for (const auto &s : a.scored)
    CHECK(s.score == 1.0);
  for (std::size_t i = 1; i < a.scored.size(); ++i)
    CHECK(a.scored[i - 1].occurrences.front() <= a.scored[i].occurrences.front());
}

TEST_CASE("equal scores: the instruction farther from the crash first") {
  TaintResult t;
  UseDefChain c;
  Image img = assemble(".org 0x08000000\nmain:\nNOP\nNOP\nNOP\n");
  for (std::uint32_t i = 0; i < 3; ++i) {
    Instance inst;
    inst.trace_index = i;
    inst.pc = 0x08000008 - 4 * i; // later occurrences at lower pcs
    inst.instr = img.find(inst.pc);
    c.instances.push_back(inst);
  }
  t.tainted = {true, true, true};
  auto s = score(t, c, {}, RankParams{});
  REQUIRE(s.size() == 3);
  CHECK(s[0].pc == 0x08000008);
  CHECK(s[1].pc == 0x08000004);
  CHECK(s[2].pc == 0x08000000);
}

TEST_CASE("top k") {
  std::vector<ScoredInstruction> v(38);
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i].rank = i + 1;
  CHECK(top_k(v, 10).size() == 10);
  CHECK(top_k(v, 10).back().rank == 10);
  CHECK(top_k(v, 100).size() == 38);
}

TEST_CASE("loop suppression demotes a walking pointer below its setup") {
  const std::string src = ".org 0x08000000\nmain:\n"
                          "  MOV R11, #0x20000000\n"
                          "  MOV R0, #0x1000\n"
                          "  ADD R0, R0, R11\n"
                          "  MOV R2, #0\n"
                          "walk:\n"
                          "  LDR R1, [R0, #0]\n"
                          "  ADDS R0, #0x40\n"
                          "  B walk\n";
  AnalysisConfig plain;
  plain.strategies = {};
  AnalysisConfig rl;
  rl.strategies = {true, false};
  Analysis a = analyze_source(src, plain);
  Analysis b = analyze_source(src, rl);
  const std::uint32_t adds = 0x08000014;
  CHECK(rank_of(a.scored, adds) != 0);
  for (std::uint32_t setup : {0x08000000u, 0x08000004u, 0x08000008u}) {
    CHECK(rank_of(b.scored, setup) < rank_of(b.scored, adds));
  }
  const auto &entry = *std::find_if(b.scored.begin(), b.scored.end(),
                                    [&](const auto &s) { return s.pc == adds; });
  CHECK(entry.occurrences.size() > 100);
  CHECK((entry.tags & kTagLoopSuppressed) != 0);
  CHECK(entry.score == doctest::Approx(RankParams{}.sigma));
}

TEST_CASE("a stored oversized length far from the crash ranks first") {
  for (const auto &cc : testing::make_corpus()) {
    if (cc.name.rfind("deep_length", 0) != 0)
      continue;
    testing::PreparedCase p = testing::prepare(cc);
    REQUIRE(testing::is_deep(p));
    AnalysisConfig cfg;
    Analysis a = analyze(p.image, p.run.footprint, cfg);
    INFO(cc.name);
    REQUIRE(!a.scored.empty());
    CHECK(a.scored.front().pc == p.root_pc);
    CHECK((a.scored.front().tags & kTagHistoryWrite) != 0);
    // 1 + beta * (crash - write) / crash
    const double crash = double(a.chain.instances.back().trace_index);
    const double write = double(a.scored.front().occurrences.front());
    CHECK(a.scored.front().score == doctest::Approx(1.0 + (crash - write) / crash));
  }
}

} // TEST_SUITE
