// SPDX-License-Identifier: Apache-2.0
#include "corpus.hpp"
#include "oracle.hpp"
#include "rca/error.hpp"
#include "rca/microvm.hpp"
#include "rca/taint.hpp"

#include <doctest.h>

using namespace rca;

namespace {

struct Traced {
  Image image;
  RunResult run;
  UseDefChain chain;
};

Traced traced(const char *src, std::vector<std::uint8_t> stim = {}) {
  Traced t{assemble(src), {}, {}};
  t.run = run(t.image, default_memory_map(), stim, 10000);
  REQUIRE(t.run.outcome == RunOutcome::Crashed);
  t.chain = build_chain(t.run.footprint, t.image);
  recover(t.chain, RecoveryMode::WithEvents);
  return t;
}

std::vector<std::string> sink_names(const UseDefChain &c, const TaintSink &s) {
  std::vector<std::string> out;
  for (NodeId n : s.nodes)
    out.push_back(describe_node(c, n));
  return out;
}

} // namespace

TEST_SUITE("taint") {

TEST_CASE("null store: sink is the base register, both instructions tainted") {
  Traced t = traced(".org 0x08000000\nmain:\n"
                    "  MOV R4, #0x2b0\n"
                    "  MOV R3, #0\n"
                    "  STR R4, [R3, #0]\n");
  const TaintSink s = identify_sink(t.chain);
  CHECK(sink_names(t.chain, s) == std::vector<std::string>{"R3"});
  const TaintResult r = propagate(t.chain, s);
  CHECK(r.addresses == std::vector<std::uint32_t>{0x08000004, 0x08000008});
}

TEST_CASE("indexed access sinks base and index") {
  Traced t = traced(".org 0x08000000\nmain:\n"
                    "  MOV R1, #0x100\n"
                    "  MOV R2, #0\n"
                    "  LDR R0, [R2, R1, LSL #2]\n");
  CHECK(sink_names(t.chain, identify_sink(t.chain)) ==
        std::vector<std::string>{"R2", "R1"});
}

TEST_CASE("a handler call sinks the called register") {
  Traced t = traced(".org 0x08000000\nmain:\n"
                    "  MOV R2, #0x40000000\n"
                    "  LDR R4, [R2, #0]\n"
                    "  BLX R4\n",
                    {0x80, 0x32, 0x00, 0x20});
  CHECK(sink_names(t.chain, identify_sink(t.chain)) == std::vector<std::string>{"R4"});
}

TEST_CASE("a smashed return sinks the stack slot") {
  Traced t = traced(".org 0x08000000\nmain:\n"
                    "  MOV R0, #0x30000000\n"
                    "  PUSH {R0}\n"
                    "  POP {PC}\n");
  const TaintSink s = identify_sink(t.chain);
  REQUIRE(s.nodes.size() == 1);
  const UdNode &n = t.chain.nodes[s.nodes[0]];
  CHECK(n.loc.is_mem);
  CHECK(n.addr == t.run.footprint.crash->culprit->stack_addr);
  const TaintResult r = propagate(t.chain, s);
  CHECK(r.addresses ==
        std::vector<std::uint32_t>{0x08000000, 0x08000004, 0x08000008});
}

TEST_CASE("a live-in sink taints only the crash site") {
  Traced t = traced(".org 0x08000000\nmain:\n"
                    "  MOV R4, #1\n"
                    "  LDR R0, [R7, #0]\n");
  // R7 starts at zero and is never written.
  const TaintResult r = propagate(t.chain, identify_sink(t.chain));
  CHECK(r.addresses == std::vector<std::uint32_t>{0x08000004});
  CHECK(r.occurrences.size() == 1);
}

TEST_CASE("taint crosses a store-load alias") {
  const char *src = ".org 0x08000000\nmain:\n"
                    "  MOV R1, #0x20000100\n"
                    "  MOV R0, #0\n"
                    "  STR R0, [R1, #8]\n"
                    "  MOV R5, #9\n"
                    "  LDR R6, [R1, #8]\n"
                    "  LDR R2, [R6, #4]\n";
  Traced t = traced(src);
  const TaintResult r = propagate(t.chain, identify_sink(t.chain));
  CHECK(std::count(r.addresses.begin(), r.addresses.end(), 0x08000008u) == 1);
  CHECK(std::count(r.addresses.begin(), r.addresses.end(), 0x0800000cu) == 0);
  testing::Observation obs = testing::observe(t.image, default_memory_map(), {});
  CHECK(r.occurrences == testing::reachable_from_sink(obs));
}

TEST_CASE("taint equals dependency-graph reachability on the corpus") {
  for (const auto &cc : testing::make_corpus()) {
    testing::PreparedCase p = testing::prepare(cc);
    testing::Observation obs = testing::observe(p.image, default_memory_map(), cc.stimulus);
    UseDefChain c = build_chain(obs.result.footprint, p.image);
    recover(c, RecoveryMode::WithEvents);
    const TaintResult r = propagate(c, identify_sink(c));
    INFO(cc.name);
    CHECK(r.occurrences == testing::reachable_from_sink(obs));
    CHECK(r.unresolved == 0);
  }
}

TEST_CASE("malformed crash records are refused") {
  Traced t = traced(".org 0x08000000\nmain:\n"
                    "  MOV R3, #0\n"
                    "  STR R4, [R3, #0]\n");
  Image img = assemble(".org 0x08000000\nmain:\nMOV R3, #0\nNOP\n");
  Footprint fp = t.run.footprint;
  UseDefChain c = build_chain(fp, img); // memory crash on a NOP
  try {
    identify_sink(c);
    FAIL("accepted a memory crash without a memory operand");
  } catch (const Error &e) {
    CHECK(e.code() == ErrorCode::UnsupportedCrashShape);
  }
  UseDefChain none = t.chain;
  none.crash.reset();
  try {
    identify_sink(none);
    FAIL("accepted a footprint without a crash");
  } catch (const Error &e) {
    CHECK(e.code() == ErrorCode::MissingCrashRecord);
  }
}

} // TEST_SUITE
