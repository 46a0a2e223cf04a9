// SPDX-License-Identifier: Apache-2.0
#include "rca/error.hpp"
#include "rca/microvm.hpp"
#include "rca/report.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

using namespace rca;

namespace {

const char *kNullStore = ".org 0x08000000\nmain:\n"
                         "  MOV R4, #0x2b0\n"
                         "  MOV R3, #0\n"
                         "  ADD R5, R4, #4\n"
                         "  STR R4, [R3, #0]\n";

struct Case {
  Image image;
  Footprint fp;
};

Case collect(const std::string &src, std::vector<std::uint8_t> stim = {}) {
  Case c{assemble(src), {}};
  RunResult r = run(c.image, default_memory_map(), stim, 1000000);
  REQUIRE(r.outcome == RunOutcome::Crashed);
  c.fp = r.footprint;
  return c;
}

} // namespace

TEST_SUITE("report") {

TEST_CASE("depth syntax") {
  CHECK(Depth::parse("full").kind == Depth::Kind::Full);
  CHECK(Depth::parse("40").resolve(100) == 40);
  CHECK(Depth::parse("50%").resolve(101) == 51);
  CHECK(Depth::parse("50%").to_string() == "50%");
  CHECK(Depth::parse("full").resolve(7) == 7);
  CHECK(Depth::parse("500").resolve(7) == 7);
  CHECK_THROWS_AS(Depth::parse("0"), Error);
  CHECK_THROWS_AS(Depth::parse("150%"), Error);
  CHECK_THROWS_AS(Depth::parse("x"), Error);
  CHECK(strategies_name(parse_strategies("rl")) == "rl");
  CHECK_THROWS_AS(parse_strategies("all"), Error);
}

TEST_CASE("null store ranks the zeroing move first") {
  Case c = collect(kNullStore);
  AnalysisConfig cfg;
  cfg.top = 10;
  Analysis a = analyze(c.image, c.fp, cfg);
  REQUIRE(!a.report.ranking.empty());
  CHECK(a.report.ranking[0].text == "MOV R3, #0");
  CHECK(a.report.ranking[0].scored.pc == 0x08000004);
}

TEST_CASE("a root beyond the analyzed depth is absent") {
  Case c = collect(".org 0x08000000\nmain:\n"
                   "  MOV R3, #0\n"
                   "  NOP\n  NOP\n  NOP\n  NOP\n  NOP\n  NOP\n"
                   "  STR R4, [R3, #0]\n");
  AnalysisConfig cfg;
  cfg.depth = Depth::parse("50%");
  Analysis a = analyze(c.image, c.fp, cfg);
  CHECK(a.report.analyzed_actions == 4);
  for (const auto &e : a.report.ranking)
    CHECK(e.scored.pc != 0x08000000);
  // The sink register has no define in the window.
  CHECK(a.report.ranking.size() == 1);
}

TEST_CASE("strategies do not change a loop-free single dependency") {
  Case c = collect(kNullStore);
  AnalysisConfig none, both;
  none.strategies = {};
  Analysis a = analyze(c.image, c.fp, none);
  Analysis b = analyze(c.image, c.fp, both);
  CHECK(a.report.ranking[0].scored.pc == b.report.ranking[0].scored.pc);
}

TEST_CASE("json report is deterministic and echoes its configuration") {
  Case c = collect(kNullStore);
  AnalysisConfig cfg;
  cfg.depth = Depth::parse("3");
  cfg.strategies = {true, false};
  cfg.top = 2;
  cfg.params.sigma = 0.25;
  cfg.params.beta = 2.0;
  cfg.params.min_reps = 4;
  const std::string one = render_json(analyze(c.image, c.fp, cfg).report);
  const std::string two = render_json(analyze(c.image, c.fp, cfg).report);
  CHECK(one == two);
  auto j = nlohmann::json::parse(one);
  CHECK(j["config"]["depth"] == "3");
  CHECK(j["config"]["strategies"] == "rl");
  CHECK(j["config"]["recovery"] == "events");
  CHECK(j["config"]["top"] == 2);
  CHECK(j["config"]["sigma"] == 0.25);
  CHECK(j["config"]["beta"] == 2.0);
  CHECK(j["config"]["min_reps"] == 4);
  CHECK(j["ranking"].size() <= 2);
  CHECK_FALSE(j.contains("timings_ms"));
  CHECK(j["image"] == c.image.digest);
}

TEST_CASE("timings appear on request and are nonnegative") {
  Case c = collect(kNullStore);
  AnalysisConfig cfg;
  cfg.timings = true;
  auto j = nlohmann::json::parse(render_json(analyze(c.image, c.fp, cfg).report));
  REQUIRE(j.contains("timings_ms"));
  for (const auto &[k, v] : j["timings_ms"].items())
    CHECK(v.get<double>() >= 0.0);
}

TEST_CASE("ranking length is the smaller of top and tainted pcs") {
  Case c = collect(kNullStore);
  for (std::size_t k : {1u, 2u, 10u}) {
    AnalysisConfig cfg;
    cfg.top = k;
    Analysis a = analyze(c.image, c.fp, cfg);
    CHECK(a.report.ranking.size() == std::min(k, a.report.tainted_pcs));
  }
}

TEST_CASE("a footprint from another image is refused") {
  Case c = collect(kNullStore);
  Image other = assemble(".org 0x08000000\nmain:\nMOV R3, #0\nSTR R4, [R3, #0]\n");
  try {
    analyze(other, c.fp, AnalysisConfig{});
    FAIL("accepted a foreign footprint");
  } catch (const Error &e) {
    CHECK(e.code() == ErrorCode::ImageMismatch);
  }
}

TEST_CASE("text report names the crash and the ranking") {
  Case c = collect(kNullStore);
  const std::string text = render_text(analyze(c.image, c.fp, AnalysisConfig{}).report);
  CHECK(text.find("imw") != std::string::npos);
  CHECK(text.find("MOV R3, #0") != std::string::npos);
}

} // TEST_SUITE
