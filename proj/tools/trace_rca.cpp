// SPDX-License-Identifier: Apache-2.0
//
// trace-rca: reproduce a crash and record its footprint, then analyze the
// footprint and rank the instructions that explain the crash.
#include "rca/error.hpp"
#include "rca/footprint.hpp"
#include "rca/microvm.hpp"
#include "rca/report.hpp"
#include "rca/reverse_exec.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>

namespace {

std::string read_file(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw rca::Error(rca::ErrorCode::Io, fmt::format("cannot open {}", path));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string &path, const std::string &text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out)
    throw rca::Error(rca::ErrorCode::Io,
                     fmt::format("cannot write {}", path));
}

struct CollectArgs {
  std::string image, map, input, out;
  std::uint64_t max_steps = 1000000;
};

int cmd_collect(const CollectArgs &a) {
  const rca::Image image = rca::assemble(read_file(a.image));
  const rca::MemoryMap map =
      a.map.empty() ? rca::default_memory_map() : rca::load_memory_map(a.map);
  std::string stimulus;
  if (!a.input.empty())
    stimulus = read_file(a.input);
  const auto bytes = std::span(
      reinterpret_cast<const std::uint8_t *>(stimulus.data()), stimulus.size());
  rca::RunResult r = rca::run(image, map, bytes, a.max_steps);
  rca::save_footprint(r.footprint, a.out);

  const auto &fp = r.footprint;
  switch (r.outcome) {
  case rca::RunOutcome::Crashed:
    std::cout << fmt::format("crashed: {} at 0x{:x} fault 0x{:x} after {} "
                             "steps, {} data events\n",
                             rca::reason_code(fp.crash->reason), fp.crash->pc,
                             fp.crash->fault_addr, fp.actions.size(),
                             fp.data.size());
    return 0;
  case rca::RunOutcome::Exited:
    std::cout << fmt::format("exited after {} steps, {} data events\n",
                             fp.actions.size(), fp.data.size());
    return 2;
  case rca::RunOutcome::StepLimit:
    std::cout << fmt::format("step limit reached after {} steps, {} data "
                             "events\n",
                             fp.actions.size(), fp.data.size());
    return 3;
  }
  return 1;
}

struct AnalyzeArgs {
  std::string image, footprint, out, dump_chain;
  std::string depth = "full";
  std::string strategies = "both";
  std::string recovery = "events";
  std::string format = "text";
  std::size_t top = 10;
  double sigma = 0.1;
  double beta = 1.0;
  std::size_t min_reps = 3;
  bool timings = false;
};

int cmd_analyze(const AnalyzeArgs &a) {
  rca::AnalysisConfig cfg;
  cfg.depth = rca::Depth::parse(a.depth);
  cfg.strategies = rca::parse_strategies(a.strategies);
  if (a.recovery == "events")
    cfg.recovery = rca::RecoveryMode::WithEvents;
  else if (a.recovery == "noevents")
    cfg.recovery = rca::RecoveryMode::NoEvents;
  else
    throw rca::Error(rca::ErrorCode::Config,
                     fmt::format("unknown recovery mode '{}'", a.recovery));
  cfg.top = a.top;
  cfg.params.sigma = a.sigma;
  cfg.params.beta = a.beta;
  cfg.params.min_reps = a.min_reps;
  cfg.timings = a.timings;
  if (a.min_reps < 2)
    throw rca::Error(rca::ErrorCode::Config, "min-reps must be at least 2");
  if (a.sigma < 0 || a.beta < 0)
    throw rca::Error(rca::ErrorCode::Config, "sigma and beta must be >= 0");

  const rca::Image image = rca::assemble(read_file(a.image));
  const rca::Footprint fp = rca::load_footprint(a.footprint);
  rca::Analysis an = rca::analyze(image, fp, cfg);

  if (!a.dump_chain.empty()) {
    std::ostringstream os;
    rca::dump_chain(an.chain, os);
    write_file(a.dump_chain, os.str());
  }
  const std::string text = a.format == "json" ? rca::render_json(an.report)
                                              : rca::render_text(an.report);
  if (a.out.empty())
    std::cout << text;
  else
    write_file(a.out, text);
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Crash root-cause analysis over recorded execution footprints"};
  app.require_subcommand(1);

  CollectArgs ca;
  auto *collect = app.add_subcommand(
      "collect", "Run a program to its crash and record the footprint");
  collect->add_option("--image", ca.image, "Assembly source of the program")
      ->required();
  collect->add_option("--map", ca.map,
                      "Memory map (JSON); default flash/RAM/port layout");
  collect->add_option("--input", ca.input, "Stimulus bytes for the input port");
  collect->add_option("--out", ca.out, "Footprint file to write")->required();
  collect->add_option("--max-steps", ca.max_steps, "Step limit")
      ->check(CLI::PositiveNumber);

  AnalyzeArgs aa;
  auto *analyze = app.add_subcommand(
      "analyze", "Rank the instructions that explain a recorded crash");
  analyze->add_option("--image", aa.image, "Assembly source of the program")
      ->required();
  analyze->add_option("--footprint", aa.footprint, "Footprint file")->required();
  analyze->add_option("--depth", aa.depth,
                      "Trailing actions to analyze: full, N or N%");
  analyze->add_option("--strategies", aa.strategies,
                      "Ranking strategies: none, rl, hw or both")
      ->check(CLI::IsMember({"none", "rl", "hw", "both"}));
  analyze->add_option("--recovery", aa.recovery,
                      "Value recovery: events or noevents")
      ->check(CLI::IsMember({"events", "noevents"}));
  analyze->add_option("--top", aa.top, "Entries to report")
      ->check(CLI::PositiveNumber);
  analyze->add_option("--sigma", aa.sigma, "Loop suppression factor");
  analyze->add_option("--beta", aa.beta, "History write weight");
  analyze->add_option("--min-reps", aa.min_reps,
                      "Minimum repetitions for a loop");
  analyze->add_option("--format", aa.format, "Output format: text or json")
      ->check(CLI::IsMember({"text", "json"}));
  analyze->add_option("--out", aa.out, "Write the report here");
  analyze->add_option("--dump-chain", aa.dump_chain,
                      "Write the recovered use-define chain (JSONL)");
  analyze->add_flag("--timings", aa.timings, "Include per-phase timings");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    return e.get_exit_code() == 0 ? app.exit(e) : (app.exit(e), 1);
  }

  try {
    if (*collect)
      return cmd_collect(ca);
    return cmd_analyze(aa);
  } catch (const rca::Error &e) {
    std::cerr << fmt::format("trace-rca: {}: {}\n",
                             rca::error_code_name(e.code()), e.what());
    return 1;
  } catch (const std::exception &e) {
    std::cerr << fmt::format("trace-rca: error: {}\n", e.what());
    return 1;
  }
}
