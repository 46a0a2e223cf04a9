// SPDX-License-Identifier: Apache-2.0
#include "rca/report.hpp"

#include "rca/error.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <chrono>
#include <cmath>

namespace rca {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::string hex(std::uint32_t v) { return fmt::format("0x{:x}", v); }

nlohmann::ordered_json culprit_json(const std::optional<Culprit> &c) {
  if (!c)
    return nullptr;
  nlohmann::ordered_json j;
  switch (c->kind) {
  case Culprit::Kind::ExplicitPop:
    j["kind"] = "explicit_pop";
    j["addr"] = hex(c->stack_addr);
    break;
  case Culprit::Kind::ImplicitRegister:
    j["kind"] = "implicit_register";
    j["reg"] = std::string(reg_name(c->reg));
    break;
  case Culprit::Kind::SequentialOverrun:
    j["kind"] = "sequential_overrun";
    break;
  }
  return j;
}

std::string culprit_text(const std::optional<Culprit> &c) {
  if (!c)
    return "";
  switch (c->kind) {
  case Culprit::Kind::ExplicitPop:
    return fmt::format(", PC loaded from stack slot 0x{:x}", c->stack_addr);
  case Culprit::Kind::ImplicitRegister:
    return fmt::format(", PC taken from {}", reg_name(c->reg));
  case Culprit::Kind::SequentialOverrun:
    return ", execution ran past the end of code";
  }
  return "";
}

} // namespace

Depth Depth::parse(std::string_view text) {
  Depth d;
  if (text == "full")
    return d;
  bool percent = !text.empty() && text.back() == '%';
  if (percent)
    text.remove_suffix(1);
  if (text.empty() || text.size() > 18)
    throw Error(ErrorCode::Config, "depth must be 'full', a count or a percentage");
  std::uint64_t v = 0;
  for (char c : text) {
    if (c < '0' || c > '9')
      throw Error(ErrorCode::Config,
                  "depth must be 'full', a count or a percentage");
    v = v * 10 + static_cast<std::uint64_t>(c - '0');
  }
  if (v < 1 || (percent && v > 100))
    throw Error(ErrorCode::Config, "depth out of range");
  d.kind = percent ? Kind::Percent : Kind::Count;
  d.value = v;
  return d;
}

std::string Depth::to_string() const {
  switch (kind) {
  case Kind::Full: return "full";
  case Kind::Count: return std::to_string(value);
  case Kind::Percent: return std::to_string(value) + "%";
  }
  return "full";
}

std::size_t Depth::resolve(std::size_t total) const {
  switch (kind) {
  case Kind::Full:
    return total;
  case Kind::Count:
    return static_cast<std::size_t>(std::min<std::uint64_t>(value, total));
  case Kind::Percent: {
    std::size_t n = static_cast<std::size_t>((total * value + 99) / 100);
    return std::clamp<std::size_t>(n, total ? 1 : 0, total);
  }
  }
  return total;
}

Strategies parse_strategies(std::string_view text) {
  if (text == "none")
    return {false, false};
  if (text == "rl")
    return {true, false};
  if (text == "hw")
    return {false, true};
  if (text == "both")
    return {true, true};
  throw Error(ErrorCode::Config,
              fmt::format("unknown strategy set '{}' (none|rl|hw|both)", text));
}

std::string strategies_name(Strategies s) {
  if (s.redundant_loop && s.history_write)
    return "both";
  if (s.redundant_loop)
    return "rl";
  if (s.history_write)
    return "hw";
  return "none";
}

Analysis analyze(const Image &image, const Footprint &footprint,
                 const AnalysisConfig &config) {
  if (config.top < 1)
    throw Error(ErrorCode::Config, "top must be at least 1");
  if (footprint.image != image.digest)
    throw Error(ErrorCode::ImageMismatch,
                fmt::format("footprint was recorded against image {} but the "
                            "given image is {}",
                            footprint.image, image.digest));
  if (!footprint.crash)
    throw Error(ErrorCode::MissingCrashRecord, "footprint has no crash record");

  Analysis a;
  Report &r = a.report;
  r.image = image.digest;
  r.crash = *footprint.crash;
  if (const DecodedInstr *in = image.find(r.crash.pc))
    r.crash_text = in->text;
  r.config = config;
  r.total_actions = footprint.actions.size();
  r.analyzed_actions = config.depth.resolve(r.total_actions);

  auto t0 = Clock::now();
  const Footprint window = r.analyzed_actions == r.total_actions
                               ? footprint
                               : slice_last(footprint, r.analyzed_actions);
  r.first_trace_index = window.actions.front().trace_index;
  a.chain = build_chain(window, image);
  r.timings.chain_ms = ms_since(t0);

  t0 = Clock::now();
  r.recovery = recover(a.chain, config.recovery);
  r.timings.recovery_ms = ms_since(t0);

  t0 = Clock::now();
  a.sink = identify_sink(a.chain);
  a.taint = propagate(a.chain, a.sink);
  r.timings.taint_ms = ms_since(t0);
  r.sink_trace_index = a.sink.trace_index;
  r.sink_pc = a.chain.instances[a.sink.instance].pc;
  for (NodeId n : a.sink.nodes)
    r.sink_locations.push_back(describe_node(a.chain, n));
  r.tainted_occurrences = a.taint.occurrences.size();
  r.tainted_pcs = a.taint.addresses.size();
  r.taint_visited = a.taint.visited;
  r.unresolved = a.taint.unresolved;

  t0 = Clock::now();
  a.scored = score(a.taint, a.chain, config.strategies, config.params);
  for (const ScoredInstruction &s : top_k(a.scored, config.top)) {
    const DecodedInstr *in = image.find(s.pc);
    r.ranking.push_back({s, in ? in->text : std::string("?")});
  }
  r.timings.ranking_ms = ms_since(t0);
  return a;
}

std::string render_json(const Report &r) {
  using J = nlohmann::ordered_json;
  J j;
  j["schema"] = "report/1";
  j["image"] = r.image;
  J crash;
  crash["reason"] = std::string(reason_code(r.crash.reason));
  crash["trace_index"] = r.crash.trace_index;
  crash["pc"] = hex(r.crash.pc);
  crash["fault"] = hex(r.crash.fault_addr);
  crash["culprit"] = culprit_json(r.crash.culprit);
  crash["text"] = r.crash_text;
  j["crash"] = crash;

  J cfg;
  cfg["depth"] = r.config.depth.to_string();
  cfg["strategies"] = strategies_name(r.config.strategies);
  cfg["recovery"] =
      r.config.recovery == RecoveryMode::WithEvents ? "events" : "noevents";
  cfg["top"] = r.config.top;
  cfg["sigma"] = r.config.params.sigma;
  cfg["beta"] = r.config.params.beta;
  cfg["min_reps"] = r.config.params.min_reps;
  cfg["max_body"] = r.config.params.max_body;
  cfg["initial_score"] = 1.0;
  j["config"] = cfg;

  J window;
  window["total_actions"] = r.total_actions;
  window["analyzed_actions"] = r.analyzed_actions;
  window["first_trace_index"] = r.first_trace_index;
  j["window"] = window;

  J sink;
  sink["trace_index"] = r.sink_trace_index;
  sink["pc"] = hex(r.sink_pc);
  sink["locations"] = r.sink_locations;
  j["sink"] = sink;

  J chain;
  chain["nodes"] = r.recovery.nodes;
  chain["known_values"] = r.recovery.known_values;
  chain["known_addresses"] = r.recovery.known_addresses;
  chain["unresolved_uses"] = r.recovery.unresolved_uses;
  j["chain"] = chain;

  J taint;
  taint["occurrences"] = r.tainted_occurrences;
  taint["pcs"] = r.tainted_pcs;
  taint["visited"] = r.taint_visited;
  taint["unresolved"] = r.unresolved;
  j["taint"] = taint;

  J ranking = J::array();
  for (const ReportEntry &e : r.ranking) {
    J item;
    item["rank"] = e.scored.rank;
    item["score"] = e.scored.score;
    item["pc"] = hex(e.scored.pc);
    item["text"] = e.text;
    item["occurrences"] = e.scored.occurrences.size();
    item["first"] = e.scored.occurrences.front();
    item["last"] = e.scored.occurrences.back();
    item["tags"] = tag_names(e.scored.tags);
    ranking.push_back(item);
  }
  j["ranking"] = ranking;

  if (r.config.timings) {
    J t;
    t["chain"] = r.timings.chain_ms;
    t["recovery"] = r.timings.recovery_ms;
    t["taint"] = r.timings.taint_ms;
    t["ranking"] = r.timings.ranking_ms;
    j["timings_ms"] = t;
  }
  return j.dump(2) + "\n";
}

std::string render_text(const Report &r) {
  std::string out;
  out += fmt::format("crash: {} at {} ({}) fault {}{}, trace index {}\n",
                     reason_code(r.crash.reason), hex(r.crash.pc), r.crash_text,
                     hex(r.crash.fault_addr), culprit_text(r.crash.culprit),
                     r.crash.trace_index);
  out += fmt::format(
      "config: depth {}, strategies {}, recovery {}, top {}, sigma {}, beta {}, "
      "min-reps {}\n",
      r.config.depth.to_string(), strategies_name(r.config.strategies),
      r.config.recovery == RecoveryMode::WithEvents ? "events" : "noevents",
      r.config.top, r.config.params.sigma, r.config.params.beta,
      r.config.params.min_reps);
  std::string locs;
  for (const auto &l : r.sink_locations)
    locs += (locs.empty() ? "" : ", ") + l;
  out += fmt::format("window: {} of {} actions from trace index {}; sink {{{}}} "
                     "at trace index {}\n",
                     r.analyzed_actions, r.total_actions, r.first_trace_index,
                     locs, r.sink_trace_index);
  out += fmt::format("chain: {} nodes, {} known values, {} unresolved memory "
                     "uses\n",
                     r.recovery.nodes, r.recovery.known_values,
                     r.recovery.unresolved_uses);
  out += fmt::format("taint: {} occurrences over {} instructions\n",
                     r.tainted_occurrences, r.tainted_pcs);
  if (r.config.timings)
    out += fmt::format("time (ms): chain {:.3f}, recovery {:.3f}, taint {:.3f}, "
                       "ranking {:.3f}\n",
                       r.timings.chain_ms, r.timings.recovery_ms,
                       r.timings.taint_ms, r.timings.ranking_ms);
  out += "\n";
  out += fmt::format("{:>4}  {:>8}  {:<10}  {:>5}  {:>7}  {:>7}  {:<28}  {}\n",
                     "rank", "score", "pc", "occ", "first", "last",
                     "instruction", "tags");
  for (const ReportEntry &e : r.ranking) {
    std::string tags;
    for (const auto &t : tag_names(e.scored.tags))
      tags += (tags.empty() ? "" : ",") + t;
    std::string line = fmt::format(
        "{:>4}  {:>8.4f}  {:<10}  {:>5}  {:>7}  {:>7}  {:<28}  {}", e.scored.rank,
        e.scored.score, hex(e.scored.pc), e.scored.occurrences.size(),
        e.scored.occurrences.front(), e.scored.occurrences.back(), e.text, tags);
    line.erase(line.find_last_not_of(' ') + 1);
    out += line + "\n";
  }
  return out;
}

} // namespace rca
