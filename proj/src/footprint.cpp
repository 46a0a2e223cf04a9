// SPDX-License-Identifier: Apache-2.0
#include "rca/footprint.hpp"

#include "rca/error.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <fstream>
#include <iterator>
#include <sstream>

namespace rca {

using ordered_json = nlohmann::ordered_json;

namespace {

[[noreturn]] void invariant(const std::string &msg) {
  throw FootprintError(ErrorCode::InvariantViolation, 0, msg);
}

std::string hex(std::uint32_t v) { return fmt::format("0x{:x}", v); }

std::string format_culprit(const std::optional<Culprit> &c) {
  if (!c)
    return "null";
  switch (c->kind) {
  case Culprit::Kind::ExplicitPop:
    return fmt::format(R"({{"kind":"explicit_pop","addr":"{}"}})",
                       hex(c->stack_addr));
  case Culprit::Kind::ImplicitRegister:
    return fmt::format(R"({{"kind":"implicit_register","reg":"{}"}})",
                       reg_name(c->reg));
  case Culprit::Kind::SequentialOverrun:
    return R"({"kind":"sequential_overrun"})";
  }
  return "null";
}

std::string format_header(const Footprint &fp) {
  return fmt::format(R"({{"fmt":"{}","image":"{}","entry":"{}"}})",
                     kFootprintFormat, fp.image, hex(fp.entry));
}

std::string format_action(const ActionEvent &a) {
  return fmt::format(R"({{"t":"A","i":{},"pc":"{}"}})", a.trace_index,
                     hex(a.pc));
}

std::string format_data(const DataEvent &d) {
  return fmt::format(
      R"({{"t":"D","i":{},"pc":"{}","op":"{}","addr":"{}","w":{},"val":"{}"}})",
      d.trace_index, hex(d.pc), d.kind == AccessKind::Read ? "R" : "W",
      hex(d.addr), d.width, hex(d.value));
}

std::string format_crash(const CrashDescriptor &c) {
  return fmt::format(
      R"({{"t":"C","i":{},"pc":"{}","reason":"{}","fault":"{}","culprit":{}}})",
      c.trace_index, hex(c.pc), reason_code(c.reason), hex(c.fault_addr),
      format_culprit(c.culprit));
}

bool is_sha256_hex(std::string_view s) {
  if (s.size() != 64)
    return false;
  for (char c : s)
    if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f')))
      return false;
  return true;
}

// --- parsing ---------------------------------------------------------------

class LineReader {
public:
  LineReader(const ordered_json &j, std::size_t line) : j_(j), line_(line) {}

  [[noreturn]] void fail(const std::string &msg) const {
    throw FootprintError(ErrorCode::MalformedLine, line_, msg);
  }

  const ordered_json &field(const char *key) const {
    auto it = j_.find(key);
    if (it == j_.end())
      fail(fmt::format("missing key \"{}\"", key));
    return *it;
  }

  std::string str(const char *key) const {
    const auto &v = field(key);
    if (!v.is_string())
      fail(fmt::format("\"{}\" must be a string", key));
    return v.get<std::string>();
  }

  std::uint64_t uint(const char *key) const {
    const auto &v = field(key);
    if (!v.is_number_unsigned())
      fail(fmt::format("\"{}\" must be a non-negative integer", key));
    return v.get<std::uint64_t>();
  }

  std::uint32_t hex32(const char *key) const { return parse_hex(str(key), key); }

  std::uint32_t parse_hex(const std::string &s, const char *key) const {
    if (s.size() < 3 || s.size() > 10 || s[0] != '0' || s[1] != 'x')
      fail(fmt::format("\"{}\" must be 0x-prefixed hex", key));
    std::uint32_t v = 0;
    for (std::size_t i = 2; i < s.size(); ++i) {
      char c = s[i];
      unsigned d;
      if (c >= '0' && c <= '9')
        d = c - '0';
      else if (c >= 'a' && c <= 'f')
        d = c - 'a' + 10;
      else
        fail(fmt::format("\"{}\" must be lowercase hex", key));
      v = v << 4 | d;
    }
    return v;
  }

private:
  const ordered_json &j_;
  std::size_t line_;
};

std::optional<Culprit> parse_culprit(const LineReader &r) {
  const auto &c = r.field("culprit");
  if (c.is_null())
    return std::nullopt;
  if (!c.is_object())
    r.fail("culprit must be an object or null");
  auto kind = c.find("kind");
  if (kind == c.end() || !kind->is_string())
    r.fail("culprit needs a kind");
  Culprit out;
  const auto k = kind->get<std::string>();
  if (k == "explicit_pop") {
    out.kind = Culprit::Kind::ExplicitPop;
    auto a = c.find("addr");
    if (a == c.end() || !a->is_string())
      r.fail("explicit_pop culprit needs addr");
    out.stack_addr = r.parse_hex(a->get<std::string>(), "addr");
  } else if (k == "implicit_register") {
    out.kind = Culprit::Kind::ImplicitRegister;
    auto g = c.find("reg");
    if (g == c.end() || !g->is_string())
      r.fail("implicit_register culprit needs reg");
    auto reg = parse_reg(g->get<std::string>());
    if (!reg)
      r.fail("unknown culprit register");
    out.reg = *reg;
  } else if (k == "sequential_overrun") {
    out.kind = Culprit::Kind::SequentialOverrun;
  } else {
    r.fail(fmt::format("unknown culprit kind '{}'", k));
  }
  return out;
}

} // namespace

std::string_view reason_code(CrashReason r) {
  switch (r) {
  case CrashReason::InvalidMemoryRead: return "imr";
  case CrashReason::InvalidMemoryWrite: return "imw";
  case CrashReason::InvalidInstructionExecution: return "iie";
  }
  return "?";
}

std::vector<std::pair<std::size_t, std::size_t>>
data_spans(const Footprint &fp) {
  std::vector<std::pair<std::size_t, std::size_t>> spans(fp.actions.size());
  if (fp.actions.empty())
    return spans;
  const std::uint64_t first = fp.actions.front().trace_index;
  std::size_t k = 0;
  for (std::size_t a = 0; a < fp.actions.size(); ++a) {
    spans[a].first = k;
    while (k < fp.data.size() && fp.data[k].trace_index - first == a)
      ++k;
    spans[a].second = k;
  }
  return spans;
}

void validate(const Footprint &fp) {
  if (!is_sha256_hex(fp.image))
    invariant("image id must be 64 lowercase hex digits");
  if (fp.actions.empty())
    invariant("footprint has no actions");
  const std::uint64_t first = fp.actions.front().trace_index;
  for (std::size_t a = 0; a < fp.actions.size(); ++a)
    if (fp.actions[a].trace_index != first + a)
      invariant(fmt::format("action trace_index {} breaks contiguity",
                            fp.actions[a].trace_index));
  const std::uint64_t last = fp.actions.back().trace_index;
  std::uint64_t prev = first;
  for (const DataEvent &d : fp.data) {
    if (d.trace_index < first || d.trace_index > last)
      invariant(fmt::format("data event cites nonexistent trace_index {}",
                            d.trace_index));
    if (d.trace_index < prev)
      invariant(fmt::format("data event for {} is out of order", d.trace_index));
    prev = d.trace_index;
    if (fp.actions[d.trace_index - first].pc != d.pc)
      invariant(fmt::format("data event pc {} differs from action {}",
                            hex(d.pc), d.trace_index));
    if (d.width != 1 && d.width != 2 && d.width != 4)
      invariant(fmt::format("data event width {} is not 1, 2 or 4", d.width));
    if (d.width < 4 && d.value >= (1u << (8 * d.width)))
      invariant(fmt::format("data event value {} exceeds width {}",
                            hex(d.value), d.width));
  }
  if (fp.crash) {
    const CrashDescriptor &c = *fp.crash;
    if (c.trace_index != last || c.pc != fp.actions.back().pc)
      invariant("crash record must describe the last action");
    const bool exec = c.reason == CrashReason::InvalidInstructionExecution;
    if (exec != c.culprit.has_value())
      invariant(exec ? "execution crash without culprit"
                     : "memory crash with a culprit");
  }
}

std::size_t write_footprint(const Footprint &fp, std::ostream &out) {
  validate(fp);
  std::string text;
  text.reserve(64 * (fp.actions.size() + fp.data.size()) + 128);
  text += format_header(fp);
  text += '\n';
  std::size_t k = 0;
  for (const ActionEvent &a : fp.actions) {
    text += format_action(a);
    text += '\n';
    while (k < fp.data.size() && fp.data[k].trace_index == a.trace_index) {
      text += format_data(fp.data[k++]);
      text += '\n';
    }
  }
  if (fp.crash) {
    text += format_crash(*fp.crash);
    text += '\n';
  }
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out)
    throw Error(ErrorCode::Io, "footprint write failed");
  return text.size();
}

std::string footprint_to_string(const Footprint &fp) {
  std::ostringstream os;
  write_footprint(fp, os);
  return os.str();
}

void save_footprint(const Footprint &fp, const std::string &path) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw Error(ErrorCode::Io, fmt::format("cannot open {} for writing", path));
  write_footprint(fp, out);
}

Footprint parse_footprint(std::string_view text) {
  Footprint fp;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool have_header = false;
  while (pos < text.size()) {
    ++line_no;
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos)
      throw FootprintError(ErrorCode::MalformedLine, line_no,
                           "line is not newline-terminated");
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;

    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error &) {
      throw FootprintError(ErrorCode::MalformedLine, line_no, "invalid JSON");
    }
    if (!j.is_object())
      throw FootprintError(ErrorCode::MalformedLine, line_no,
                           "record must be a JSON object");
    LineReader r(j, line_no);
    std::string canonical;

    if (!have_header) {
      if (!j.contains("fmt"))
        r.fail("first line must be the header");
      if (r.str("fmt") != kFootprintFormat)
        throw FootprintError(ErrorCode::UnsupportedVersion, line_no,
                             fmt::format("unsupported format '{}'", r.str("fmt")));
      fp.image = r.str("image");
      fp.entry = r.hex32("entry");
      if (!is_sha256_hex(fp.image))
        r.fail("image id must be 64 lowercase hex digits");
      canonical = format_header(fp);
      have_header = true;
    } else {
      if (fp.crash)
        throw FootprintError(ErrorCode::InvariantViolation, line_no,
                             "records after the crash record");
      const std::string t = r.str("t");
      if (t == "A") {
        ActionEvent a{r.uint("i"), r.hex32("pc")};
        canonical = format_action(a);
        fp.actions.push_back(a);
      } else if (t == "D") {
        DataEvent d;
        d.trace_index = r.uint("i");
        d.pc = r.hex32("pc");
        const std::string op = r.str("op");
        if (op != "R" && op != "W")
          r.fail("op must be R or W");
        d.kind = op == "R" ? AccessKind::Read : AccessKind::Write;
        d.addr = r.hex32("addr");
        const std::uint64_t w = r.uint("w");
        if (w != 1 && w != 2 && w != 4)
          r.fail("w must be 1, 2 or 4");
        d.width = static_cast<std::uint8_t>(w);
        d.value = r.hex32("val");
        canonical = format_data(d);
        // Data events follow the action they belong to.
        if (fp.actions.empty() || fp.actions.back().trace_index != d.trace_index)
          throw FootprintError(
              ErrorCode::InvariantViolation, line_no,
              fmt::format("data event cites trace_index {} which is not the "
                          "preceding action",
                          d.trace_index));
        fp.data.push_back(d);
      } else if (t == "C") {
        CrashDescriptor c;
        c.trace_index = r.uint("i");
        c.pc = r.hex32("pc");
        const std::string reason = r.str("reason");
        if (reason == "imr")
          c.reason = CrashReason::InvalidMemoryRead;
        else if (reason == "imw")
          c.reason = CrashReason::InvalidMemoryWrite;
        else if (reason == "iie")
          c.reason = CrashReason::InvalidInstructionExecution;
        else
          r.fail(fmt::format("unknown crash reason '{}'", reason));
        c.fault_addr = r.hex32("fault");
        c.culprit = parse_culprit(r);
        canonical = format_crash(c);
        fp.crash = c;
      } else {
        r.fail(fmt::format("unknown record type '{}'", t));
      }
    }
    // Key order, spacing and hex spelling are fixed; anything else is not
    // a footprint this tool wrote.
    if (canonical != line)
      r.fail("record is not in canonical form");
  }
  if (!have_header)
    throw FootprintError(ErrorCode::MalformedLine, 1, "missing header");
  validate(fp);
  return fp;
}

Footprint parse_footprint(std::istream &in) {
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  if (in.bad())
    throw Error(ErrorCode::Io, "footprint read failed");
  return parse_footprint(std::string_view(text));
}

Footprint load_footprint(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error(ErrorCode::Io, fmt::format("cannot open {}", path));
  return parse_footprint(in);
}

Footprint slice_last(const Footprint &fp, std::size_t n) {
  if (n < 1 || n > fp.actions.size())
    throw Error(ErrorCode::OutOfRange,
                fmt::format("slice length {} outside 1..{}", n,
                            fp.actions.size()));
  Footprint out;
  out.image = fp.image;
  out.entry = fp.entry;
  out.crash = fp.crash;
  const std::size_t drop = fp.actions.size() - n;
  out.actions.assign(fp.actions.begin() + static_cast<std::ptrdiff_t>(drop),
                     fp.actions.end());
  const std::uint64_t first = out.actions.front().trace_index;
  for (const DataEvent &d : fp.data)
    if (d.trace_index >= first)
      out.data.push_back(d);
  return out;
}

} // namespace rca
