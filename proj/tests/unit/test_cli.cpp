// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>
#include <fmt/format.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;

namespace {

struct Result {
  int status;
  std::string out;
};

Result sh(const std::string &args) {
  const std::string cmd = fmt::format("'{}' {} 2>&1", TRACE_RCA_BIN, args);
  FILE *p = ::popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  std::string out;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p))
    out.append(buf, n);
  const int st = ::pclose(p);
  return {WIFEXITED(st) ? WEXITSTATUS(st) : -1, out};
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Scratch {
public:
  Scratch() : dir_(fs::temp_directory_path() / fmt::format("trace-rca-cli-{}", ::getpid())) {
    fs::create_directories(dir_);
  }
  ~Scratch() { fs::remove_all(dir_); }
  fs::path write(const std::string &name, const std::string &text) const {
    std::ofstream(dir_ / name, std::ios::binary) << text;
    return dir_ / name;
  }
  fs::path operator/(const std::string &name) const { return dir_ / name; }

private:
  fs::path dir_;
};

} // namespace

TEST_SUITE("cli") {

TEST_CASE("collect exit codes follow the run outcome") {
  Scratch s;
  auto crash = s.write("crash.s", ".org 0x08000000\nmain:\nMOV R3, #0\nSTR R4, [R3, #0]\n");
  auto halt = s.write("halt.s", ".org 0x08000000\nmain:\nNOP\nh: B h\n");
  auto spin = s.write("spin.s", ".org 0x08000000\nmain:\nNOP\nB main\n");
  const auto fp = s / "out.footprint";

  Result r = sh(fmt::format("collect --image '{}' --out '{}'", crash.string(), fp.string()));
  CHECK(r.status == 0);
  CHECK(slurp(fp).find("\"reason\":\"imw\"") != std::string::npos);
  CHECK(sh(fmt::format("collect --image '{}' --out '{}'", halt.string(), fp.string())).status == 2);
  CHECK(sh(fmt::format("collect --image '{}' --out '{}' --max-steps 1", spin.string(),
                       fp.string()))
            .status == 3);
  r = sh(fmt::format("collect --image '{}' --out '{}'", (s / "missing.s").string(), fp.string()));
  CHECK(r.status == 1);
}

TEST_CASE("analyze writes a stable json report") {
  Scratch s;
  const fs::path src = fs::path(RCA_SOURCE_DIR) / "samples" / "null_store.s";
  const auto fp = s / "n.footprint";
  REQUIRE(sh(fmt::format("collect --image '{}' --out '{}'", src.string(), fp.string())).status == 0);
  const std::string args = fmt::format(
      "analyze --image '{}' --footprint '{}' --format json --strategies both --top 10",
      src.string(), fp.string());
  Result a = sh(args);
  Result b = sh(args);
  CHECK(a.status == 0);
  CHECK(a.out == b.out);
  CHECK(a.out.find("\"text\": \"MOV R3, #0\"") != std::string::npos);

  const auto dump = s / "chain.jsonl";
  CHECK(sh(fmt::format("analyze --image '{}' --footprint '{}' --dump-chain '{}' --out '{}'",
                       src.string(), fp.string(), dump.string(), (s / "r.txt").string()))
            .status == 0);
  CHECK(slurp(dump).find("\"kind\":\"use\"") != std::string::npos);
}

TEST_CASE("analyze failures exit 1 with a distinct code") {
  Scratch s;
  const fs::path src = fs::path(RCA_SOURCE_DIR) / "samples" / "null_store.s";
  auto halt = s.write("halt.s", ".org 0x08000000\nmain:\nNOP\nh: B h\n");
  const auto ok = s / "ok.footprint";
  const auto exited = s / "exited.footprint";
  REQUIRE(sh(fmt::format("collect --image '{}' --out '{}'", src.string(), ok.string())).status == 0);
  REQUIRE(sh(fmt::format("collect --image '{}' --out '{}'", halt.string(), exited.string())).status == 2);
  auto bad = s.write("bad.footprint", "{\"fmt\":\"trace-rca/1\"\n");

  Result missing = sh(fmt::format("analyze --image '{}' --footprint '{}'", halt.string(),
                                  exited.string()));
  Result garbled = sh(fmt::format("analyze --image '{}' --footprint '{}'", src.string(),
                                  bad.string()));
  Result foreign = sh(fmt::format("analyze --image '{}' --footprint '{}'", halt.string(),
                                  ok.string()));
  CHECK(missing.status == 1);
  CHECK(garbled.status == 1);
  CHECK(foreign.status == 1);
  CHECK(missing.out.find("E_NO_CRASH") != std::string::npos);
  CHECK(garbled.out.find("E_MALFORMED_LINE") != std::string::npos);
  CHECK(foreign.out.find("E_IMAGE_MISMATCH") != std::string::npos);
}

} // TEST_SUITE
