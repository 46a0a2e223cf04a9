// SPDX-License-Identifier: Apache-2.0
#include "random_gen.hpp"
#include "rca/error.hpp"
#include "rca/isa.hpp"

#include <doctest.h>

using namespace rca;

TEST_SUITE("isa") {

TEST_CASE("immediate move parses at its origin") {
  Image img = assemble(".org 0x100\nMOV R3, #0\n");
  REQUIRE(img.code.size() == 1);
  const DecodedInstr &in = img.code.at(0x100);
  CHECK(in.address == 0x100);
  CHECK(in.op == Op::MOV);
  REQUIRE(in.operands.size() == 2);
  CHECK(in.operands[0] == Operand::make_reg(Reg::R3));
  CHECK(in.operands[1] == Operand::make_imm(0));
}

TEST_CASE("store with displacement has a word memory operand") {
  DecodedInstr in = assemble_line("STR R4, [R3, #0]");
  CHECK(in.op == Op::STR);
  const MemOperand *m = in.mem_operand();
  REQUIRE(m != nullptr);
  CHECK(m->base == Reg::R3);
  CHECK_FALSE(m->index);
  CHECK(m->disp == 0);
  CHECK(m->width == 4);
}

TEST_CASE("forward label resolves to the address after it") {
  Image img = assemble(".org 0x08000000\n"
                       "main:\n"
                       "  B end\n"
                       "  NOP\n"
                       "  NOP\n"
                       "end:\n"
                       "  NOP\n");
  // Three instructions precede the label, four bytes each.
  const std::uint32_t expected = 0x08000000u + 3 * 4;
  CHECK(img.labels.at("end") == expected);
  CHECK(img.code.at(0x08000000).operands[0].imm == expected);
}

TEST_CASE("data directives place little-endian bytes") {
  Image img = assemble(".org 0x20000000\n.word 0x11223344\n.byte 0x55\n");
  REQUIRE(img.data.size() >= 1);
  std::vector<std::uint8_t> bytes;
  for (const auto &seg : img.data)
    bytes.insert(bytes.end(), seg.bytes.begin(), seg.bytes.end());
  CHECK(bytes == std::vector<std::uint8_t>{0x44, 0x33, 0x22, 0x11, 0x55});
}

TEST_CASE("diagnostics carry kind and line") {
  auto code_of = [](const char *src) {
    try {
      assemble(src);
    } catch (const AsmError &e) {
      return std::pair{e.code(), e.line()};
    }
    return std::pair{ErrorCode::Io, std::size_t{0}};
  };
  CHECK(code_of("NOP\nFOO R1\n") == std::pair{ErrorCode::Syntax, std::size_t{2}});
  CHECK(code_of("a:\nNOP\na:\nNOP\n").first == ErrorCode::DuplicateLabel);
  CHECK(code_of("B nowhere\n").first == ErrorCode::UnresolvedLabel);
  CHECK(code_of(".org 0x100\nNOP\n.org 0x100\nNOP\n").first ==
        ErrorCode::OverlappingPlacement);
}

TEST_CASE("operand shape rules are enforced") {
  CHECK_THROWS_AS(assemble_line("STR R1"), AsmError);
  CHECK_THROWS_AS(assemble_line("LDR R1, [R2, R3, LSL #32]"), AsmError);
  CHECK_THROWS_AS(assemble_line("ADD R1, [R2]"), AsmError);
}

TEST_CASE("canonical text reassembles to the same instruction") {
  testing::Rng rng(11);
  for (std::size_t op = 0; op < kNumOps; ++op)
    for (int i = 0; i < 50; ++i) {
      const std::uint32_t addr = 0x08000000u + 4 * static_cast<std::uint32_t>(i);
      DecodedInstr in = testing::random_instruction(rng, static_cast<Op>(op), addr);
      const std::string text = disassemble(in);
      CHECK(text == in.text);
      DecodedInstr again = assemble_line(text, addr);
      CHECK(again.op == in.op);
      CHECK(again.cond == in.cond);
      CHECK(again.sets_flags == in.sets_flags);
      CHECK(again.operands == in.operands);
      CHECK(disassemble(again) == text);
    }
}

TEST_CASE("image digest is the sha-256 of the source") {
  CHECK(sha256_hex("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  const std::string src = "NOP\n";
  CHECK(assemble(src).digest == sha256_hex(src));
}

} // TEST_SUITE
