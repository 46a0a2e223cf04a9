// SPDX-License-Identifier: Apache-2.0
//
// Random instructions, states and footprints for property checks.
#pragma once

#include "rca/footprint.hpp"
#include "rca/isa.hpp"
#include "rca/semantics.hpp"

#include <cstdint>
#include <map>
#include <random>
#include <string>

namespace rca::testing {

using Rng = std::mt19937_64;

/// A well-formed instruction of class `op` at `address`, built from random
/// operands and checked by the assembler.
DecodedInstr random_instruction(Rng &rng, Op op, std::uint32_t address);

/// Random registers and flags with PC at `pc` and a word-aligned SP.
MachineState random_state(Rng &rng, std::uint32_t pc);

/// Every address is mapped. Unwritten bytes read as a hash of their
/// address, so overlapping reads agree.
class HashBus final : public MemoryBus {
public:
  std::optional<std::uint32_t> read(std::uint32_t addr,
                                    std::uint8_t width) override;
  bool write(std::uint32_t addr, std::uint8_t width,
             std::uint32_t value) override;

  static std::uint8_t initial(std::uint32_t addr);

private:
  std::map<std::uint32_t, std::uint8_t> bytes_;
};

/// A structurally valid footprint with `actions` actions.
Footprint random_footprint(Rng &rng, std::size_t actions);

} // namespace rca::testing
