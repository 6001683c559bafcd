#ifndef OPUSIM_PACK_HPP
#define OPUSIM_PACK_HPP

#include <cstdint>
#include <utility>

#include "opusim/dsp.hpp"

namespace opusim::numerics {

// Two unsigned W-bit significands u0 (right/low) and u1 (left/high) are
// packed into the 27-bit pre-adder path of one MAC slice so that a single
// multiply against a shared significand v yields both products.
//
//   standard             non-overlapping fields; needs 3W <= 26 bits, so it
//                        is infeasible at the full 11-bit width
//   overpacked           fields overlap by o = 3W-26 bits; the corrupted
//                        overlap is cancelled through the C port using one
//                        o-bit auxiliary multiply (o = 7 at W = 11)
//   overpacked_truncated u0 drops its LSB, u1 drops its MSB, and the left
//                        operand is sign-inverted through the pre-adder.
//                        The C port then restores both the truncated bits
//                        and the overlap in one addition, and the auxiliary
//                        multiply shrinks to 5 bits
enum class PackScheme { standard, overpacked, overpacked_truncated };

struct PackedPair {
  PackScheme scheme = PackScheme::overpacked_truncated;
  int width = 11;  // significand width W of each packed operand
  DspPorts ports;  // a/d/pre_adder fixed here; b/c completed per shared operand
  // small-multiplier operands (left-operand low bits, shared-operand low
  // bits); second slot is filled when the shared operand arrives
  std::pair<uint32_t, uint32_t> aux_multiplicands{0, 0};
  // (LSB removed from u0, MSB removed from u1); only meaningful for the
  // truncated scheme
  std::pair<uint32_t, uint32_t> truncated_bits{0, 0};
};

struct DualProduct {
  uint32_t p0 = 0;  // u0 * v, at most 2W bits
  uint32_t p1 = 0;  // u1 * v
};

// Throws std::invalid_argument on out-of-range operands and
// std::domain_error when the scheme cannot fit the port widths.
PackedPair pack_pair(uint32_t u0, uint32_t u1, PackScheme scheme,
                     int width = 11);

// Completes the ports for shared significand v, runs one dsp_mac plus the
// auxiliary small multiply, and extracts both products.  Internal field
// checks throw std::logic_error if the recovery contract is violated.
DualProduct recover_dual_products(PackedPair& pp, uint32_t v);

}  // namespace opusim::numerics

#endif
