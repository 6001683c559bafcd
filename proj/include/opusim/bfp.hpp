#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "opusim/fp16.hpp"
#include "opusim/pack.hpp"

// Block-floating-point dot products as a processing element computes them:
// per-lane significand multiplies (one shared multiplier serving two output
// columns), alignment to the block's largest exponent, integer accumulation,
// and a single float16 rounding at the end.

namespace opusim::numerics {

enum class PeImpl {
  impl1,  // full 22-bit product mantissas, 20 fractional bits kept
  impl2,  // products truncated by 7 bits before alignment (13 kept)
  impl3,  // impl2 datapath with accumulation folded into the MAC; same bits
};

enum class PeMode { fp16, int4 };

inline constexpr int kZeroExponent = std::numeric_limits<int>::min();

struct ProductLane {
  int64_t mantissa = 0;             // signed product mantissa
  int exponent = kZeroExponent;     // kZeroExponent marks an all-zero lane
};

struct PeStats {
  uint64_t subnormal_flushes = 0;  // inputs flushed to zero at ingestion
  uint64_t saturations = 0;        // outputs clamped to +-65504
  uint64_t multiplies = 0;         // physical multiplier activations
};

struct PeColumnConfig {
  PeImpl impl = PeImpl::impl2;
  PeMode mode = PeMode::fp16;
  PackScheme scheme = PackScheme::overpacked_truncated;  // fp16 pair packing
};

int frac_bits_for(const PeColumnConfig& cfg);

// One lane, two output columns sharing the multiplier.  Inputs are flushed
// (subnormals -> 0) before use; a zero operand yields a sentinel lane.
std::pair<ProductLane, ProductLane> fp16_pair_product(Fp16Bits x, Fp16Bits wa,
                                                      Fp16Bits wb,
                                                      const PeColumnConfig& cfg,
                                                      PeStats* stats);
std::pair<ProductLane, ProductLane> int4_pair_product(Fp16Bits x, int wa,
                                                      int wb,
                                                      const PeColumnConfig& cfg,
                                                      PeStats* stats);

// Align lanes to the block maximum exponent, sum exactly, round once.
Fp16Bits bfp_finalize(const std::vector<ProductLane>& lanes,
                      const PeColumnConfig& cfg, PeStats* stats);

// Single-column dot: each lane self-pairs its weight and keeps product 0.
Fp16Bits pe_dot(const Fp16Bits* x, const Fp16Bits* w, std::size_t n,
                const PeColumnConfig& cfg, PeStats* stats);
Fp16Bits pe_dot_int4(const Fp16Bits* x, const int8_t* w, std::size_t n,
                     const PeColumnConfig& cfg, PeStats* stats);

// Two output columns against a shared activation vector.
std::pair<Fp16Bits, Fp16Bits> pe_dot_pair(const Fp16Bits* x,
                                          const Fp16Bits* wa,
                                          const Fp16Bits* wb, std::size_t n,
                                          const PeColumnConfig& cfg,
                                          PeStats* stats);
std::pair<Fp16Bits, Fp16Bits> pe_dot_pair_int4(const Fp16Bits* x,
                                               const int8_t* wa,
                                               const int8_t* wb, std::size_t n,
                                               const PeColumnConfig& cfg,
                                               PeStats* stats);

// Sequential float16 multiply-accumulate chain: one rounding per step.
// The usual software baseline the block-floating path is compared against.
Fp16Bits naive_dot(const Fp16Bits* x, const Fp16Bits* w, std::size_t n,
                   PeStats* stats);

// float16 encode that clamps to +-65504 instead of throwing on overflow.
Fp16Bits encode_saturating(double v, PeStats* stats);

}  // namespace opusim::numerics
