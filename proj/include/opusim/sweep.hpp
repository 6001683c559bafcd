#pragma once

#include <cstdint>

#include "opusim/bfp.hpp"

// Relative-error measurement of the block-floating dot kernels against a
// binary64 reference, over randomized operand draws.

namespace opusim::numerics {

// Which kernel produces y-hat for a trial.
enum class SweepKernel { impl1, impl2, impl3, naive };

// Operand draw.  `normal`: activations and weights both standard normal
// (weights uniform integers in int4 mode).  `mixture`: weights from a
// two-component normal scale mixture, mostly narrow with occasional wide
// draws; activations stay standard normal.
enum class SweepDist { normal, mixture };

struct SweepSpec {
  SweepKernel kernel = SweepKernel::impl2;
  PeMode mode = PeMode::fp16;
  SweepDist dist = SweepDist::normal;
  int depth = 64;
  int trials = 100000;
  uint64_t seed = 1;
  bool parallel = true;
};

struct SweepResult {
  double mean_rel_err_pct = 0.0;  // mean of |y - ref| / |ref| * 100
  uint64_t used_trials = 0;
  uint64_t skipped_zero_ref = 0;
  PeStats stats;
};

SweepResult run_error_sweep(const SweepSpec& spec);

const char* to_string(SweepKernel k);
const char* to_string(SweepDist d);
const char* to_string(PeMode m);

}  // namespace opusim::numerics
