#pragma once

#include <cstdint>

#include "opusim/kvsim.hpp"

// Analytic throughput model of the attention submodule on the overlay.
// Prefill stages are compute-bound on the MAC array with a per-layer
// pipeline-bubble term; decode steps are memory-bound and compose stream
// efficiencies measured by the KV traffic simulator.
//
// Schemes:
//   dense                    every token runs every layer
//   token_skip               skipped tokens drop their query/attention/
//                            output work, KV is still produced for them
//   layer_fallback           skipped pairs drop the whole submodule and
//                            readers fall back to earlier-layer entries
//   layer_fallback_buffered  layer_fallback plus the reuse buffer and
//                            stall-free scheduling

namespace opusim::speedup {

enum class Scheme { dense, token_skip, layer_fallback, layer_fallback_buffered };

struct ShapeParams {
  int dim = 4096;
  int heads = 32;
  int layers = 32;
  int weight_bits = 4;  // stored attention weights
  int kv_bits = 16;     // stored KV entries
};

struct PerfParams {
  int mac_rows = 64;
  int mac_cols = 128;
  double fabric_mhz = 225.0;
  double hbm_peak_gbps = 460.8;
};

// ---- prefill -------------------------------------------------------------

struct PrefillCycles {
  double compute = 0.0;
  double memory = 0.0;
  double bubble = 0.0;
  double total() const;  // max(compute, memory) + bubble
};

// Non-overlapped work between pipeline stages scales with the activation
// and score elements crossing them; the coefficient (cycles per element)
// is fixed once from the dense-to-fully-overlapped ratio at a reference
// prefill length.
double calibrate_bubble_coeff(const ShapeParams& sp, const PerfParams& pp,
                              int cal_tokens = 512, double skip = 0.25,
                              double target_ratio = 1.40);

PrefillCycles prefill_cycles(Scheme sc, const ShapeParams& sp,
                             const PerfParams& pp, int tokens, double skip,
                             double bubble_coeff);

double prefill_speedup(Scheme sc, const ShapeParams& sp, const PerfParams& pp,
                       int tokens, double skip, double bubble_coeff);

// ---- decode --------------------------------------------------------------

// Stream efficiencies (fractions of peak) per access pattern, as measured
// by the traffic simulator on synthetic traces.
struct DecodeUtils {
  double dense = 1.0;
  double token_wise = 1.0;
  double interleaved = 1.0;
  double buffered = 1.0;
  double page_penalty = 0.0;  // calibrated value, for reporting
};

// Calibrates the page penalty on a dense trace, then measures the other
// three patterns with it.  All traces share geometry, seed and skip rate.
DecodeUtils measure_decode_utils(const kvsim::HbmConfig& hbm,
                                 const kvsim::KvGeometry& geom,
                                 double dense_target_pct = 88.7,
                                 int context = 512, int steps = 512,
                                 int trace_layers = 16, double skip = 0.25,
                                 uint64_t seed = 1);

struct DecodeStep {
  double weight_bytes = 0.0;  // expected per layer
  double kv_bytes = 0.0;
  double seconds = 0.0;
};

// Expected per-layer cost of one decode step with past_tokens cached.
// zero_contention prices every stream at the dense efficiency.
DecodeStep decode_step(Scheme sc, const ShapeParams& sp, const PerfParams& pp,
                       int past_tokens, double skip, const DecodeUtils& du,
                       bool zero_contention = false);

double decode_speedup(Scheme sc, const ShapeParams& sp, const PerfParams& pp,
                      int past_tokens, double skip, const DecodeUtils& du,
                      bool zero_contention = false);

const char* to_string(Scheme sc);

}  // namespace opusim::speedup
