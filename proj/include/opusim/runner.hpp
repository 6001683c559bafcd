#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "opusim/dataflow.hpp"
#include "opusim/matrix.hpp"
#include "opusim/route.hpp"
#include "opusim/trace.hpp"

// Toy decoder stack wired through the fused kernels: routed attention with
// per-layer KV fallback, rotary embedding, gated FFN.  Skipped (layer,
// token) pairs store no KV entry; later readers substitute the latest
// earlier layer's entry.  A prefill pass over the prompt is followed by
// one-token decode steps that also emit a KV access trace for the traffic
// simulator.

namespace opusim::runner {

struct ModelConfig {
  int layers = 8;
  int dim = 64;
  int heads = 4;  // head_dim = dim / heads
  int ffn_dim = 128;
  int context = 48;       // prompt tokens (prefill)
  int decode_steps = 24;  // one-token steps appended after the prompt
  double skip_target = 0.25;  // share of (layer >= 1, token) pairs skipped
  bool sampled_routing = true;
  double router_bias_execute = 0.0;  // set by calibrate_router
  uint64_t seed = 1;
  dataflow::EvalMode mode = dataflow::EvalMode::wide;
  int d_tile = 32;
  int kv_tile = 16;
  double rope_base = 10000.0;
};

struct LayerWeights {
  dataflow::Mat wq, wk, wv, wo;        // dim x dim
  dataflow::Mat w_gate, w_up, w_down;  // dim x ffn, dim x ffn, ffn x dim
  dataflow::Mat w_router;              // dim x 2 (skip, execute)
  std::vector<double> norm1, norm2;    // per-dimension gains
};

struct ModelWeights {
  std::vector<LayerWeights> layers;
};

ModelWeights make_weights(const ModelConfig& mc);

struct RunResult {
  dataflow::Mat hidden;       // final states, (context + steps) x dim
  dataflow::RouteMask mask;   // layers x (context + steps)
  kvsim::AccessTrace trace;   // decode-phase KV traffic
  dataflow::Probes probes;
  numerics::PeStats pe_stats;
  double skip_fraction = 0.0;      // decision layers (l >= 1) only
  double storage_reduction = 0.0;  // 1 - stored / (layers * tokens)
  uint64_t output_hash = 0;        // over hidden bytes + mask bits
};

RunResult run_model(const ModelConfig& mc, const ModelWeights& mw);

// Bisects the execute-side router bias until the measured skip share over
// decision layers lands within tol of mc.skip_target; returns the bias
// (also usable as-is in mc.router_bias_execute).
double calibrate_router(const ModelConfig& mc, const ModelWeights& mw,
                        double tol = 0.02, int iters = 48);

uint64_t fnv1a(const void* data, std::size_t n,
               uint64_t h = 14695981039346656037ull);

}  // namespace opusim::runner
