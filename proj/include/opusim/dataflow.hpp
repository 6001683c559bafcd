#pragma once

#include <cstdint>
#include <vector>

#include "opusim/bfp.hpp"
#include "opusim/matrix.hpp"

namespace opusim::dataflow {

// wide: binary64 arithmetic end to end (oracle-friendly).
// device: operands rounded to float16 at ingestion, reductions through the
// block-floating PE, pointwise math in binary32, results stored as float16.
enum class EvalMode { wide, device };

// Counters exposed by the fused kernels so tests can check the memory
// discipline: score tiles spilled once and consumed once, inter-pass state
// limited to the running (max, denom) pair, normalization writing back
// into the input row storage.
struct Probes {
  uint64_t s_tile_writes = 0;
  uint64_t s_tile_reads = 0;
  uint64_t s_tile_violations = 0;   // written or read other than exactly once
  uint64_t s_tile_peak_live = 0;    // most spilled tiles alive for one pair
  uint64_t kv_pass_rows = 0;        // KV rows streamed, counted per head pair
  uint64_t norm_inplace_rows = 0;   // rows normalized into their own storage
  uint64_t masked_rows = 0;         // fully masked query rows short-circuited
  uint64_t router_tile_passes = 0;  // fused router: input tiles visited
};

struct EvalContext {
  EvalMode mode = EvalMode::wide;
  numerics::PeColumnConfig pe;
  Probes* probes = nullptr;
  numerics::PeStats pe_stats;  // device-mode PE activity accumulates here
};

// ---- projection ---------------------------------------------------------

// Y = X * W (X: T x K, W: K x N).  Wide mode accumulates per K tile in
// binary64; device mode reduces each output through the PE, pairing
// adjacent output columns on one shared multiplier.
Mat project(const Mat& x, const Mat& w, int k_tile, EvalContext& ec);

// ---- fused router + normalization ---------------------------------------

struct NormParams {
  std::vector<double> gain;   // per-dimension scale; empty = all ones
  bool subtract_mean = true;  // false: pure root-mean-square variant
  double eps = 1e-5;
};

struct RouterConfig {
  double bias_skip = 0.0;     // added to logit 0
  double bias_execute = 0.0;  // added to logit 1
  bool sampled = false;       // perturb logits with Gumbel noise
  uint64_t seed = 0;          // noise stream, mixed with the row id
  uint64_t row_base = 0;      // noise row id offset (e.g. layer * tokens)
};

struct RouterResult {
  Mat logits;                    // T x 2 raw logits
  std::vector<double> mu;        // per-row mean (0 in pure-RMS mode)
  std::vector<double> sigma;     // per-row sqrt(var + eps)
  std::vector<uint8_t> execute;  // per-row decision
};

// One streaming pass over each row of X accumulates the router logits and
// the moment sums together; afterwards only rows routed to execution are
// normalized, in place.  wr is D x 2 (column 0 = skip, 1 = execute).
RouterResult fused_router_norm(Mat& x, const Mat& wr, const NormParams& np,
                               const RouterConfig& rc, int d_tile,
                               EvalContext& ec);

// Decision rule shared by the fused kernel and the reference path: argmax
// of biased (optionally Gumbel-perturbed) logits; exact ties execute.
bool route_decision(double logit_skip, double logit_execute,
                    const RouterConfig& rc, uint64_t row);

// ---- fused attention -----------------------------------------------------

struct AttnConfig {
  int heads = 1;
  bool causal = true;
  int kv_tile = 32;
  std::vector<int> q_pos;   // absolute positions; empty = storage order
  std::vector<int> kv_pos;
};

// softmax(Q K^T / sqrt(dh)) V per head, in two passes over KV tiles with a
// running (max, denom) pair per query row.  Score tiles are spilled between
// the passes and consumed exactly once; heads are walked in pairs so one KV
// stream feeds two heads.  Causal masking compares positions, with fully
// masked rows yielding zeros.
Mat fused_attention(const Mat& q, const Mat& k, const Mat& v,
                    const AttnConfig& cfg, EvalContext& ec);

// ---- pointwise stages ----------------------------------------------------

// Rotary embedding: per head, lane pair (2p, 2p+1) rotates by
// pos * base^(-2p/dh).
void rope_apply(Mat& x, int heads, const std::vector<int>& pos, double base,
                EvalContext& ec);

// gate := gate * sigmoid(gate) * up, elementwise.
void swiglu_inplace(Mat& gate, const Mat& up, EvalContext& ec);

double silu(double z);

}  // namespace opusim::dataflow
