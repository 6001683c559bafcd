#include "opusim/speedup.hpp"

#include <algorithm>
#include <stdexcept>

namespace opusim::speedup {

namespace {

struct Factors {
  double q = 1.0, kv = 1.0, att = 1.0, proj = 1.0, bubble = 1.0;
};

Factors scheme_factors(Scheme sc, double s) {
  const double keep = 1.0 - s;
  switch (sc) {
    case Scheme::dense:
      return {1.0, 1.0, 1.0, 1.0, 1.0};
    case Scheme::token_skip:
      return {keep, 1.0, keep, keep, keep};
    case Scheme::layer_fallback:
      return {keep, keep, keep, keep, keep};
    case Scheme::layer_fallback_buffered:
      return {keep, keep, keep, keep, 0.0};
  }
  throw std::invalid_argument("scheme_factors: bad scheme");
}

void check(const ShapeParams& sp, double skip) {
  if (sp.dim <= 0 || sp.heads <= 0 || sp.dim % sp.heads != 0)
    throw std::invalid_argument("speedup: bad shape");
  if (skip < 0.0 || skip >= 1.0)
    throw std::invalid_argument("speedup: skip must be in [0, 1)");
}

double macs_per_cycle(const PerfParams& pp) {
  return double(pp.mac_rows) * double(pp.mac_cols);
}

double weight_bytes_all(const ShapeParams& sp) {
  // Q, K, V and output projection.
  return 4.0 * double(sp.dim) * double(sp.dim) * sp.weight_bits / 8.0;
}

double kv_entry_bytes(const ShapeParams& sp) {
  return 2.0 * double(sp.dim) * sp.kv_bits / 8.0;
}

}  // namespace

double PrefillCycles::total() const {
  return std::max(compute, memory) + bubble;
}

PrefillCycles prefill_cycles(Scheme sc, const ShapeParams& sp,
                             const PerfParams& pp, int tokens, double skip,
                             double bubble_coeff) {
  check(sp, skip);
  if (tokens <= 0) throw std::invalid_argument("prefill_cycles: bad tokens");
  const Factors f = scheme_factors(sc, skip);
  const double t = tokens, d = sp.dim, h = sp.heads;

  const double q_macs = t * d * d;
  const double kv_macs = 2.0 * t * d * d;
  const double att_macs = 2.0 * t * t * d;  // scores plus weighted sum
  const double proj_macs = t * d * d;

  PrefillCycles pc;
  pc.compute = (f.q * q_macs + f.kv * kv_macs + f.att * att_macs +
                f.proj * proj_macs) /
               macs_per_cycle(pp);
  const double bytes =
      weight_bytes_all(sp) + f.kv * t * kv_entry_bytes(sp);  // per layer
  pc.memory = bytes / (pp.hbm_peak_gbps * 1e9) * (pp.fabric_mhz * 1e6);
  pc.bubble = f.bubble * bubble_coeff * (t * d + h * t * t);
  return pc;
}

double calibrate_bubble_coeff(const ShapeParams& sp, const PerfParams& pp,
                              int cal_tokens, double skip,
                              double target_ratio) {
  const PrefillCycles base =
      prefill_cycles(Scheme::dense, sp, pp, cal_tokens, skip, 0.0);
  const PrefillCycles best = prefill_cycles(Scheme::layer_fallback_buffered,
                                            sp, pp, cal_tokens, skip, 0.0);
  const double t = cal_tokens, d = sp.dim, h = sp.heads;
  const double elems = t * d + h * t * t;
  // target = (base + c * elems) / best, the buffered scheme carrying no
  // bubble by construction.
  const double c = (target_ratio * best.total() - base.total()) / elems;
  if (c <= 0.0)
    throw std::domain_error("calibrate_bubble_coeff: target below dense");
  return c;
}

double prefill_speedup(Scheme sc, const ShapeParams& sp, const PerfParams& pp,
                       int tokens, double skip, double bubble_coeff) {
  const double base =
      prefill_cycles(Scheme::dense, sp, pp, tokens, skip, bubble_coeff).total();
  const double mine =
      prefill_cycles(sc, sp, pp, tokens, skip, bubble_coeff).total();
  return base / mine;
}

DecodeUtils measure_decode_utils(const kvsim::HbmConfig& hbm,
                                 const kvsim::KvGeometry& geom,
                                 double dense_target_pct, int context,
                                 int steps, int trace_layers, double skip,
                                 uint64_t seed) {
  kvsim::SyntheticSpec sp;
  sp.context = context;
  sp.steps = steps;
  sp.layers = trace_layers;
  sp.skip = skip;
  sp.seed = seed;

  kvsim::KvSimConfig cfg;
  cfg.hbm = hbm;
  cfg.geom = geom;

  sp.style = kvsim::TraceStyle::dense;
  const kvsim::AccessTrace dense = kvsim::make_synthetic(sp).trace;
  cfg.hbm.page_miss_penalty_cycles =
      kvsim::calibrate_page_penalty(dense, cfg, dense_target_pct);

  DecodeUtils du;
  du.page_penalty = cfg.hbm.page_miss_penalty_cycles;
  du.dense = kvsim::run_kvsim(dense, cfg).hbm_util_pct / 100.0;

  sp.style = kvsim::TraceStyle::token_wise;
  du.token_wise =
      kvsim::run_kvsim(kvsim::make_synthetic(sp).trace, cfg).hbm_util_pct /
      100.0;

  sp.style = kvsim::TraceStyle::interleaved_skip;
  const kvsim::AccessTrace inter = kvsim::make_synthetic(sp).trace;
  du.interleaved = kvsim::run_kvsim(inter, cfg).hbm_util_pct / 100.0;

  cfg.buffer.enabled = true;
  du.buffered = kvsim::run_kvsim(inter, cfg).hbm_util_pct / 100.0;
  return du;
}

DecodeStep decode_step(Scheme sc, const ShapeParams& sp, const PerfParams& pp,
                       int past_tokens, double skip, const DecodeUtils& du,
                       bool zero_contention) {
  check(sp, skip);
  if (past_tokens <= 0) throw std::invalid_argument("decode_step: bad tokens");
  const double keep = 1.0 - skip;
  const double w_all = weight_bytes_all(sp);
  const double w_kvgen = w_all / 2.0;  // K and V generation only
  const double kv = double(past_tokens) * kv_entry_bytes(sp);
  const double bw = pp.hbm_peak_gbps * 1e9;

  const double u_d = du.dense;
  const double u_tw = zero_contention ? du.dense : du.token_wise;
  const double u_is = zero_contention ? du.dense : du.interleaved;
  const double u_bf = zero_contention ? du.dense : du.buffered;
  if (u_d <= 0.0 || u_tw <= 0.0 || u_is <= 0.0 || u_bf <= 0.0)
    throw std::invalid_argument("decode_step: bad stream efficiencies");

  DecodeStep ds;
  switch (sc) {
    case Scheme::dense:
      ds.weight_bytes = w_all;
      ds.kv_bytes = kv;
      ds.seconds = (w_all / u_d + kv / u_d) / bw;
      break;
    case Scheme::token_skip:
      // A skipped layer still generates KV for the new token.
      ds.weight_bytes = keep * w_all + skip * w_kvgen;
      ds.kv_bytes = keep * keep * kv;  // thinner reads at executed layers
      ds.seconds = (keep * (w_all / u_d + keep * kv / u_tw) +
                    skip * (w_kvgen / u_d)) /
                   bw;
      break;
    case Scheme::layer_fallback:
      ds.weight_bytes = keep * w_all;
      ds.kv_bytes = keep * kv;  // all past tokens, via fallback entries
      ds.seconds = keep * (w_all / u_d + kv / u_is) / bw;
      break;
    case Scheme::layer_fallback_buffered:
      ds.weight_bytes = keep * w_all;
      ds.kv_bytes = keep * kv;
      ds.seconds = keep * (w_all / u_d + kv / u_bf) / bw;
      break;
  }
  return ds;
}

double decode_speedup(Scheme sc, const ShapeParams& sp, const PerfParams& pp,
                      int past_tokens, double skip, const DecodeUtils& du,
                      bool zero_contention) {
  const double base =
      decode_step(Scheme::dense, sp, pp, past_tokens, skip, du, zero_contention)
          .seconds;
  const double mine =
      decode_step(sc, sp, pp, past_tokens, skip, du, zero_contention).seconds;
  return base / mine;
}

const char* to_string(Scheme sc) {
  switch (sc) {
    case Scheme::dense: return "dense";
    case Scheme::token_skip: return "token_skip";
    case Scheme::layer_fallback: return "layer_fallback";
    case Scheme::layer_fallback_buffered: return "layer_fallback_buffered";
  }
  return "";
}

}  // namespace opusim::speedup
