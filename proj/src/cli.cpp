#include "opusim/cli.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "opusim/config.hpp"
#include "opusim/kvsim.hpp"
#include "opusim/reference.hpp"
#include "opusim/runner.hpp"
#include "opusim/speedup.hpp"
#include "opusim/sweep.hpp"

namespace opusim {
namespace {

using dataflow::EvalContext;
using dataflow::EvalMode;
using dataflow::Mat;
using numerics::PeMode;
using numerics::SweepDist;
using numerics::SweepKernel;

struct Sink {
  std::string out_path;
  std::string text;
  void line(const std::string& s) {
    text += s;
    text += '\n';
  }
  void finish() const {
    std::fwrite(text.data(), 1, text.size(), stdout);
    std::fflush(stdout);
    if (!out_path.empty()) write_text_file(out_path, text);
  }
};

void dump_config_if_asked(const CLI::App& app, const std::string& path) {
  if (!path.empty()) write_text_file(path, app.config_to_str(true, true));
}

EvalMode parse_mode(const std::string& s) {
  if (s == "wide") return EvalMode::wide;
  if (s == "device") return EvalMode::device;
  throw std::invalid_argument("mode must be wide or device: " + s);
}

// ---- pe-validate ---------------------------------------------------------

struct PeValidateOpts {
  int trials = 20000;
  int depth = 64;
  uint64_t seed = 1;
  bool serial = false;
  int identity_dots = 200;
  bool inject_fault = false;
  std::string out;
};

int run_pe_validate(const PeValidateOpts& o) {
  Sink sink;
  sink.out_path = o.out;
  sink.line(
      "kernel,mode,dist,depth,trials,seed,mean_rel_err_pct,used_trials,"
      "skipped_zero_ref,multiplies,subnormal_flushes,saturations");
  for (SweepKernel k : {SweepKernel::impl1, SweepKernel::impl2,
                        SweepKernel::impl3, SweepKernel::naive})
    for (PeMode m : {PeMode::fp16, PeMode::int4})
      for (SweepDist d : {SweepDist::normal, SweepDist::mixture}) {
        numerics::SweepSpec spec;
        spec.kernel = k;
        spec.mode = m;
        spec.dist = d;
        spec.depth = o.depth;
        spec.trials = o.trials;
        spec.seed = o.seed;
        spec.parallel = !o.serial;
        const numerics::SweepResult r = numerics::run_error_sweep(spec);
        std::string row;
        row += numerics::to_string(k);
        row += ',';
        row += numerics::to_string(m);
        row += ',';
        row += numerics::to_string(d);
        row += ',';
        row += std::to_string(o.depth);
        row += ',';
        row += std::to_string(o.trials);
        row += ',';
        row += std::to_string(o.seed);
        row += ',';
        row += format_double(r.mean_rel_err_pct, 8);
        row += ',';
        row += std::to_string(r.used_trials);
        row += ',';
        row += std::to_string(r.skipped_zero_ref);
        row += ',';
        row += std::to_string(r.stats.multiplies);
        row += ',';
        row += std::to_string(r.stats.subnormal_flushes);
        row += ',';
        row += std::to_string(r.stats.saturations);
        sink.line(row);
      }

  // The truncated kernel and its fold-in variant must agree bit for bit;
  // --inject-fault flips one result to prove the tripwire is live.
  uint64_t mismatches = 0;
  for (int i = 0; i < o.identity_dots; ++i) {
    Rng rng(Rng::mix(o.seed, 0x1de41u + uint64_t(i)));
    std::vector<numerics::Fp16Bits> x, w;
    for (int j = 0; j < o.depth; ++j) {
      x.push_back(numerics::Fp16Bits::encode(rng.normal()));
      w.push_back(numerics::Fp16Bits::encode(rng.normal()));
    }
    numerics::PeColumnConfig c2, c3;
    c2.impl = numerics::PeImpl::impl2;
    c3.impl = numerics::PeImpl::impl3;
    uint16_t b2 = numerics::pe_dot(x.data(), w.data(), x.size(), c2, nullptr).bits();
    uint16_t b3 = numerics::pe_dot(x.data(), w.data(), x.size(), c3, nullptr).bits();
    if (o.inject_fault && i == 0) b3 ^= 1u;
    if (b2 != b3) ++mismatches;
  }
  sink.finish();
  if (mismatches != 0) {
    std::fprintf(stderr, "truncated/fold-in identity mismatches: %llu%s\n",
                 (unsigned long long)mismatches,
                 o.inject_fault ? " (fault injected and detected)" : "");
    return 1;
  }
  if (o.inject_fault) {
    std::fprintf(stderr, "injected fault NOT detected\n");
    return 1;
  }
  return 0;
}

// ---- dataflow-check ------------------------------------------------------

struct DataflowOpts {
  int seeds = 20;
  std::vector<int> tiles = {8, 16, 32};
  int rows = 48;
  int router_dim = 96;
  int heads = 4;
  int head_dim = 16;
  int kv_rows = 56;
  std::string mode = "wide";
  uint64_t seed = 1;
  bool inject_fault = false;
  std::string out;
};

struct CheckAgg {
  uint64_t cases = 0;
  double worst = 0.0;
  void add(double v) {
    ++cases;
    worst = std::max(worst, v);
  }
};

std::string make_row(const std::string& name, const CheckAgg& agg, double tol,
                     bool integer, bool& ok_all) {
  const bool ok = agg.worst <= tol;
  ok_all = ok_all && ok;
  std::string row = name;
  row += ',';
  row += std::to_string(agg.cases);
  row += ',';
  row += integer ? std::to_string((long long)agg.worst) : format_sci(agg.worst, 6);
  row += ',';
  row += integer ? std::to_string((long long)tol) : format_sci(tol, 0);
  row += ',';
  row += ok ? "pass" : "fail";
  return row;
}

int run_dataflow_check(const DataflowOpts& o) {
  const EvalMode mode = parse_mode(o.mode);
  const int dim = o.heads * o.head_dim;
  Sink sink;
  sink.out_path = o.out;
  sink.line("check,cases,value,tol,status");

  CheckAgg router_drift, router_dec, attn_drift, perm_drift, spill, rope_drift,
      ffn_drift, det_drift, dev_drift;
  bool first_case = true;

  for (int sidx = 0; sidx < o.seeds; ++sidx)
    for (int tile : o.tiles) {
      const uint64_t sd = Rng::mix(o.seed, uint64_t(sidx) * 131u + uint64_t(tile));
      Rng rng(sd);

      // Router + normalization, fused against the two-pass reference.
      Mat x0 = dataflow::randn(o.rows, o.router_dim, rng);
      Mat wr = dataflow::randn(o.router_dim, 2, rng, 0.3);
      dataflow::NormParams np;
      np.gain.resize(std::size_t(o.router_dim));
      for (int c = 0; c < o.router_dim; ++c)
        np.gain[std::size_t(c)] = 1.0 + 0.05 * rng.normal();
      dataflow::RouterConfig rc;
      rc.sampled = (sidx % 2) == 1;
      rc.seed = sd;
      rc.bias_execute = 0.1;

      dataflow::Probes pr;
      EvalContext ec;
      ec.mode = mode;
      ec.probes = &pr;

      Mat xf = x0;
      const dataflow::RouterResult fr =
          dataflow::fused_router_norm(xf, wr, np, rc, tile, ec);
      if (o.inject_fault && first_case) xf.at(0, 0) += 1e-6;
      if (mode == EvalMode::wide) {
        Mat xr = x0;
        const dataflow::RouterResult rr =
            ref::router_norm_unfused(xr, wr, np, rc);
        router_drift.add(dataflow::max_abs_diff(xf, xr));
        router_drift.add(dataflow::max_abs_diff(fr.logits, rr.logits));
        uint64_t mism = 0;
        for (std::size_t i = 0; i < fr.execute.size(); ++i)
          if (fr.execute[i] != rr.execute[i]) ++mism;
        router_dec.add(double(mism));
      }

      // Attention against the full-score-matrix reference.
      Mat q = dataflow::randn(o.rows, dim, rng);
      Mat k = dataflow::randn(o.kv_rows, dim, rng);
      Mat v = dataflow::randn(o.kv_rows, dim, rng);
      dataflow::AttnConfig ac;
      ac.heads = o.heads;
      ac.kv_tile = tile;
      ac.q_pos.resize(std::size_t(o.rows));
      for (int i = 0; i < o.rows; ++i)
        ac.q_pos[std::size_t(i)] = o.kv_rows - o.rows + i;
      ac.kv_pos.resize(std::size_t(o.kv_rows));
      for (int i = 0; i < o.kv_rows; ++i) ac.kv_pos[std::size_t(i)] = i;

      const Mat of = dataflow::fused_attention(q, k, v, ac, ec);
      if (mode == EvalMode::wide) {
        const Mat orf = ref::attention(q, k, v, ac);
        attn_drift.add(dataflow::max_abs_diff(of, orf));

        // KV storage-order invariance, positions carried alongside.
        std::vector<int> pi(std::size_t(o.kv_rows));
        for (int i = 0; i < o.kv_rows; ++i) pi[std::size_t(i)] = i;
        for (int i = o.kv_rows - 1; i > 0; --i)
          std::swap(pi[std::size_t(i)], pi[std::size_t(rng.below(uint64_t(i) + 1))]);
        Mat kp(o.kv_rows, dim), vp(o.kv_rows, dim);
        dataflow::AttnConfig ap = ac;
        for (int i = 0; i < o.kv_rows; ++i) {
          const int src = pi[std::size_t(i)];
          for (int c = 0; c < dim; ++c) {
            kp.at(i, c) = k.at(src, c);
            vp.at(i, c) = v.at(src, c);
          }
          ap.kv_pos[std::size_t(i)] = src;
        }
        const Mat op = dataflow::fused_attention(q, kp, vp, ap, ec);
        perm_drift.add(dataflow::max_abs_diff(of, op));
      } else {
        // Device runs must replay bit for bit.
        Mat xf2 = x0;
        EvalContext ec2;
        ec2.mode = mode;
        dataflow::fused_router_norm(xf2, wr, np, rc, tile, ec2);
        const Mat of2 = dataflow::fused_attention(q, k, v, ac, ec2);
        det_drift.add(dataflow::max_abs_diff(xf, xf2));
        det_drift.add(dataflow::max_abs_diff(of, of2));
        EvalContext ew;
        ew.mode = EvalMode::wide;
        Mat xw = x0;
        dataflow::fused_router_norm(xw, wr, np, rc, tile, ew);
        const Mat ow = dataflow::fused_attention(q, k, v, ac, ew);
        dev_drift.add(dataflow::max_abs_diff(of, ow));
      }
      spill.add(double(pr.s_tile_violations));

      // Pointwise stages.
      if (mode == EvalMode::wide) {
        Mat rx = dataflow::randn(o.rows, dim, rng);
        Mat ry = rx;
        std::vector<int> pos(std::size_t(o.rows));
        for (int i = 0; i < o.rows; ++i)
          pos[std::size_t(i)] = int(rng.below(4096));
        dataflow::rope_apply(rx, o.heads, pos, 10000.0, ec);
        ref::rope_complex(ry, o.heads, pos, 10000.0);
        rope_drift.add(dataflow::max_abs_diff(rx, ry));

        Mat g = dataflow::randn(o.rows, dim, rng);
        Mat u = dataflow::randn(o.rows, dim, rng);
        const Mat want = ref::swiglu(g, u);
        dataflow::swiglu_inplace(g, u, ec);
        ffn_drift.add(dataflow::max_abs_diff(g, want));
      }
      first_case = false;
    }

  bool ok = true;
  if (mode == EvalMode::wide) {
    sink.line(make_row("router_norm_fused_vs_unfused", router_drift, 1e-9,
                       false, ok));
    sink.line(make_row("router_decisions", router_dec, 0.0, true, ok));
    sink.line(make_row("attention_fused_vs_reference", attn_drift, 1e-9,
                       false, ok));
    sink.line(make_row("attention_kv_permutation", perm_drift, 1e-12, false,
                       ok));
    sink.line(make_row("rope_vs_complex_rotation", rope_drift, 1e-9, false,
                       ok));
    sink.line(make_row("gated_ffn_pointwise", ffn_drift, 1e-12, false, ok));
  } else {
    sink.line(make_row("device_rerun_determinism", det_drift, 0.0, false, ok));
    sink.line(make_row("device_vs_wide_drift", dev_drift, 0.05, false, ok));
  }
  sink.line(make_row("score_spill_discipline", spill, 0.0, true, ok));
  sink.finish();
  if (!ok) {
    std::fprintf(stderr, "dataflow-check failed%s\n",
                 o.inject_fault ? " (fault injected and detected)" : "");
    return 1;
  }
  if (o.inject_fault) {
    std::fprintf(stderr, "injected fault NOT detected\n");
    return 1;
  }
  return 0;
}

// ---- kv-bandwidth --------------------------------------------------------

struct KvOpts {
  std::string synthetic;  // dense | token_wise | interleaved_skip
  std::string trace_file;
  int context = 512, steps = 512, layers = 16;
  double skip = 0.25;
  uint64_t seed = 1;
  std::string policy = "interleave";
  int block_tokens = 64;
  bool buffer = false;
  int capacity = 1024, read_ports = 16, write_ports = 16;
  int ports = 16, channels = 8, width = 512, page_beats = 128;
  double freq = 450.0;
  double penalty = 16.3;
  double calibrate = -1.0;  // >= 0: bisect penalty to this utilization
  int dim = 4096, dtype_bits = 16;
  bool no_writes = false;
  bool verify = false;
  bool inject_fault = false;
  std::string out;
};

kvsim::TraceStyle parse_style(const std::string& s) {
  if (s == "dense") return kvsim::TraceStyle::dense;
  if (s == "token_wise") return kvsim::TraceStyle::token_wise;
  if (s == "interleaved_skip") return kvsim::TraceStyle::interleaved_skip;
  throw std::invalid_argument("unknown trace style: " + s);
}

int run_kv_bandwidth(const KvOpts& o) {
  if (o.synthetic.empty() == o.trace_file.empty())
    throw std::invalid_argument(
        "exactly one of --synthetic and --trace is required");

  kvsim::AccessTrace trace;
  std::string scenario;
  if (!o.synthetic.empty()) {
    kvsim::SyntheticSpec spec;
    spec.style = parse_style(o.synthetic);
    spec.context = o.context;
    spec.steps = o.steps;
    spec.layers = o.layers;
    spec.skip = o.skip;
    spec.seed = o.seed;
    trace = kvsim::make_synthetic(spec).trace;
    scenario = o.synthetic;
  } else {
    std::ifstream in(o.trace_file);
    if (!in) throw std::invalid_argument("cannot open trace: " + o.trace_file);
    trace = kvsim::parse_trace(in);
    scenario = "file";
  }

  kvsim::KvSimConfig cfg;
  cfg.hbm.ports = o.ports;
  cfg.hbm.channels = o.channels;
  cfg.hbm.port_width_bits = o.width;
  cfg.hbm.page_beats = o.page_beats;
  cfg.hbm.freq_mhz = o.freq;
  cfg.hbm.page_miss_penalty_cycles = o.penalty;
  cfg.geom.dim = o.dim;
  cfg.geom.dtype_bits = o.dtype_bits;
  cfg.policy = o.policy == "block" ? kvsim::MapPolicy::block
                                   : kvsim::MapPolicy::interleave;
  if (o.policy != "block" && o.policy != "interleave")
    throw std::invalid_argument("policy must be interleave or block");
  cfg.block_tokens = o.block_tokens;
  cfg.buffer.enabled = o.buffer;
  cfg.buffer.capacity_tokens = o.capacity;
  cfg.buffer.read_ports = o.read_ports;
  cfg.buffer.write_ports = o.write_ports;
  cfg.charge_decode_writes = !o.no_writes;

  if (o.inject_fault) {
    // Tamper with a legally scheduled unit and prove the check trips.
    for (const kvsim::TraceUnit& u : trace.units) {
      if (!u.attend || u.needed.empty()) continue;
      int hits = 0;
      std::vector<kvsim::FetchOp> fetches;
      for (const kvsim::TraceEntry& e : u.needed) {
        kvsim::FetchOp f;
        f.token = e.token;
        f.port = cfg.port_of(e.token);
        f.prov = e.prov;
        f.cross = e.prov < u.layer;
        fetches.push_back(f);
      }
      std::vector<kvsim::Round> rounds =
          kvsim::schedule_rounds(fetches, hits, cfg);
      if (rounds.empty()) continue;
      rounds.front().fetch_ids.push_back(rounds.front().fetch_ids.empty()
                                             ? 0
                                             : rounds.front().fetch_ids[0]);
      const std::string err = kvsim::check_rounds(fetches, hits, rounds, cfg);
      if (!err.empty()) {
        std::fprintf(stderr, "injected fault detected: %s\n", err.c_str());
        return 1;
      }
      std::fprintf(stderr, "injected fault NOT detected\n");
      return 1;
    }
    std::fprintf(stderr, "no attended unit to tamper with\n");
    return 1;
  }

  bool calibrated = false;
  if (o.calibrate >= 0.0) {
    cfg.hbm.page_miss_penalty_cycles =
        kvsim::calibrate_page_penalty(trace, cfg, o.calibrate);
    calibrated = true;
  }

  if (o.verify) {
    const std::string err = kvsim::verify_rounds_over_trace(trace, cfg);
    if (!err.empty()) {
      std::fprintf(stderr, "round schedule violation: %s\n", err.c_str());
      return 1;
    }
  }

  const kvsim::BandwidthReport rep = kvsim::run_kvsim(trace, cfg);
  Sink sink;
  sink.out_path = o.out;
  sink.line(
      "scenario,policy,buffer,calibrated,page_penalty,cycles,hbm_read_bytes,"
      "hbm_write_bytes,buffer_bytes,needed_entries,buffer_hits,evictions,"
      "rounds,units_attended,hbm_util_pct,aggregate_util_pct,achieved_gbps,"
      "peak_gbps");
  std::string row = scenario;
  row += ',';
  row += o.policy;
  row += ',';
  row += o.buffer ? "1" : "0";
  row += ',';
  row += calibrated ? "1" : "0";
  row += ',';
  row += format_double(cfg.hbm.page_miss_penalty_cycles, 4);
  row += ',';
  row += format_double(rep.cycles, 1);
  row += ',';
  row += std::to_string(rep.hbm_read_bytes);
  row += ',';
  row += std::to_string(rep.hbm_write_bytes);
  row += ',';
  row += std::to_string(rep.buffer_bytes);
  row += ',';
  row += std::to_string(rep.needed_entries);
  row += ',';
  row += std::to_string(rep.buffer_hits);
  row += ',';
  row += std::to_string(rep.evictions);
  row += ',';
  row += std::to_string(rep.rounds);
  row += ',';
  row += std::to_string(rep.units_attended);
  row += ',';
  row += format_double(rep.hbm_util_pct, 4);
  row += ',';
  row += format_double(rep.aggregate_util_pct, 4);
  row += ',';
  row += format_double(rep.achieved_gbps, 2);
  row += ',';
  row += format_double(rep.peak_gbps, 2);
  sink.line(row);
  sink.finish();
  return 0;
}

// ---- speedup -------------------------------------------------------------

struct SpeedupOpts {
  std::vector<int> tokens = {128, 512, 1024};
  double skip = 0.25;
  int cal_tokens = 512;
  double cal_ratio = 1.40;
  std::vector<double> utils;  // dense,token_wise,interleaved,buffered
  double dense_target = 88.7;
  int trace_context = 512, trace_steps = 512, trace_layers = 16;
  uint64_t seed = 1;
  bool zero_contention = false;
  int dim = 4096, heads = 32, layers = 32, weight_bits = 4, kv_bits = 16;
  int mac_rows = 64, mac_cols = 128;
  double fabric = 225.0, peak = 460.8;
  std::string out;
};

int run_speedup(const SpeedupOpts& o) {
  speedup::ShapeParams sp;
  sp.dim = o.dim;
  sp.heads = o.heads;
  sp.layers = o.layers;
  sp.weight_bits = o.weight_bits;
  sp.kv_bits = o.kv_bits;
  speedup::PerfParams pp;
  pp.mac_rows = o.mac_rows;
  pp.mac_cols = o.mac_cols;
  pp.fabric_mhz = o.fabric;
  pp.hbm_peak_gbps = o.peak;

  const double cnl =
      speedup::calibrate_bubble_coeff(sp, pp, o.cal_tokens, o.skip, o.cal_ratio);

  speedup::DecodeUtils du;
  if (!o.utils.empty()) {
    if (o.utils.size() != 4)
      throw std::invalid_argument(
          "--utils needs dense,token_wise,interleaved,buffered");
    du.dense = o.utils[0];
    du.token_wise = o.utils[1];
    du.interleaved = o.utils[2];
    du.buffered = o.utils[3];
  } else {
    kvsim::HbmConfig hbm;
    kvsim::KvGeometry geom;
    geom.dim = o.dim;
    geom.dtype_bits = o.kv_bits;
    du = speedup::measure_decode_utils(hbm, geom, o.dense_target,
                                       o.trace_context, o.trace_steps,
                                       o.trace_layers, o.skip, o.seed);
  }

  Sink sink;
  sink.out_path = o.out;
  sink.line("# bubble_coeff," + format_double(cnl, 8));
  sink.line("# page_penalty," + format_double(du.page_penalty, 4));
  sink.line("# stream_eff,dense," + format_double(du.dense, 4) +
            ",token_wise," + format_double(du.token_wise, 4) + ",interleaved," +
            format_double(du.interleaved, 4) + ",buffered," +
            format_double(du.buffered, 4));
  sink.line("phase,scheme,tokens,skip,speedup");
  const speedup::Scheme schemes[] = {speedup::Scheme::token_skip,
                                     speedup::Scheme::layer_fallback,
                                     speedup::Scheme::layer_fallback_buffered};
  for (int t : o.tokens)
    for (speedup::Scheme sc : schemes)
      sink.line("prefill," + std::string(speedup::to_string(sc)) + ',' +
                std::to_string(t) + ',' + format_double(o.skip, 4) + ',' +
                format_double(speedup::prefill_speedup(sc, sp, pp, t, o.skip,
                                                       cnl),
                              6));
  for (int t : o.tokens)
    for (speedup::Scheme sc : schemes)
      sink.line("decode," + std::string(speedup::to_string(sc)) + ',' +
                std::to_string(t) + ',' + format_double(o.skip, 4) + ',' +
                format_double(speedup::decode_speedup(sc, sp, pp, t, o.skip,
                                                      du, o.zero_contention),
                              6));
  sink.finish();
  return 0;
}

// ---- e2e -----------------------------------------------------------------

struct E2eOpts {
  int layers = 8, dim = 64, heads = 4, ffn = 128, context = 48, steps = 24;
  double skip = 0.25;
  uint64_t seed = 1;
  std::string mode = "wide";
  bool compare_modes = false;
  bool deterministic_routing = false;
  double bias = std::nan("");  // NaN: calibrate
  double cal_tol = 0.02;
  int capacity = 256;
  std::string emit_trace;
  std::string out;
};

int run_e2e(const E2eOpts& o) {
  runner::ModelConfig mc;
  mc.layers = o.layers;
  mc.dim = o.dim;
  mc.heads = o.heads;
  mc.ffn_dim = o.ffn;
  mc.context = o.context;
  mc.decode_steps = o.steps;
  mc.skip_target = o.skip;
  mc.sampled_routing = !o.deterministic_routing;
  mc.seed = o.seed;
  mc.mode = parse_mode(o.mode);

  const runner::ModelWeights mw = runner::make_weights(mc);
  const double bias = std::isnan(o.bias)
                          ? runner::calibrate_router(mc, mw, o.cal_tol)
                          : o.bias;
  mc.router_bias_execute = bias;
  const runner::RunResult r = runner::run_model(mc, mw);

  Sink sink;
  sink.out_path = o.out;
  sink.line("key,value");
  auto kvline = [&](const std::string& k, const std::string& v) {
    sink.line(k + ',' + v);
  };
  kvline("layers", std::to_string(o.layers));
  kvline("dim", std::to_string(o.dim));
  kvline("heads", std::to_string(o.heads));
  kvline("ffn_dim", std::to_string(o.ffn));
  kvline("context", std::to_string(o.context));
  kvline("decode_steps", std::to_string(o.steps));
  kvline("mode", o.mode);
  kvline("seed", std::to_string(o.seed));
  kvline("sampled_routing", mc.sampled_routing ? "1" : "0");
  kvline("router_bias_execute", format_double(bias, 6));
  kvline("skip_fraction", format_double(r.skip_fraction, 6));
  kvline("storage_reduction", format_double(r.storage_reduction, 6));
  {
    char h[17];
    std::snprintf(h, sizeof(h), "%016llx",
                  (unsigned long long)r.output_hash);
    kvline("output_hash", h);
  }
  kvline("trace_units", std::to_string(r.trace.units.size()));
  kvline("pe_multiplies", std::to_string(r.pe_stats.multiplies));
  kvline("pe_subnormal_flushes", std::to_string(r.pe_stats.subnormal_flushes));
  kvline("pe_saturations", std::to_string(r.pe_stats.saturations));

  kvsim::KvSimConfig kc;
  kc.geom.dim = o.dim;
  const kvsim::BandwidthReport nb = kvsim::run_kvsim(r.trace, kc);
  kc.buffer.enabled = true;
  kc.buffer.capacity_tokens = o.capacity;
  const kvsim::BandwidthReport wb = kvsim::run_kvsim(r.trace, kc);
  kvline("kv_needed_entries", std::to_string(nb.needed_entries));
  kvline("kv_util_pct", format_double(nb.hbm_util_pct, 4));
  kvline("kv_cycles", format_double(nb.cycles, 1));
  kvline("kv_buffered_util_pct", format_double(wb.hbm_util_pct, 4));
  kvline("kv_buffered_aggregate_pct", format_double(wb.aggregate_util_pct, 4));
  kvline("kv_buffered_cycles", format_double(wb.cycles, 1));
  kvline("kv_buffer_hits", std::to_string(wb.buffer_hits));
  kvline("kv_cycles_monotone", wb.cycles <= nb.cycles ? "1" : "0");

  if (o.compare_modes) {
    runner::ModelConfig mo = mc;
    mo.mode = mc.mode == EvalMode::wide ? EvalMode::device : EvalMode::wide;
    const runner::RunResult ro = runner::run_model(mo, mw);
    kvline("other_mode", mo.mode == EvalMode::wide ? "wide" : "device");
    {
      char h[17];
      std::snprintf(h, sizeof(h), "%016llx",
                    (unsigned long long)ro.output_hash);
      kvline("other_output_hash", h);
    }
    kvline("mode_drift", format_sci(dataflow::max_abs_diff(r.hidden, ro.hidden), 6));
    uint64_t route_mism = 0;
    for (std::size_t i = 0; i < r.mask.exec.size(); ++i)
      if (r.mask.exec[i] != ro.mask.exec[i]) ++route_mism;
    kvline("mode_route_mismatches", std::to_string(route_mism));
  }

  if (!o.emit_trace.empty()) {
    std::ostringstream ts;
    kvsim::serialize_trace(r.trace, ts);
    write_text_file(o.emit_trace, ts.str());
  }
  sink.finish();
  return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"overlay accelerator model: kernels, traffic, throughput"};
  app.require_subcommand(1);
  app.set_config("--config", "", "settings file; sections name the subcommands");
  std::string dump_path;
  app.add_option("--dump-config", dump_path,
                 "write the resolved settings of every subcommand here");
  int rc = 0;

  PeValidateOpts po;
  CLI::App* pe = app.add_subcommand(
      "pe-validate", "error sweeps of the dot kernels over a config grid");
  pe->add_option("--trials", po.trials, "trials per grid cell")
      ->capture_default_str();
  pe->add_option("--depth", po.depth, "dot length")->capture_default_str();
  pe->add_option("--seed", po.seed, "base seed")->capture_default_str();
  pe->add_flag("--serial", po.serial, "disable the parallel sweep path");
  pe->add_option("--identity-dots", po.identity_dots,
                 "bit-identity spot checks")
      ->capture_default_str();
  pe->add_flag("--inject-fault", po.inject_fault,
               "flip one result bit; run must fail");
  pe->add_option("--out", po.out, "also write the table here");
  pe->callback([&] { rc = run_pe_validate(po); });

  DataflowOpts dfo;
  CLI::App* df = app.add_subcommand(
      "dataflow-check", "fused kernels against unfused references");
  df->add_option("--seeds", dfo.seeds, "random cases")->capture_default_str();
  df->add_option("--tiles", dfo.tiles, "tile sizes to cycle")
      ->delimiter(',')
      ->capture_default_str();
  df->add_option("--rows", dfo.rows, "query/input rows")->capture_default_str();
  df->add_option("--router-dim", dfo.router_dim, "router input width")
      ->capture_default_str();
  df->add_option("--heads", dfo.heads, "attention heads")->capture_default_str();
  df->add_option("--head-dim", dfo.head_dim, "per-head width")
      ->capture_default_str();
  df->add_option("--kv-rows", dfo.kv_rows, "cached rows")->capture_default_str();
  df->add_option("--mode", dfo.mode, "wide or device")->capture_default_str();
  df->add_option("--seed", dfo.seed, "base seed")->capture_default_str();
  df->add_flag("--inject-fault", dfo.inject_fault,
               "perturb one fused output; run must fail");
  df->add_option("--out", dfo.out, "also write the table here");
  df->callback([&] { rc = run_dataflow_check(dfo); });

  KvOpts ko;
  CLI::App* kb = app.add_subcommand("kv-bandwidth",
                                    "KV traffic simulation over HBM ports");
  kb->add_option("--synthetic", ko.synthetic,
                 "dense | token_wise | interleaved_skip");
  kb->add_option("--trace", ko.trace_file, "trace file to replay");
  kb->add_option("--context", ko.context, "prompt tokens")->capture_default_str();
  kb->add_option("--steps", ko.steps, "decode steps")->capture_default_str();
  kb->add_option("--layers", ko.layers, "model layers")->capture_default_str();
  kb->add_option("--skip", ko.skip, "per-pair skip probability")
      ->capture_default_str();
  kb->add_option("--seed", ko.seed, "mask seed")->capture_default_str();
  kb->add_option("--policy", ko.policy, "interleave or block")
      ->capture_default_str();
  kb->add_option("--block-tokens", ko.block_tokens, "tokens per block")
      ->capture_default_str();
  kb->add_flag("--buffer", ko.buffer, "enable the reuse buffer");
  kb->add_option("--capacity", ko.capacity, "buffer capacity in tokens")
      ->capture_default_str();
  kb->add_option("--read-ports", ko.read_ports, "buffer read ports")
      ->capture_default_str();
  kb->add_option("--write-ports", ko.write_ports, "buffer write ports")
      ->capture_default_str();
  kb->add_option("--ports", ko.ports, "HBM ports")->capture_default_str();
  kb->add_option("--channels", ko.channels, "HBM channels")
      ->capture_default_str();
  kb->add_option("--width", ko.width, "port width in bits")
      ->capture_default_str();
  kb->add_option("--page-beats", ko.page_beats, "page size in beats")
      ->capture_default_str();
  kb->add_option("--freq", ko.freq, "HBM MHz")->capture_default_str();
  kb->add_option("--penalty", ko.penalty, "page-miss penalty in cycles")
      ->capture_default_str();
  kb->add_option("--calibrate", ko.calibrate,
                 "bisect the penalty to this utilization (percent)");
  kb->add_option("--dim", ko.dim, "model width")->capture_default_str();
  kb->add_option("--dtype-bits", ko.dtype_bits, "stored element bits")
      ->capture_default_str();
  kb->add_flag("--no-writes", ko.no_writes, "skip decode-write charges");
  kb->add_flag("--verify", ko.verify, "replay rounds through the checker");
  kb->add_flag("--inject-fault", ko.inject_fault,
               "tamper with a round; run must fail");
  kb->add_option("--out", ko.out, "also write the table here");
  kb->callback([&] { rc = run_kv_bandwidth(ko); });

  SpeedupOpts so;
  CLI::App* su = app.add_subcommand("speedup",
                                    "analytic prefill/decode throughput model");
  su->add_option("--tokens", so.tokens, "sequence lengths")
      ->delimiter(',')
      ->capture_default_str();
  su->add_option("--skip", so.skip, "skip fraction")->capture_default_str();
  su->add_option("--cal-tokens", so.cal_tokens, "bubble calibration length")
      ->capture_default_str();
  su->add_option("--cal-ratio", so.cal_ratio, "dense-to-overlapped ratio")
      ->capture_default_str();
  su->add_option("--utils", so.utils,
                 "override stream efficiencies: dense,token_wise,interleaved,"
                 "buffered")
      ->delimiter(',');
  su->add_option("--dense-target", so.dense_target,
                 "calibration target percent")
      ->capture_default_str();
  su->add_option("--trace-context", so.trace_context, "measured trace prompt")
      ->capture_default_str();
  su->add_option("--trace-steps", so.trace_steps, "measured trace steps")
      ->capture_default_str();
  su->add_option("--trace-layers", so.trace_layers, "measured trace layers")
      ->capture_default_str();
  su->add_option("--seed", so.seed, "trace seed")->capture_default_str();
  su->add_flag("--zero-contention", so.zero_contention,
               "price every stream at the dense efficiency");
  su->add_option("--dim", so.dim, "model width")->capture_default_str();
  su->add_option("--heads", so.heads, "attention heads")->capture_default_str();
  su->add_option("--layers", so.layers, "model layers")->capture_default_str();
  su->add_option("--weight-bits", so.weight_bits, "stored weight bits")
      ->capture_default_str();
  su->add_option("--kv-bits", so.kv_bits, "stored KV bits")
      ->capture_default_str();
  su->add_option("--mac-rows", so.mac_rows, "MAC array rows")
      ->capture_default_str();
  su->add_option("--mac-cols", so.mac_cols, "MAC array columns")
      ->capture_default_str();
  su->add_option("--fabric-mhz", so.fabric, "fabric clock")
      ->capture_default_str();
  su->add_option("--peak-gbps", so.peak, "HBM peak bandwidth")
      ->capture_default_str();
  su->add_option("--out", so.out, "also write the table here");
  su->callback([&] { rc = run_speedup(so); });

  E2eOpts eo;
  CLI::App* ee = app.add_subcommand(
      "e2e", "toy model run: calibrate, execute, trace, simulate");
  ee->add_option("--layers", eo.layers, "decoder layers")->capture_default_str();
  ee->add_option("--dim", eo.dim, "model width")->capture_default_str();
  ee->add_option("--heads", eo.heads, "attention heads")->capture_default_str();
  ee->add_option("--ffn", eo.ffn, "FFN width")->capture_default_str();
  ee->add_option("--context", eo.context, "prompt tokens")
      ->capture_default_str();
  ee->add_option("--steps", eo.steps, "decode steps")->capture_default_str();
  ee->add_option("--skip", eo.skip, "target skip share")->capture_default_str();
  ee->add_option("--seed", eo.seed, "model seed")->capture_default_str();
  ee->add_option("--mode", eo.mode, "wide or device")->capture_default_str();
  ee->add_flag("--compare-modes", eo.compare_modes,
               "also run the other mode and report drift");
  ee->add_flag("--deterministic-routing", eo.deterministic_routing,
               "argmax routing instead of sampled");
  ee->add_option("--bias", eo.bias,
                 "router execute bias (default: calibrate)");
  ee->add_option("--cal-tol", eo.cal_tol, "calibration tolerance")
      ->capture_default_str();
  ee->add_option("--capacity", eo.capacity, "reuse buffer tokens")
      ->capture_default_str();
  ee->add_option("--emit-trace", eo.emit_trace, "write the KV trace here");
  ee->add_option("--out", eo.out, "also write the report here");
  ee->callback([&] { rc = run_e2e(eo); });

  try {
    app.parse(argc, argv);
    dump_config_if_asked(app, dump_path);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const kvsim::TraceParseError& e) {
    std::fprintf(stderr, "trace parse error (line %d): %s\n", e.line, e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::domain_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "failure: %s\n", e.what());
    return 1;
  }
  return rc;
}

}  // namespace opusim
