// Acceptance gate: one line per criterion, tolerances pinned in the text.
// Exit code is the number of failed criteria.

#include <cmath>
#include <cstdio>
#include <cstdarg>
#include <cstring>
#include <sstream>
#include <string>
#include <vector>

#include "opusim/bfp.hpp"
#include "opusim/dataflow.hpp"
#include "opusim/kvsim.hpp"
#include "opusim/pack.hpp"
#include "opusim/reference.hpp"
#include "opusim/rng.hpp"
#include "opusim/runner.hpp"
#include "opusim/speedup.hpp"
#include "opusim/sweep.hpp"

using namespace opusim;
using numerics::Fp16Bits;
using numerics::PackScheme;
using dataflow::Mat;

namespace {

int failures = 0;

void verdict(int idx, const char* name, bool ok, const std::string& detail) {
  std::printf("criterion %d  %-4s %s: %s\n", idx, ok ? "PASS" : "FAIL", name,
              detail.c_str());
  if (!ok) ++failures;
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

// ---- 1: dual-product recovery --------------------------------------------

void criterion1() {
  uint64_t cases = 0, mismatches = 0;
  for (PackScheme sc : {PackScheme::standard, PackScheme::overpacked,
                        PackScheme::overpacked_truncated})
    for (uint32_t u0 = 0; u0 < 64; ++u0)
      for (uint32_t u1 = 0; u1 < 64; ++u1) {
        numerics::PackedPair pp = numerics::pack_pair(u0, u1, sc, 6);
        for (uint32_t v = 0; v < 64; ++v) {
          numerics::PackedPair fresh = pp;
          const numerics::DualProduct dp =
              numerics::recover_dual_products(fresh, v);
          ++cases;
          if (dp.p0 != u0 * v || dp.p1 != u1 * v) ++mismatches;
        }
      }
  const uint64_t exhaustive = cases;

  Rng rng(2024);
  for (PackScheme sc :
       {PackScheme::overpacked, PackScheme::overpacked_truncated})
    for (int t = 0; t < 1000000; ++t) {
      const uint32_t u0 = uint32_t(rng.below(1u << 11));
      const uint32_t u1 = uint32_t(rng.below(1u << 11));
      const uint32_t v = uint32_t(rng.below(1u << 11));
      numerics::PackedPair pp = numerics::pack_pair(u0, u1, sc, 11);
      const numerics::DualProduct dp = numerics::recover_dual_products(pp, v);
      ++cases;
      if (dp.p0 != u0 * v || dp.p1 != u1 * v) ++mismatches;
    }
  verdict(1, "dual-product recovery", mismatches == 0,
          fmt("%llu exhaustive width-6 + %llu random width-11 recoveries, "
              "%llu mismatches (required: 0)",
              (unsigned long long)exhaustive,
              (unsigned long long)(cases - exhaustive),
              (unsigned long long)mismatches));
}

// ---- 2: kernel error ladder ----------------------------------------------

void criterion2() {
  auto sweep = [](numerics::SweepKernel k, numerics::SweepDist d) {
    numerics::SweepSpec s;
    s.kernel = k;
    s.dist = d;
    s.trials = 100000;
    s.seed = 1;
    return numerics::run_error_sweep(s).mean_rel_err_pct;
  };
  double e1[2], e2[2], e3[2], en[2];
  const numerics::SweepDist dists[2] = {numerics::SweepDist::normal,
                                        numerics::SweepDist::mixture};
  for (int d = 0; d < 2; ++d) {
    e1[d] = sweep(numerics::SweepKernel::impl1, dists[d]);
    e2[d] = sweep(numerics::SweepKernel::impl2, dists[d]);
    e3[d] = sweep(numerics::SweepKernel::impl3, dists[d]);
    en[d] = sweep(numerics::SweepKernel::naive, dists[d]);
  }

  uint64_t identity_mismatches = 0;
  for (int i = 0; i < 200; ++i) {
    Rng rng(Rng::mix(1, 0xacce97u + uint64_t(i)));
    std::vector<Fp16Bits> x, w;
    for (int j = 0; j < 64; ++j) {
      x.push_back(Fp16Bits::encode(rng.normal()));
      w.push_back(Fp16Bits::encode(rng.normal()));
    }
    numerics::PeColumnConfig c2, c3;
    c2.impl = numerics::PeImpl::impl2;
    c3.impl = numerics::PeImpl::impl3;
    if (numerics::pe_dot(x.data(), w.data(), x.size(), c2, nullptr).bits() !=
        numerics::pe_dot(x.data(), w.data(), x.size(), c3, nullptr).bits())
      ++identity_mismatches;
  }

  bool ok = identity_mismatches == 0;
  for (int d = 0; d < 2; ++d) {
    ok = ok && e1[d] <= e2[d];
    ok = ok && e2[d] == e3[d];
    ok = ok && e1[d] >= 0.01 && e1[d] <= 0.12;
    ok = ok && e2[d] >= 0.02 && e2[d] <= 0.25;
    ok = ok && en[d] / e1[d] >= 3.0 && en[d] / e2[d] >= 3.0;
  }
  verdict(2, "kernel error ladder", ok,
          fmt("100k dots depth 64: impl1 %.4f/%.4f%% in [0.01,0.12], "
              "impl2=impl3 %.4f/%.4f%% in [0.02,0.25], naive %.4f/%.4f%%, "
              "ratios>=3, 200-dot bit identity %llu mismatches",
              e1[0], e1[1], e2[0], e2[1], en[0], en[1],
              (unsigned long long)identity_mismatches));
}

// ---- 3 + 4: fused equivalence and softmax invariance ---------------------

void criteria34() {
  Rng shapes(555);
  double drift3 = 0.0, drift4 = 0.0;
  uint64_t decision_mismatches = 0, cases3 = 0, cases4 = 0;

  for (int seed = 0; seed < 100; ++seed) {
    const int rows = 1 + int(shapes.below(64));
    const int heads = 1 << shapes.below(3);  // 1, 2, 4
    const int dh = shapes.bernoulli(0.5) ? 16 : 32;
    const int dim = heads * dh;              // <= 128
    const int kv_rows = rows + int(shapes.below(64));
    Rng rng(Rng::mix(9000, uint64_t(seed)));

    const Mat x0 = dataflow::randn(rows, dim, rng);
    const Mat wr = dataflow::randn(dim, 2, rng, 0.3);
    dataflow::NormParams np;
    np.gain.resize(std::size_t(dim));
    for (int c = 0; c < dim; ++c)
      np.gain[std::size_t(c)] = 1.0 + 0.1 * rng.normal();
    dataflow::RouterConfig rc;
    rc.sampled = (seed % 2) == 0;
    rc.seed = uint64_t(seed) * 7 + 1;
    const Mat q = dataflow::randn(rows, dim, rng);
    const Mat k = dataflow::randn(kv_rows, dim, rng);
    const Mat v = dataflow::randn(kv_rows, dim, rng);
    Mat rope_in = dataflow::randn(rows, dim, rng);
    std::vector<int> pos(rows, 0);
    for (int i = 0; i < rows; ++i) pos[std::size_t(i)] = int(rng.below(4096));
    Mat g = dataflow::randn(rows, dim, rng);
    Mat u = dataflow::randn(rows, dim, rng);

    Mat xr = x0;
    const dataflow::RouterResult rr = ref::router_norm_unfused(xr, wr, np, rc);
    const Mat attn_ref = [&] {
      dataflow::AttnConfig ac;
      ac.heads = heads;
      ac.kv_tile = 16;
      ac.q_pos.resize(std::size_t(rows));
      for (int i = 0; i < rows; ++i)
        ac.q_pos[std::size_t(i)] = kv_rows - rows + i;
      ac.kv_pos.resize(std::size_t(kv_rows));
      for (int i = 0; i < kv_rows; ++i) ac.kv_pos[std::size_t(i)] = i;
      return ref::attention(q, k, v, ac);
    }();
    Mat rope_ref = rope_in;
    ref::rope_complex(rope_ref, heads, pos, 10000.0);
    const Mat ffn_ref = ref::swiglu(g, u);

    Mat attn_base(1, 1);
    for (int tile : {8, 16, 32}) {
      dataflow::EvalContext ec;
      Mat xf = x0;
      const dataflow::RouterResult fr =
          dataflow::fused_router_norm(xf, wr, np, rc, tile, ec);
      drift3 = std::max(drift3, dataflow::max_abs_diff(xf, xr));
      drift3 = std::max(drift3, dataflow::max_abs_diff(fr.logits, rr.logits));
      for (std::size_t i = 0; i < fr.execute.size(); ++i)
        decision_mismatches += fr.execute[i] != rr.execute[i];

      dataflow::AttnConfig ac;
      ac.heads = heads;
      ac.kv_tile = tile;
      ac.q_pos.resize(std::size_t(rows));
      for (int i = 0; i < rows; ++i)
        ac.q_pos[std::size_t(i)] = kv_rows - rows + i;
      ac.kv_pos.resize(std::size_t(kv_rows));
      for (int i = 0; i < kv_rows; ++i) ac.kv_pos[std::size_t(i)] = i;
      const Mat attn = dataflow::fused_attention(q, k, v, ac, ec);
      drift3 = std::max(drift3, dataflow::max_abs_diff(attn, attn_ref));
      if (tile == 8)
        attn_base = attn;
      else {
        drift4 = std::max(drift4, dataflow::max_abs_diff(attn, attn_base));
        ++cases4;
      }

      Mat rf = rope_in;
      dataflow::rope_apply(rf, heads, pos, 10000.0, ec);
      drift3 = std::max(drift3, dataflow::max_abs_diff(rf, rope_ref));
      Mat gf = g;
      drift3 = [&] {
        Mat uf = u;
        dataflow::swiglu_inplace(gf, uf, ec);
        return std::max(drift3, dataflow::max_abs_diff(gf, ffn_ref));
      }();
      ++cases3;

      // Cache permutation, positions carried alongside.
      for (int p = 0; p < 2; ++p) {
        std::vector<int> pi(kv_rows, 0);
        for (int i = 0; i < kv_rows; ++i) pi[std::size_t(i)] = i;
        for (int i = kv_rows - 1; i > 0; --i)
          std::swap(pi[std::size_t(i)],
                    pi[std::size_t(rng.below(uint64_t(i) + 1))]);
        Mat kp(kv_rows, dim), vp(kv_rows, dim);
        dataflow::AttnConfig ap = ac;
        for (int i = 0; i < kv_rows; ++i) {
          const int src = pi[std::size_t(i)];
          for (int c = 0; c < dim; ++c) {
            kp.at(i, c) = k.at(src, c);
            vp.at(i, c) = v.at(src, c);
          }
          ap.kv_pos[std::size_t(i)] = src;
        }
        drift4 = std::max(
            drift4,
            dataflow::max_abs_diff(attn, dataflow::fused_attention(q, kp, vp,
                                                                   ap, ec)));
        ++cases4;
      }
    }
  }

  verdict(3, "fused/unfused equivalence",
          drift3 <= 1e-9 && decision_mismatches == 0,
          fmt("%llu cases (100 seeds x 3 tilings, rows<=64 width<=128): max "
              "drift %.3e (tol 1e-9), %llu decision mismatches (required: 0)",
              (unsigned long long)cases3, drift3,
              (unsigned long long)decision_mismatches));
  verdict(4, "softmax order invariance", drift4 <= 1e-12,
          fmt("%llu permutation/retiling cases: max drift %.3e (tol 1e-12)",
              (unsigned long long)cases4, drift4));
}

// ---- 5: round scheduling legality ----------------------------------------

void criterion5() {
  Rng rng(77);
  uint64_t instances = 0, violations = 0;
  for (int t = 0; t < 10000; ++t) {
    kvsim::KvSimConfig cfg;
    cfg.hbm.ports = 4 << rng.below(3);      // 4, 8, 16
    cfg.hbm.channels = cfg.hbm.ports / 2;
    cfg.buffer.enabled = true;
    cfg.buffer.read_ports = 2 << rng.below(3);
    cfg.buffer.write_ports = 2 << rng.below(3);
    const int n = 1 + int(rng.below(48));
    std::vector<kvsim::FetchOp> fetches;
    for (int i = 0; i < n; ++i) {
      kvsim::FetchOp f;
      f.token = uint32_t(i);
      f.port = int(rng.below(uint64_t(cfg.hbm.ports)));
      f.cross = rng.bernoulli(0.25);
      f.retain = rng.bernoulli(0.4);
      fetches.push_back(f);
    }
    const int reads = int(rng.below(64));
    const std::vector<kvsim::Round> rounds =
        kvsim::schedule_rounds(fetches, reads, cfg);
    ++instances;
    if (kvsim::check_rounds(fetches, reads, rounds, cfg) != "") ++violations;
  }

  // Reference staging fixture: 4 ports / 2 channels, 2 read + 2 write
  // ports; four local fetches with three retained must split 3 + 1.
  kvsim::KvSimConfig fix;
  fix.hbm.ports = 4;
  fix.hbm.channels = 2;
  fix.buffer.enabled = true;
  fix.buffer.read_ports = 2;
  fix.buffer.write_ports = 2;
  std::vector<kvsim::FetchOp> ff;
  for (int i = 0; i < 4; ++i) {
    kvsim::FetchOp f;
    f.token = uint32_t(i);
    f.port = i;
    f.retain = i < 3;
    ff.push_back(f);
  }
  const std::vector<kvsim::Round> fr = kvsim::schedule_rounds(ff, 0, fix);
  const bool fixture_ok = kvsim::check_rounds(ff, 0, fr, fix) == "" &&
                          fr.size() == 2 && fr[0].fetch_ids.size() == 3 &&
                          fr[1].fetch_ids.size() == 1;

  // The checker must catch tampering, or the legality sweep proves nothing.
  std::vector<kvsim::Round> tampered = fr;
  tampered[0].fetch_ids.push_back(3);
  const bool tamper_ok = kvsim::check_rounds(ff, 0, tampered, fix) != "";

  verdict(5, "round scheduling legality",
          violations == 0 && fixture_ok && tamper_ok,
          fmt("%llu random instances, %llu violations (required: 0); staging "
              "fixture split %s; tamper detection %s",
              (unsigned long long)instances, (unsigned long long)violations,
              fixture_ok ? "3+1" : "WRONG", tamper_ok ? "live" : "DEAD"));
}

// ---- 6: streaming traffic brackets ---------------------------------------

void criterion6() {
  kvsim::SyntheticSpec spec;  // 512 context, 512 steps, 16 layers, skip 0.25
  spec.style = kvsim::TraceStyle::dense;
  const kvsim::AccessTrace dense = kvsim::make_synthetic(spec).trace;
  spec.style = kvsim::TraceStyle::token_wise;
  const kvsim::AccessTrace tokenw = kvsim::make_synthetic(spec).trace;
  spec.style = kvsim::TraceStyle::interleaved_skip;
  const kvsim::AccessTrace inter = kvsim::make_synthetic(spec).trace;

  kvsim::KvSimConfig cfg;
  const double p = kvsim::calibrate_page_penalty(dense, cfg, 88.7);
  cfg.hbm.page_miss_penalty_cycles = p;

  const kvsim::BandwidthReport rd = kvsim::run_kvsim(dense, cfg);
  const kvsim::BandwidthReport rt = kvsim::run_kvsim(tokenw, cfg);
  const kvsim::BandwidthReport ri = kvsim::run_kvsim(inter, cfg);
  kvsim::KvSimConfig bc = cfg;
  bc.buffer.enabled = true;
  const kvsim::BandwidthReport rb = kvsim::run_kvsim(inter, bc);

  bool ok = std::abs(rd.hbm_util_pct - 88.7) <= 1.0;
  ok = ok && rt.hbm_util_pct >= 72.3 && rt.hbm_util_pct <= 84.3;
  ok = ok && ri.hbm_util_pct >= 47.8 && ri.hbm_util_pct <= 63.8;
  ok = ok && rb.hbm_util_pct >= 78.1 && rb.hbm_util_pct <= 88.1;
  ok = ok && rb.aggregate_util_pct >= 100.0;

  // Conservation, to the byte.
  ok = ok && ri.hbm_read_bytes ==
                 ri.needed_entries * cfg.geom.entry_bytes();
  ok = ok && rb.hbm_read_bytes + rb.buffer_bytes ==
                 rb.needed_entries * cfg.geom.entry_bytes();

  // Ordering and buffer monotonicity across the penalty range.
  bool order_ok = true;
  for (double pen : {2.0, 8.0, p, 32.0, 64.0, 128.0}) {
    kvsim::KvSimConfig c2 = cfg;
    c2.hbm.page_miss_penalty_cycles = pen;
    const double ud = kvsim::run_kvsim(dense, c2).hbm_util_pct;
    const double ut = kvsim::run_kvsim(tokenw, c2).hbm_util_pct;
    const kvsim::BandwidthReport rpi = kvsim::run_kvsim(inter, c2);
    kvsim::KvSimConfig c2b = c2;
    c2b.buffer.enabled = true;
    const kvsim::BandwidthReport rpb = kvsim::run_kvsim(inter, c2b);
    order_ok = order_ok && ud > ut && ut > rpi.hbm_util_pct;
    order_ok = order_ok && rpb.hbm_util_pct > rpi.hbm_util_pct;
    order_ok = order_ok && rpb.cycles <= rpi.cycles;
  }
  ok = ok && order_ok;

  verdict(6, "streaming traffic brackets", ok,
          fmt("penalty %.4f: dense %.2f%% (88.7+-1), token-wise %.2f%% "
              "[72.3,84.3], interleaved %.2f%% [47.8,63.8], buffered %.2f%% "
              "[78.1,88.1], aggregate %.2f%% (>=100), ordering/conservation %s",
              p, rd.hbm_util_pct, rt.hbm_util_pct, ri.hbm_util_pct,
              rb.hbm_util_pct, rb.aggregate_util_pct,
              order_ok ? "hold" : "BROKEN"));
}

// ---- 7: analytic throughput model ----------------------------------------

void criterion7() {
  const speedup::ShapeParams sp;
  const speedup::PerfParams pp;
  const double c = speedup::calibrate_bubble_coeff(sp, pp, 512, 0.25, 1.40);

  auto pf = [&](speedup::Scheme sc, int t) {
    return speedup::prefill_speedup(sc, sp, pp, t, 0.25, c);
  };
  const double centers[3] = {1.14, 1.29, 1.40};
  const speedup::Scheme schemes[3] = {speedup::Scheme::token_skip,
                                      speedup::Scheme::layer_fallback,
                                      speedup::Scheme::layer_fallback_buffered};
  bool ok = true;
  double at512[3];
  for (int i = 0; i < 3; ++i) {
    at512[i] = pf(schemes[i], 512);
    ok = ok && std::abs(at512[i] - centers[i]) <= 0.05;
    ok = ok && std::abs(pf(schemes[i], 128) - centers[i]) <= 0.10;
    ok = ok && std::abs(pf(schemes[i], 1024) - centers[i]) <= 0.10;
  }

  const kvsim::HbmConfig hbm;
  const kvsim::KvGeometry geom;
  const speedup::DecodeUtils du =
      speedup::measure_decode_utils(hbm, geom, 88.7, 512, 512, 16, 0.25, 1);
  auto dc = [&](speedup::Scheme sc, int t) {
    return speedup::decode_speedup(sc, sp, pp, t, 0.25, du, false);
  };
  const double lf512 = dc(speedup::Scheme::layer_fallback, 512);
  const double lf1k = dc(speedup::Scheme::layer_fallback, 1024);
  const double lb512 = dc(speedup::Scheme::layer_fallback_buffered, 512);
  const double lb1k = dc(speedup::Scheme::layer_fallback_buffered, 1024);
  ok = ok && lf1k < lf512 && lb1k < lb512;  // gains narrow with cache growth
  ok = ok && lf512 > 1.0 && lf1k > 1.0 && lb512 > lf512 && lb1k > lf1k;
  const double zc =
      speedup::decode_speedup(speedup::Scheme::layer_fallback, sp, pp, 512,
                              0.25, du, true);
  ok = ok && std::abs(zc - 4.0 / 3.0) <= 1e-12;

  verdict(7, "analytic throughput model", ok,
          fmt("prefill@512 %.4f/%.4f/%.4f vs 1.14/1.29/1.40 (+-0.05; +-0.10 "
              "at 128/1024); decode fallback %.4f->%.4f, staged %.4f->%.4f "
              "narrowing 512->1024; contention-free %.6f == 4/3",
              at512[0], at512[1], at512[2], lf512, lf1k, lb512, lb1k, zc));
}

// ---- 8: cache storage accounting -----------------------------------------

void criterion8() {
  // Policy-scale mask: 32 layers, 10^4 tokens, skip probability 0.25
  // everywhere except the always-on bottom layer.
  const int layers = 32, tokens = 10000;
  dataflow::RouteMask mask(layers, tokens);
  Rng rng(4242);
  for (int l = 1; l < layers; ++l)
    for (int t = 0; t < tokens; ++t)
      if (rng.bernoulli(0.25)) mask.set(l, t, 0);
  const double reduction =
      1.0 - double(mask.stored_entries()) / (double(layers) * tokens);
  const double expect = 0.25 * double(layers - 1) / layers;  // 0.2422
  bool ok = std::abs(reduction - expect) <= 0.015;

  // Toy-model cross-check: the identity also holds for a measured run.
  runner::ModelConfig mc;
  const runner::ModelWeights mw = runner::make_weights(mc);
  mc.router_bias_execute = runner::calibrate_router(mc, mw);
  const runner::RunResult r = runner::run_model(mc, mw);
  const double toy_expect =
      r.skip_fraction * double(mc.layers - 1) / mc.layers;
  ok = ok && std::abs(r.storage_reduction - toy_expect) <= 1e-9;
  ok = ok && std::abs(r.skip_fraction - mc.skip_target) <= 0.05;

  verdict(8, "cache storage accounting", ok,
          fmt("mask 32x10000: reduction %.4f vs %.4f (tol 0.015); toy run "
              "skip %.4f -> reduction %.4f == skip*(L-1)/L (tol 1e-9)",
              reduction, expect, r.skip_fraction, r.storage_reduction));
}

// ---- 9: end-to-end determinism -------------------------------------------

void criterion9() {
  runner::ModelConfig mc;
  mc.router_bias_execute = 1.75;
  const runner::ModelWeights mw = runner::make_weights(mc);

  const runner::RunResult w1 = runner::run_model(mc, mw);
  const runner::RunResult w2 = runner::run_model(mc, mw);
  mc.mode = dataflow::EvalMode::device;
  const runner::RunResult d1 = runner::run_model(mc, mw);
  const runner::RunResult d2 = runner::run_model(mc, mw);

  std::ostringstream t1, t2;
  kvsim::serialize_trace(w1.trace, t1);
  kvsim::serialize_trace(w2.trace, t2);

  const bool ok = w1.output_hash == w2.output_hash &&
                  d1.output_hash == d2.output_hash &&
                  t1.str() == t2.str() &&
                  dataflow::max_abs_diff(w1.hidden, w2.hidden) == 0.0 &&
                  dataflow::max_abs_diff(d1.hidden, d2.hidden) == 0.0;
  verdict(9, "end-to-end determinism", ok,
          fmt("repeated runs: wide %016llx==%016llx, device %016llx==%016llx, "
              "traces byte-identical: %s",
              (unsigned long long)w1.output_hash,
              (unsigned long long)w2.output_hash,
              (unsigned long long)d1.output_hash,
              (unsigned long long)d2.output_hash,
              t1.str() == t2.str() ? "yes" : "NO"));
}

}  // namespace

int main() {
  criterion1();
  criterion2();
  criteria34();
  criterion5();
  criterion6();
  criterion7();
  criterion8();
  criterion9();
  std::printf("%d of 9 criteria passed\n", 9 - failures);
  return failures;
}
