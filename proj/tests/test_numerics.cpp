#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "opusim/bfp.hpp"
#include "opusim/dsp.hpp"
#include "opusim/fp16.hpp"
#include "opusim/pack.hpp"
#include "opusim/rng.hpp"
#include "opusim/sweep.hpp"

using namespace opusim::numerics;
using opusim::Rng;

TEST_CASE("half precision round trips every finite bit pattern") {
  int finite = 0;
  for (uint32_t b = 0; b <= 0xffff; ++b) {
    if (((b >> 10) & 0x1f) == 0x1f) {
      CHECK_THROWS_AS(Fp16Bits::from_bits(uint16_t(b)), std::domain_error);
      continue;
    }
    const Fp16Bits v = Fp16Bits::from_bits(uint16_t(b));
    const Fp16Bits back = Fp16Bits::encode(v.to_double());
    REQUIRE(back.bits() == uint16_t(b));
    ++finite;
  }
  CHECK(finite == 63488);
}

TEST_CASE("half precision encode picks the nearest value, ties to even") {
  // Brute-force oracle: scan every finite encoding for the closest one.
  std::vector<double> val(0x10000, 0.0);
  std::vector<bool> ok(0x10000, false);
  for (uint32_t b = 0; b <= 0xffff; ++b) {
    if (((b >> 10) & 0x1f) == 0x1f) continue;
    val[b] = Fp16Bits::from_bits(uint16_t(b)).to_double();
    ok[b] = true;
  }
  Rng rng(99);
  for (int t = 0; t < 2000; ++t) {
    double x;
    switch (t % 3) {
      case 0: x = rng.uniform(-65000.0, 65000.0); break;
      case 1: x = rng.normal(0.0, 4.0); break;
      default: x = rng.normal(0.0, 1e-5); break;
    }
    const uint16_t got = Fp16Bits::encode(x).bits();
    const double d_got = std::abs(val[got] - x);
    double d_best = 1e300;
    for (uint32_t b = 0; b <= 0xffff; ++b)
      if (ok[b]) d_best = std::min(d_best, std::abs(val[b] - x));
    REQUIRE(d_got == d_best);
  }

  // Exact midpoints resolve toward the even fraction.
  CHECK(Fp16Bits::encode(1.0 + std::ldexp(1.0, -11)).bits() ==
        Fp16Bits::encode(1.0).bits());
  CHECK(Fp16Bits::encode(1.0 + 3.0 * std::ldexp(1.0, -11)).bits() ==
        Fp16Bits::encode(1.0 + std::ldexp(2.0, -10)).bits());
  CHECK(Fp16Bits::encode(std::ldexp(1.0, -25)).bits() == 0);
  CHECK(Fp16Bits::encode(3.0 * std::ldexp(1.0, -25)).bits() ==
        Fp16Bits::encode(std::ldexp(1.0, -23)).bits());

  CHECK(Fp16Bits::encode(65504.0).bits() == Fp16Bits::kMaxFiniteBits);
  CHECK(Fp16Bits::encode(65519.9).bits() == Fp16Bits::kMaxFiniteBits);
  CHECK_THROWS_AS(Fp16Bits::encode(65520.0), std::domain_error);
  CHECK_THROWS_AS(Fp16Bits::encode(-1e9), std::domain_error);
  CHECK_THROWS_AS(Fp16Bits::encode(std::nan("")), std::domain_error);
  CHECK_THROWS_AS(Fp16Bits::encode(INFINITY), std::domain_error);
}

TEST_CASE("subnormal flush policy") {
  uint64_t n = 0;
  const Fp16Bits sub = Fp16Bits::from_bits(0x0201);
  CHECK(sub.is_subnormal());
  CHECK(flush_subnormal(sub, &n).is_zero());
  CHECK(n == 1);
  const Fp16Bits neg_sub = Fp16Bits::from_bits(0x8003);
  const Fp16Bits fz = flush_subnormal(neg_sub, &n);
  CHECK(fz.is_zero());
  CHECK(fz.sign());  // sign survives the flush
  CHECK(n == 2);
  const Fp16Bits norm = Fp16Bits::encode(1.5);
  CHECK(flush_subnormal(norm, &n) == norm);
  CHECK(n == 2);
  CHECK_THROWS_AS(sub.significand11(), std::logic_error);
}

namespace {

int64_t oracle_mac(const DspPorts& p) {
  __int128 m;
  switch (p.pre_adder) {
    case PreAdderMode::add: m = wrap_signed(p.d + p.a, 27); break;
    case PreAdderMode::subtract: m = wrap_signed(p.d - p.a, 27); break;
    default: m = p.a; break;
  }
  const __int128 full = m * p.b + p.c;
  return wrap_signed(int64_t(full & ((__int128(1) << 48) - 1)) , 48);
}

}  // namespace

TEST_CASE("mac slice matches a wide-integer oracle") {
  Rng rng(7);
  const PreAdderMode modes[] = {PreAdderMode::bypass, PreAdderMode::add,
                                PreAdderMode::subtract};
  for (int t = 0; t < 100000; ++t) {
    DspPorts p;
    p.a = int64_t(rng.below(1ull << 27)) - (1ll << 26);
    p.d = int64_t(rng.below(1ull << 27)) - (1ll << 26);
    p.b = int64_t(rng.below(1ull << 18)) - (1ll << 17);
    p.c = int64_t(rng.below(1ull << 48)) - (1ll << 47);
    p.pre_adder = modes[t % 3];
    REQUIRE(dsp_mac(p) == oracle_mac(p));
  }
  // Wrap extremes: pre-adder overflow and 48-bit accumulate overflow.
  DspPorts p;
  p.a = -(1ll << 26);
  p.d = -(1ll << 26);
  p.b = (1ll << 17) - 1;
  p.c = (1ll << 47) - 1;
  p.pre_adder = PreAdderMode::add;
  CHECK(dsp_mac(p) == oracle_mac(p));
  p.pre_adder = PreAdderMode::subtract;
  p.a = (1ll << 26) - 1;
  CHECK(dsp_mac(p) == oracle_mac(p));

  DspPorts bad;
  bad.a = 1ll << 26;
  CHECK_THROWS_AS(dsp_mac(bad), std::domain_error);
  bad = DspPorts{};
  bad.b = -(1ll << 17) - 1;
  CHECK_THROWS_AS(dsp_mac(bad), std::domain_error);
  bad = DspPorts{};
  bad.c = 1ll << 47;
  CHECK_THROWS_AS(dsp_mac(bad), std::domain_error);
}

TEST_CASE("dual products recover exhaustively at width six") {
  for (PackScheme sc : {PackScheme::standard, PackScheme::overpacked,
                        PackScheme::overpacked_truncated})
    for (uint32_t u0 = 0; u0 < 64; ++u0)
      for (uint32_t u1 = 0; u1 < 64; ++u1) {
        PackedPair pp = pack_pair(u0, u1, sc, 6);
        for (uint32_t v = 0; v < 64; ++v) {
          PackedPair fresh = pp;
          const DualProduct dp = recover_dual_products(fresh, v);
          REQUIRE(dp.p0 == u0 * v);
          REQUIRE(dp.p1 == u1 * v);
        }
      }
}

TEST_CASE("dual products recover at full width") {
  Rng rng(13);
  for (PackScheme sc :
       {PackScheme::overpacked, PackScheme::overpacked_truncated})
    for (int t = 0; t < 100000; ++t) {
      const uint32_t u0 = uint32_t(rng.below(1u << 11));
      const uint32_t u1 = uint32_t(rng.below(1u << 11));
      const uint32_t v = uint32_t(rng.below(1u << 11));
      PackedPair pp = pack_pair(u0, u1, sc, 11);
      const DualProduct dp = recover_dual_products(pp, v);
      REQUIRE(dp.p0 == u0 * v);
      REQUIRE(dp.p1 == u1 * v);
    }
  // Non-overlapping fields cannot fit three 11-bit lanes in 27 bits.
  CHECK_THROWS_AS(pack_pair(1, 1, PackScheme::standard, 11),
                  std::domain_error);
  CHECK_THROWS_AS(pack_pair(1u << 11, 0, PackScheme::overpacked, 11),
                  std::invalid_argument);
}

TEST_CASE("corrupted recovery fields are rejected") {
  {
    PackedPair pp = pack_pair(1000, 1000, PackScheme::overpacked_truncated, 11);
    pp.truncated_bits.second = 9;  // removed MSB can only be 0 or 1
    CHECK_THROWS_AS(recover_dual_products(pp, 1234), std::logic_error);
  }
  {
    PackedPair pp = pack_pair(1000, 1000, PackScheme::overpacked_truncated, 11);
    pp.ports.pre_adder = PreAdderMode::add;  // scheme requires subtract
    CHECK_THROWS_AS(recover_dual_products(pp, 1234), std::logic_error);
  }
  {
    PackedPair pp = pack_pair(1000, 1000, PackScheme::overpacked_truncated, 11);
    pp.ports.d ^= int64_t(1) << 26;  // out of port range
    CHECK_THROWS_AS(recover_dual_products(pp, 1234), std::logic_error);
  }
}

TEST_CASE("dot kernel identities") {
  Rng rng(23);
  const PeImpl impls[] = {PeImpl::impl1, PeImpl::impl2, PeImpl::impl3};

  // One-hot input returns the selected weight exactly.
  for (PeImpl impl : impls)
    for (int t = 0; t < 50; ++t) {
      const std::size_t n = 16;
      std::vector<Fp16Bits> x(n), w(n);
      for (std::size_t i = 0; i < n; ++i)
        w[i] = Fp16Bits::encode(rng.normal());
      const std::size_t hot = rng.below(n);
      x[hot] = Fp16Bits::encode(1.0);
      PeColumnConfig cfg;
      cfg.impl = impl;
      CHECK(pe_dot(x.data(), w.data(), n, cfg, nullptr).bits() ==
            w[hot].bits());
    }

  // Negating the input negates the result bit for bit.
  for (PeImpl impl : impls)
    for (int t = 0; t < 200; ++t) {
      const std::size_t n = 32;
      std::vector<Fp16Bits> x(n), xn(n), w(n);
      for (std::size_t i = 0; i < n; ++i) {
        x[i] = Fp16Bits::encode(rng.normal());
        xn[i] = Fp16Bits::from_bits(uint16_t(x[i].bits() ^ 0x8000u));
        w[i] = Fp16Bits::encode(rng.normal());
      }
      PeColumnConfig cfg;
      cfg.impl = impl;
      const uint16_t a = pe_dot(x.data(), w.data(), n, cfg, nullptr).bits();
      const uint16_t b = pe_dot(xn.data(), w.data(), n, cfg, nullptr).bits();
      if (a == 0 || a == 0x8000u)
        CHECK((b == 0 || b == 0x8000u));
      else
        CHECK(b == (a ^ 0x8000u));
    }

  // The paired kernel carries two weight columns through one pass and must
  // agree with two single passes bit for bit.
  for (PeImpl impl : impls)
    for (int t = 0; t < 200; ++t) {
      const std::size_t n = 48;
      std::vector<Fp16Bits> x(n), wa(n), wb(n);
      for (std::size_t i = 0; i < n; ++i) {
        x[i] = Fp16Bits::encode(rng.normal());
        wa[i] = Fp16Bits::encode(rng.normal());
        wb[i] = Fp16Bits::encode(rng.normal());
      }
      PeColumnConfig cfg;
      cfg.impl = impl;
      const auto pair = pe_dot_pair(x.data(), wa.data(), wb.data(), n, cfg,
                                    nullptr);
      CHECK(pair.first.bits() ==
            pe_dot(x.data(), wa.data(), n, cfg, nullptr).bits());
      CHECK(pair.second.bits() ==
            pe_dot(x.data(), wb.data(), n, cfg, nullptr).bits());
    }

  // Four-bit weights: every variant shares the exact integer product path.
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 48;
    std::vector<Fp16Bits> x(n);
    std::vector<int8_t> w(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = Fp16Bits::encode(rng.normal());
      w[i] = int8_t(int(rng.below(16)) - 8);
    }
    PeColumnConfig c1, c2, c3;
    c1.impl = PeImpl::impl1;
    c2.impl = PeImpl::impl2;
    c3.impl = PeImpl::impl3;
    c1.mode = c2.mode = c3.mode = PeMode::int4;
    const uint16_t r1 = pe_dot_int4(x.data(), w.data(), n, c1, nullptr).bits();
    const uint16_t r2 = pe_dot_int4(x.data(), w.data(), n, c2, nullptr).bits();
    const uint16_t r3 = pe_dot_int4(x.data(), w.data(), n, c3, nullptr).bits();
    CHECK(r1 == r2);
    CHECK(r2 == r3);
  }
}

TEST_CASE("saturation and flush accounting") {
  PeColumnConfig cfg;
  PeStats st;
  std::vector<Fp16Bits> x(8, Fp16Bits::encode(200.0));
  std::vector<Fp16Bits> w(8, Fp16Bits::encode(100.0));
  const Fp16Bits r = pe_dot(x.data(), w.data(), x.size(), cfg, &st);
  CHECK(r.bits() == Fp16Bits::kMaxFiniteBits);  // clamped, not wrapped
  CHECK(st.saturations > 0);

  PeStats st2;
  std::vector<Fp16Bits> xs = {Fp16Bits::from_bits(0x0001),
                              Fp16Bits::encode(1.0)};
  std::vector<Fp16Bits> ws = {Fp16Bits::encode(1.0), Fp16Bits::encode(2.0)};
  const Fp16Bits r2 = pe_dot(xs.data(), ws.data(), xs.size(), cfg, &st2);
  CHECK(r2 == Fp16Bits::encode(2.0));  // flushed lane contributes zero
  CHECK(st2.subnormal_flushes > 0);
}

TEST_CASE("error sweep is deterministic and ranks the kernels") {
  SweepSpec spec;
  spec.trials = 3000;
  spec.seed = 17;

  SweepSpec serial = spec;
  serial.parallel = false;
  const SweepResult par = run_error_sweep(spec);
  const SweepResult ser = run_error_sweep(serial);
  CHECK(par.mean_rel_err_pct == ser.mean_rel_err_pct);
  CHECK(par.used_trials == ser.used_trials);

  auto mean = [&](SweepKernel k, PeMode m) {
    SweepSpec s = spec;
    s.kernel = k;
    s.mode = m;
    return run_error_sweep(s).mean_rel_err_pct;
  };
  const double e1 = mean(SweepKernel::impl1, PeMode::fp16);
  const double e2 = mean(SweepKernel::impl2, PeMode::fp16);
  const double e3 = mean(SweepKernel::impl3, PeMode::fp16);
  const double en = mean(SweepKernel::naive, PeMode::fp16);
  CHECK(e1 < e2);       // wider product accumulation recovers precision
  CHECK(e2 == e3);      // same arithmetic, different fold-in point
  CHECK(e2 < en);       // block accumulation beats per-element rounding
  CHECK(mean(SweepKernel::impl1, PeMode::int4) ==
        mean(SweepKernel::impl3, PeMode::int4));
}
