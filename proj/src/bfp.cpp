#include "opusim/bfp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "opusim/dsp.hpp"

namespace opusim::numerics {

namespace {

constexpr int kProductTruncBits = 7;  // impl2/3 drop this many product LSBs

int64_t sign_extend_15(int64_t field) {
  return (field & 0x4000) ? field - 0x8000 : field;
}

ProductLane make_lane(int64_t mantissa, int exponent) {
  ProductLane lane;
  if (mantissa == 0) return lane;  // sentinel
  lane.mantissa = mantissa;
  lane.exponent = exponent;
  return lane;
}

void check_int4(int w, const char* name) {
  if (w < -8 || w > 7)
    throw std::invalid_argument(std::string("pe: ") + name +
                                " outside the signed 4-bit range");
}

}  // namespace

int frac_bits_for(const PeColumnConfig& cfg) {
  if (cfg.mode == PeMode::int4) return Fp16Bits::kFracBits;
  return cfg.impl == PeImpl::impl1 ? 2 * Fp16Bits::kFracBits
                                   : 2 * Fp16Bits::kFracBits - kProductTruncBits;
}

std::pair<ProductLane, ProductLane> fp16_pair_product(Fp16Bits x, Fp16Bits wa,
                                                      Fp16Bits wb,
                                                      const PeColumnConfig& cfg,
                                                      PeStats* stats) {
  x = flush_subnormal(x, stats ? &stats->subnormal_flushes : nullptr);
  wa = flush_subnormal(wa, stats ? &stats->subnormal_flushes : nullptr);
  wb = flush_subnormal(wb, stats ? &stats->subnormal_flushes : nullptr);
  if (x.is_zero()) return {ProductLane{}, ProductLane{}};

  const uint32_t sx = x.significand11();
  const uint32_t sa = wa.significand11();
  const uint32_t sb = wb.significand11();
  uint32_t p0, p1;
  if (cfg.impl == PeImpl::impl1) {
    // One multiplier per output column: plain single-product MACs.
    DspPorts ma{sa, static_cast<int64_t>(sx), 0, 0, PreAdderMode::bypass};
    DspPorts mb{sb, static_cast<int64_t>(sx), 0, 0, PreAdderMode::bypass};
    p0 = static_cast<uint32_t>(dsp_mac(ma));
    p1 = static_cast<uint32_t>(dsp_mac(mb));
    if (stats) stats->multiplies += 2;
  } else {
    // Both columns share one multiplier via operand packing.
    PackedPair pp = pack_pair(sa, sb, cfg.scheme, Fp16Bits::kFracBits + 1);
    const DualProduct dp = recover_dual_products(pp, sx);
    p0 = dp.p0;
    p1 = dp.p1;
    if (stats) stats->multiplies += 1;
  }
  int64_t m0 = p0, m1 = p1;
  if (cfg.impl != PeImpl::impl1) {
    m0 >>= kProductTruncBits;
    m1 >>= kProductTruncBits;
  }
  if (wa.sign() != x.sign()) m0 = -m0;
  if (wb.sign() != x.sign()) m1 = -m1;
  const int ex = x.unbiased_exp();
  return {make_lane(m0, wa.unbiased_exp() + ex),
          make_lane(m1, wb.unbiased_exp() + ex)};
}

std::pair<ProductLane, ProductLane> int4_pair_product(Fp16Bits x, int wa,
                                                      int wb,
                                                      const PeColumnConfig& cfg,
                                                      PeStats* stats) {
  (void)cfg;
  check_int4(wa, "wa");
  check_int4(wb, "wb");
  x = flush_subnormal(x, stats ? &stats->subnormal_flushes : nullptr);
  if (x.is_zero()) return {ProductLane{}, ProductLane{}};

  const int64_t sx = x.significand11();
  // wa in the high field (bit 15), wb in the low; both two's complement.
  DspPorts ports{int64_t(wa) * (1 << 15) + wb, sx, 0, 0, PreAdderMode::bypass};
  const int64_t p = dsp_mac(ports);
  if (stats) stats->multiplies += 1;
  int64_t m0 = sign_extend_15(p & 0x7fff);
  int64_t m1 = (p >> 15) + (m0 < 0 ? 1 : 0);
  if (x.sign()) {
    m0 = -m0;
    m1 = -m1;
  }
  const int ex = x.unbiased_exp();
  return {make_lane(m1, ex), make_lane(m0, ex)};
}

Fp16Bits encode_saturating(double v, PeStats* stats) {
  if (std::isnan(v)) throw std::invalid_argument("encode_saturating: nan");
  try {
    return Fp16Bits::encode(v);
  } catch (const std::domain_error&) {
    if (stats) stats->saturations += 1;
    const uint16_t sign = v < 0 ? 0x8000u : 0u;
    return Fp16Bits::from_bits(sign | Fp16Bits::kMaxFiniteBits);
  }
}

Fp16Bits bfp_finalize(const std::vector<ProductLane>& lanes,
                      const PeColumnConfig& cfg, PeStats* stats) {
  int shared = kZeroExponent;
  for (const ProductLane& lane : lanes)
    if (lane.exponent != kZeroExponent) shared = std::max(shared, lane.exponent);
  if (shared == kZeroExponent) return Fp16Bits::from_bits(0);

  int64_t sum = 0;
  for (const ProductLane& lane : lanes) {
    if (lane.exponent == kZeroExponent) continue;
    const int s = std::min(shared - lane.exponent, 63);
    if (cfg.mode == PeMode::fp16) {
      // Magnitude shift: discarded bits round toward zero either sign.
      const int64_t mag = std::abs(lane.mantissa) >> s;
      sum += lane.mantissa < 0 ? -mag : mag;
    } else {
      sum += lane.mantissa >> s;  // two's complement alignment
    }
  }
  const double wide = std::ldexp(static_cast<double>(sum),
                                 shared - frac_bits_for(cfg));
  return encode_saturating(wide, stats);
}

Fp16Bits pe_dot(const Fp16Bits* x, const Fp16Bits* w, std::size_t n,
                const PeColumnConfig& cfg, PeStats* stats) {
  if (cfg.mode != PeMode::fp16)
    throw std::invalid_argument("pe_dot: fp16 weights required");
  std::vector<ProductLane> lanes(n);
  for (std::size_t i = 0; i < n; ++i)
    lanes[i] = fp16_pair_product(x[i], w[i], w[i], cfg, stats).first;
  return bfp_finalize(lanes, cfg, stats);
}

Fp16Bits pe_dot_int4(const Fp16Bits* x, const int8_t* w, std::size_t n,
                     const PeColumnConfig& cfg, PeStats* stats) {
  if (cfg.mode != PeMode::int4)
    throw std::invalid_argument("pe_dot_int4: int4 weights required");
  std::vector<ProductLane> lanes(n);
  for (std::size_t i = 0; i < n; ++i)
    lanes[i] = int4_pair_product(x[i], w[i], w[i], cfg, stats).first;
  return bfp_finalize(lanes, cfg, stats);
}

std::pair<Fp16Bits, Fp16Bits> pe_dot_pair(const Fp16Bits* x,
                                          const Fp16Bits* wa,
                                          const Fp16Bits* wb, std::size_t n,
                                          const PeColumnConfig& cfg,
                                          PeStats* stats) {
  if (cfg.mode != PeMode::fp16)
    throw std::invalid_argument("pe_dot_pair: fp16 weights required");
  std::vector<ProductLane> la(n), lb(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto [a, b] = fp16_pair_product(x[i], wa[i], wb[i], cfg, stats);
    la[i] = a;
    lb[i] = b;
  }
  return {bfp_finalize(la, cfg, stats), bfp_finalize(lb, cfg, stats)};
}

std::pair<Fp16Bits, Fp16Bits> pe_dot_pair_int4(const Fp16Bits* x,
                                               const int8_t* wa,
                                               const int8_t* wb, std::size_t n,
                                               const PeColumnConfig& cfg,
                                               PeStats* stats) {
  if (cfg.mode != PeMode::int4)
    throw std::invalid_argument("pe_dot_pair_int4: int4 weights required");
  std::vector<ProductLane> la(n), lb(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto [hi, lo] = int4_pair_product(x[i], wa[i], wb[i], cfg, stats);
    la[i] = hi;
    lb[i] = lo;
  }
  return {bfp_finalize(la, cfg, stats), bfp_finalize(lb, cfg, stats)};
}

Fp16Bits naive_dot(const Fp16Bits* x, const Fp16Bits* w, std::size_t n,
                   PeStats* stats) {
  Fp16Bits acc = Fp16Bits::from_bits(0);
  for (std::size_t i = 0; i < n; ++i) {
    const Fp16Bits xf =
        flush_subnormal(x[i], stats ? &stats->subnormal_flushes : nullptr);
    const Fp16Bits wf =
        flush_subnormal(w[i], stats ? &stats->subnormal_flushes : nullptr);
    acc = encode_saturating(acc.to_double() + xf.to_double() * wf.to_double(),
                            stats);
  }
  return acc;
}

}  // namespace opusim::numerics
