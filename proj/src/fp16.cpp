#include "opusim/fp16.hpp"

#include <cmath>
#include <cstring>

namespace opusim::numerics {

namespace {

struct DoubleParts {
  bool sign;
  int exp2;        // value = mant * 2^exp2
  uint64_t mant;   // integer mantissa (53 bits for normals)
};

DoubleParts split_double(double x) {
  uint64_t u;
  std::memcpy(&u, &x, sizeof(u));
  DoubleParts p;
  p.sign = (u >> 63) != 0;
  int e = static_cast<int>((u >> 52) & 0x7ff);
  uint64_t frac = u & 0xfffffffffffffull;
  if (e == 0) {  // double subnormal: far below the fp16 range anyway
    p.mant = frac;
    p.exp2 = -1074;
  } else {
    p.mant = frac | (1ull << 52);
    p.exp2 = e - 1075;
  }
  return p;
}

// Round mant*2^exp2 so that exactly `keep` significant bits remain,
// nearest-even.  Returns the rounded mantissa; *exp2 is adjusted.
uint64_t round_to_bits(uint64_t mant, int* exp2, int keep) {
  int width = 64 - __builtin_clzll(mant);
  int drop = width - keep;
  if (drop <= 0) {
    *exp2 -= drop;  // widen: exact
    return mant << (-drop);
  }
  uint64_t kept = mant >> drop;
  uint64_t rem = mant & ((1ull << drop) - 1);
  uint64_t half = 1ull << (drop - 1);
  if (rem > half || (rem == half && (kept & 1)))
    kept += 1;  // may carry into keep+1 bits; caller handles
  *exp2 += drop;
  return kept;
}

}  // namespace

Fp16Bits Fp16Bits::encode(double x) {
  if (std::isnan(x) || std::isinf(x))
    throw std::domain_error("fp16: cannot encode NaN/Inf");
  if (x == 0.0) {
    uint64_t u;
    std::memcpy(&u, &x, sizeof(u));
    return from_bits(static_cast<uint16_t>((u >> 63) << 15));
  }

  DoubleParts p = split_double(x);
  uint16_t sbit = static_cast<uint16_t>(p.sign ? 0x8000 : 0);

  // Normal target: 11 significand bits, value = sig * 2^(E-15-10), E in [1,30].
  int exp2 = p.exp2;
  uint64_t sig = round_to_bits(p.mant, &exp2, 11);
  if (sig == (1ull << 11)) {  // rounding carried: renormalize
    sig >>= 1;
    exp2 += 1;
  }
  int bexp = exp2 + 25;  // biased exponent: exp2 = E - 25 for normals
  if (bexp >= 31)
    throw std::domain_error("fp16: magnitude " + std::to_string(x) +
                            " exceeds the finite range");
  if (bexp >= 1)
    return from_bits(static_cast<uint16_t>(sbit | (bexp << 10) | (sig & 0x3ff)));

  // Subnormal target: value = frac * 2^-24.  Re-round the original mantissa
  // at that fixed scale (double rounding via the normal path would be wrong).
  int shift = -24 - p.exp2;
  uint64_t frac;
  if (shift <= 0) {
    if (shift < -40) throw std::domain_error("fp16: internal subnormal scale");
    frac = p.mant << (-shift);
  } else if (shift > 63) {
    frac = 0;
  } else {
    uint64_t kept = p.mant >> shift;
    uint64_t rem = p.mant & ((1ull << shift) - 1);
    uint64_t half = 1ull << (shift - 1);
    if (rem > half || (rem == half && (kept & 1))) kept += 1;
    frac = kept;
  }
  if (frac >= (1ull << 10))  // rounded up into the smallest normal
    return from_bits(static_cast<uint16_t>(sbit | (1 << 10)));
  return from_bits(static_cast<uint16_t>(sbit | frac));
}

double Fp16Bits::to_double() const {
  int e = static_cast<int>(exponent_field());
  double mag;
  if (e == 0)
    mag = std::ldexp(static_cast<double>(fraction()), -24);
  else
    mag = std::ldexp(static_cast<double>((1u << 10) | fraction()), e - 25);
  return sign() ? -mag : mag;
}

Fp16Bits flush_subnormal(const Fp16Bits& v, uint64_t* flush_count) {
  if (!v.is_subnormal()) return v;
  if (flush_count) ++*flush_count;
  return Fp16Bits::from_bits(static_cast<uint16_t>(v.sign() ? 0x8000 : 0));
}

}  // namespace opusim::numerics
