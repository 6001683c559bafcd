#include "opusim/dsp.hpp"

#include <stdexcept>
#include <string>

namespace opusim::numerics {

namespace {

bool fits_signed(int64_t x, int bits) {
  int64_t lo = -(int64_t(1) << (bits - 1));
  int64_t hi = (int64_t(1) << (bits - 1)) - 1;
  return x >= lo && x <= hi;
}

}  // namespace

void validate_ports(const DspPorts& p) {
  if (!fits_signed(p.a, 27))
    throw std::domain_error("dsp: A port value " + std::to_string(p.a) +
                            " exceeds 27 signed bits");
  if (!fits_signed(p.d, 27))
    throw std::domain_error("dsp: D port value " + std::to_string(p.d) +
                            " exceeds 27 signed bits");
  if (!fits_signed(p.b, 18))
    throw std::domain_error("dsp: B port value " + std::to_string(p.b) +
                            " exceeds 18 signed bits");
  if (!fits_signed(p.c, 48))
    throw std::domain_error("dsp: C port value " + std::to_string(p.c) +
                            " exceeds 48 signed bits");
}

int64_t wrap_signed(int64_t x, int bits) {
  uint64_t m = (bits == 64) ? ~0ull : ((uint64_t(1) << bits) - 1);
  uint64_t u = static_cast<uint64_t>(x) & m;
  uint64_t sign = uint64_t(1) << (bits - 1);
  if (u & sign) return static_cast<int64_t>(u | ~m);
  return static_cast<int64_t>(u);
}

int64_t dsp_mac(const DspPorts& p) {
  validate_ports(p);
  int64_t mval;
  switch (p.pre_adder) {
    case PreAdderMode::bypass:   mval = p.a; break;
    case PreAdderMode::add:      mval = wrap_signed(p.d + p.a, 27); break;
    case PreAdderMode::subtract: mval = wrap_signed(p.d - p.a, 27); break;
    default:                     mval = p.a; break;
  }
  // |mval| <= 2^26, |b| <= 2^17: product fits in 44 bits, so the int64
  // arithmetic below is exact before the final 48-bit wrap.
  int64_t prod = mval * p.b;
  return wrap_signed(prod + p.c, 48);
}

}  // namespace opusim::numerics
