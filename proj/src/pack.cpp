#include "opusim/pack.hpp"

#include <stdexcept>
#include <string>

namespace opusim::numerics {

namespace {

void check_operand(uint32_t u, int width, const char* name) {
  if (width < 2 || width > 11)
    throw std::invalid_argument("pack: width must be in [2, 11]");
  if (u >= (1u << width))
    throw std::invalid_argument(std::string("pack: operand ") + name +
                                " exceeds " + std::to_string(width) + " bits");
}

}  // namespace

PackedPair pack_pair(uint32_t u0, uint32_t u1, PackScheme scheme, int width) {
  check_operand(u0, width, "u0");
  check_operand(u1, width, "u1");
  const int W = width;

  PackedPair pp;
  pp.scheme = scheme;
  pp.width = W;

  switch (scheme) {
    case PackScheme::standard: {
      // u1 at bit 2W, u0 at bit 0; both product fields disjoint.
      if (3 * W > 26)
        throw std::domain_error(
            "pack: standard scheme needs " + std::to_string(3 * W) +
            " operand bits but the multiplier port caps at 26 usable bits");
      pp.ports.a = (int64_t(u1) << (2 * W)) | u0;
      pp.ports.pre_adder = PreAdderMode::bypass;
      break;
    }
    case PackScheme::overpacked: {
      // u1 at the highest shift that still fits: j = 26 - W.  Products
      // overlap by o = 3W - 26 bits when W > 8.
      const int j = 26 - W;
      pp.ports.d = u0;
      pp.ports.a = int64_t(u1) << j;
      pp.ports.pre_adder = PreAdderMode::subtract;
      const int o = 3 * W - 26;
      if (o > 0) pp.aux_multiplicands.first = u1 & ((1u << o) - 1);
      break;
    }
    case PackScheme::overpacked_truncated: {
      // Drop u0's LSB and u1's MSB, place u1' at k = 2W-6 (the widest
      // placement the 27-bit port admits), sign-invert it via the
      // pre-adder.  The auxiliary multiply is then always 5 bits.
      if (W < 6)
        throw std::domain_error(
            "pack: truncated scheme needs at least 6-bit operands");
      const int k = 2 * W - 6;
      const uint32_t t0 = u0 & 1u;
      const uint32_t t1 = u1 >> (W - 1);
      const uint32_t u0r = u0 >> 1;
      const uint32_t u1r = u1 & ((1u << (W - 1)) - 1);
      pp.ports.d = u0r;
      pp.ports.a = int64_t(u1r) << k;
      pp.ports.pre_adder = PreAdderMode::subtract;
      pp.truncated_bits = {t0, t1};
      pp.aux_multiplicands.first = u1r & 0x1f;
      break;
    }
  }
  validate_ports(pp.ports);
  return pp;
}

DualProduct recover_dual_products(PackedPair& pp, uint32_t v) {
  check_operand(v, pp.width, "v");
  const int W = pp.width;
  const int64_t field = int64_t(1) << (2 * W);
  DualProduct out;

  switch (pp.scheme) {
    case PackScheme::standard: {
      pp.ports.b = v;
      pp.ports.c = 0;
      const int64_t p = dsp_mac(pp.ports);
      out.p0 = static_cast<uint32_t>(p & (field - 1));
      out.p1 = static_cast<uint32_t>(p >> (2 * W));
      break;
    }
    case PackScheme::overpacked: {
      const int j = 26 - W;
      const int o = 3 * W - 26;
      uint32_t aux = 0;
      if (o > 0) {
        pp.aux_multiplicands.second = v & ((1u << o) - 1);
        aux = (pp.aux_multiplicands.first * pp.aux_multiplicands.second) &
              ((1u << o) - 1);
      }
      pp.ports.b = v;
      pp.ports.c = int64_t(aux) << j;
      const int64_t p = dsp_mac(pp.ports);
      if (o > 0) {
        const int64_t h = p >> (2 * W);  // arithmetic: h = -floor(u1*v / 2^o)
        if (h > 0)
          throw std::logic_error("pack: overlap field not cancelled (p1)");
        out.p0 = static_cast<uint32_t>(p & (field - 1));
        out.p1 = static_cast<uint32_t>(((-h) << o) + aux);
      } else {
        const int64_t h = p >> j;
        if (h > 0)
          throw std::logic_error("pack: high field sign violated");
        out.p0 = static_cast<uint32_t>(p & ((int64_t(1) << j) - 1));
        out.p1 = static_cast<uint32_t>(-h);
      }
      break;
    }
    case PackScheme::overpacked_truncated: {
      const int k = 2 * W - 6;
      const uint32_t t0 = pp.truncated_bits.first;
      const uint32_t t1 = pp.truncated_bits.second;
      pp.aux_multiplicands.second = v & 0x1f;
      const uint32_t aux =
          (pp.aux_multiplicands.first * pp.aux_multiplicands.second) & 0x1f;
      // C restores: u0's LSB (t0*v at bit 0), the 5-bit overlap
      // (aux at bit k+1), and u1's MSB (borrowed from the high field).
      pp.ports.b = int64_t(v) << 1;
      pp.ports.c = int64_t(t0) * v + (int64_t(aux) << (k + 1)) -
                   ((int64_t(t1) * v) << (W - 6 + 2 * W));
      const int64_t p = dsp_mac(pp.ports);
      const int64_t h = p >> (2 * W);
      if (h > 0)
        throw std::logic_error("pack: truncated-scheme high field positive");
      out.p0 = static_cast<uint32_t>(p & (field - 1));
      out.p1 = static_cast<uint32_t>(((-h) << 5) + aux);
      break;
    }
  }
  if (out.p0 >= (1u << (2 * W)) || out.p1 >= (1u << (2 * W)))
    throw std::logic_error("pack: recovered product exceeds 2W bits");
  return out;
}

}  // namespace opusim::numerics
