#ifndef OPUSIM_FP16_HPP
#define OPUSIM_FP16_HPP

#include <cstdint>
#include <stdexcept>
#include <string>

namespace opusim::numerics {

// IEEE-754 binary16 container: 1 sign bit, 5 exponent bits (bias 15),
// 10 fraction bits.  NaN/Inf encodings are rejected at construction; the
// emulated datapath never produces or consumes them.  Subnormals are
// representable by the type (round-trip must be exact); the datapath
// flushes them to zero at ingestion and counts the flushes.
class Fp16Bits {
public:
  static constexpr int kExpBias = 15;
  static constexpr int kFracBits = 10;
  static constexpr uint16_t kMaxFiniteBits = 0x7bff;  // 65504.0
  static constexpr double kMaxFinite = 65504.0;

  Fp16Bits() : bits_(0) {}

  static Fp16Bits from_bits(uint16_t bits) {
    if (((bits >> kFracBits) & 0x1f) == 0x1f)
      throw std::domain_error("fp16: NaN/Inf encoding rejected");
    Fp16Bits v;
    v.bits_ = bits;
    return v;
  }

  // Round-to-nearest-even encoding.  Throws on NaN/Inf input and on values
  // that round beyond the binary16 finite range.
  static Fp16Bits encode(double x);

  uint16_t bits() const { return bits_; }
  bool sign() const { return (bits_ >> 15) != 0; }
  uint32_t exponent_field() const { return (bits_ >> kFracBits) & 0x1f; }
  uint32_t fraction() const { return bits_ & 0x3ff; }

  bool is_zero() const { return (bits_ & 0x7fff) == 0; }
  bool is_subnormal() const { return exponent_field() == 0 && fraction() != 0; }

  // Unbiased exponent of the 11-bit significand view (normals only).
  int unbiased_exp() const { return static_cast<int>(exponent_field()) - kExpBias; }

  // 11-bit significand with the hidden bit: 2^10 + fraction for normals,
  // 0 for zero.  Callers must flush subnormals before asking for this.
  uint32_t significand11() const {
    if (is_zero()) return 0;
    if (exponent_field() == 0)
      throw std::logic_error("fp16: significand11 on unflushed subnormal");
    return (1u << kFracBits) | fraction();
  }

  double to_double() const;  // exact

  bool operator==(const Fp16Bits& o) const { return bits_ == o.bits_; }
  bool operator!=(const Fp16Bits& o) const { return bits_ != o.bits_; }

private:
  uint16_t bits_;
};

// Datapath ingestion: subnormal operands flush to +/-0 and bump the counter.
Fp16Bits flush_subnormal(const Fp16Bits& v, uint64_t* flush_count);

}  // namespace opusim::numerics

#endif
