#ifndef OPUSIM_DSP_HPP
#define OPUSIM_DSP_HPP

#include <cstdint>

namespace opusim::numerics {

// Port-accurate model of one hard MAC slice: p = ((d # a) * b + c) where
// # is the configured pre-adder mode.  Widths follow the mid-range FPGA
// slice this targets: a,d 27-bit signed, b 18-bit signed, c and p 48-bit
// signed.  The pre-adder result wraps to 27 bits and p wraps to 48 bits,
// both two's complement, exactly as the silicon does.
enum class PreAdderMode { bypass, add, subtract };

struct DspPorts {
  int64_t a = 0;
  int64_t b = 0;
  int64_t c = 0;
  int64_t d = 0;
  PreAdderMode pre_adder = PreAdderMode::bypass;
};

// Throws std::domain_error when any port value does not fit its width.
void validate_ports(const DspPorts& p);

// Wrap x to a w-bit two's-complement value.
int64_t wrap_signed(int64_t x, int bits);

// One MAC evaluation.  Validates ports first.
int64_t dsp_mac(const DspPorts& p);

}  // namespace opusim::numerics

#endif
