#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "opusim/route.hpp"

// KV access traces: one line per (decode step, layer) scheduling unit.
//
//   <step> <layer> <attend> <lookahead-hex> needed:<entries>
//
// attend is 1 when the decoding token runs attention at this layer (an
// attend=0 line fetches nothing and drops any reuse-buffer contents).  The
// lookahead field is a hex bitset whose bit t says token t runs attention
// at layer+1; fetched entries with a clear bit are worth retaining.  The
// needed list is `-` or comma-separated `(token,provenance)` pairs, where
// provenance is the layer whose stored entry substitutes for this token.

namespace opusim::kvsim {

struct TraceEntry {
  uint32_t token = 0;
  int prov = 0;
};

struct TraceUnit {
  int step = 0;
  int layer = 0;
  bool attend = true;
  std::vector<uint64_t> lookahead;  // little-endian 64-bit words
  std::vector<TraceEntry> needed;

  bool lookahead_bit(uint32_t t) const;
  void set_lookahead_bit(uint32_t t);
};

struct AccessTrace {
  std::vector<TraceUnit> units;
};

struct TraceParseError : std::runtime_error {
  int line;
  TraceParseError(int line_, const std::string& msg);
};

AccessTrace parse_trace(std::istream& in);
void serialize_trace(const AccessTrace& tr, std::ostream& out);

// ---- synthetic generation ------------------------------------------------

// dense: nobody skips, every entry is fetched from its own layer.
// token_wise: skipped tokens are simply absent from the layer's reads.
// interleaved_skip: every past token is read, skipped ones through their
// fallback (earlier-layer) entry.
enum class TraceStyle { dense, token_wise, interleaved_skip };

struct SyntheticSpec {
  TraceStyle style = TraceStyle::dense;
  int context = 512;
  int steps = 512;
  int layers = 16;
  double skip = 0.25;  // per (layer, token) skip probability; layer 0 runs
  uint64_t seed = 1;
};

struct Synthetic {
  AccessTrace trace;
  dataflow::RouteMask mask;  // layers x (context + steps) tokens
};

Synthetic make_synthetic(const SyntheticSpec& spec);

}  // namespace opusim::kvsim
