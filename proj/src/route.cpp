#include "opusim/route.hpp"

namespace opusim::dataflow {

int RouteMask::kv_source_layer(int l, int t) const {
  for (int ll = l; ll >= 0; --ll)
    if (executed(ll, t)) return ll;
  return -1;
}

double RouteMask::skip_fraction() const {
  if (exec.empty()) return 0.0;
  std::size_t skipped = 0;
  for (uint8_t e : exec) skipped += e ? 0 : 1;
  return double(skipped) / double(exec.size());
}

uint64_t RouteMask::stored_entries() const {
  uint64_t n = 0;
  for (uint8_t e : exec) n += e ? 1 : 0;
  return n;
}

}  // namespace opusim::dataflow
