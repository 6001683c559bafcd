#pragma once

#include <cstdint>
#include <vector>

namespace opusim::dataflow {

// Per (layer, token) record of whether the attention submodule ran.  When a
// token skipped a layer, readers of its KV state substitute the entry from
// the latest earlier layer the token did run.
struct RouteMask {
  int layers = 0;
  int tokens = 0;
  std::vector<uint8_t> exec;

  RouteMask() = default;
  RouteMask(int l, int t)
      : layers(l), tokens(t), exec(std::size_t(l) * std::size_t(t), 1) {}

  bool executed(int l, int t) const {
    return exec[std::size_t(l) * std::size_t(tokens) + std::size_t(t)] != 0;
  }
  void set(int l, int t, bool v) {
    exec[std::size_t(l) * std::size_t(tokens) + std::size_t(t)] = v ? 1 : 0;
  }

  // Latest layer l' <= l where the token ran; -1 when it never has.
  int kv_source_layer(int l, int t) const;

  double skip_fraction() const;      // share of (l, t) pairs skipped
  uint64_t stored_entries() const;   // KV entries actually materialized
};

}  // namespace opusim::dataflow
