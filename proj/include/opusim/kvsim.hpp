#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "opusim/trace.hpp"

// Cycle-approximate model of KV-cache traffic over a multi-port HBM stack.
//
// Per (step, layer) unit, every needed entry is served by its home port.
// Entries whose provenance equals the current layer stream from the
// layer's region; entries with earlier provenance are random excursions
// that own their whole channel while in flight.  An optional on-chip reuse
// buffer retains entries the lookahead marks as identical next layer, so
// they never touch HBM again; its read/write ports bound what one
// scheduling round may carry.

namespace opusim::kvsim {

struct HbmConfig {
  int ports = 16;
  int channels = 8;  // ports sharing a channel contend on excursions
  int port_width_bits = 512;
  double freq_mhz = 450.0;
  int page_beats = 128;  // 8 KiB pages at 512-bit beats
  // One page activation; the single calibrated parameter.
  double page_miss_penalty_cycles = 16.3;
  // Fixed cost of starting a discontiguous burst; structural, never
  // calibrated.
  double burst_setup_cycles = 12.0;

  double peak_gbps() const;
  int ports_per_channel() const { return ports / channels; }
  int channel_of(int port) const { return port / ports_per_channel(); }
};

struct KvGeometry {
  int dim = 4096;        // model width
  int dtype_bits = 16;   // stored element width

  int span_beats(const HbmConfig& h) const;   // one K or V vector
  int entry_beats(const HbmConfig& h) const;  // K + V
  int entry_pages(const HbmConfig& h) const;
  uint64_t entry_bytes() const;
};

enum class MapPolicy { interleave, block };

struct BufferConfig {
  bool enabled = false;
  int capacity_tokens = 1024;
  int read_ports = 16;
  int write_ports = 16;
};

struct KvSimConfig {
  HbmConfig hbm;
  KvGeometry geom;
  MapPolicy policy = MapPolicy::interleave;
  int block_tokens = 64;  // tokens per port under the block policy
  BufferConfig buffer;
  bool charge_decode_writes = true;

  int port_of(uint32_t token) const;
};

// ---- round scheduling ----------------------------------------------------

struct FetchOp {
  uint32_t token = 0;
  int port = 0;
  int prov = 0;         // layer region the entry lives in
  bool cross = false;   // provenance below the current layer
  bool retain = false;  // fetched data is written into the reuse buffer
};

struct Round {
  std::vector<int> fetch_ids;  // indices into the unit's fetch list
  int buffer_reads = 0;
};

// Greedy construction honoring: at most one fetch per port per round, a
// cross fetch alone on its channel, buffer reads capped by read ports,
// retained fetches capped by write ports.
std::vector<Round> schedule_rounds(const std::vector<FetchOp>& fetches,
                                   int buffer_reads, const KvSimConfig& cfg);

// Independent legality check: every fetch placed exactly once, every cap
// honored.  Returns an empty string when legal.
std::string check_rounds(const std::vector<FetchOp>& fetches, int buffer_reads,
                         const std::vector<Round>& rounds,
                         const KvSimConfig& cfg);

// ---- simulation ----------------------------------------------------------

struct BandwidthReport {
  double hbm_util_pct = 0.0;        // HBM beats over port-cycles
  double aggregate_util_pct = 0.0;  // HBM + buffer beats over port-cycles
  double achieved_gbps = 0.0;
  double peak_gbps = 0.0;
  double cycles = 0.0;
  uint64_t hbm_read_bytes = 0;
  uint64_t hbm_write_bytes = 0;
  uint64_t buffer_bytes = 0;
  uint64_t needed_entries = 0;
  uint64_t buffer_hits = 0;
  uint64_t evictions = 0;
  uint64_t rounds = 0;
  uint64_t max_round_fetches = 0;
  uint64_t max_round_reads = 0;
  uint64_t units_attended = 0;
};

BandwidthReport run_kvsim(const AccessTrace& trace, const KvSimConfig& cfg);

// Replays the trace through the round scheduler and the independent
// legality check; returns the first violation ("" when clean).
std::string verify_rounds_over_trace(const AccessTrace& trace,
                                     const KvSimConfig& cfg);

// Bisect page_miss_penalty_cycles until the trace's utilization meets the
// target; returns the penalty (monotone decreasing in the penalty).
double calibrate_page_penalty(const AccessTrace& trace, KvSimConfig cfg,
                              double target_util_pct, double tol_pct = 0.02);

}  // namespace opusim::kvsim
