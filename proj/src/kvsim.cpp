#include "opusim/kvsim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

namespace opusim::kvsim {

double HbmConfig::peak_gbps() const {
  return double(ports) * (port_width_bits / 8.0) * freq_mhz * 1e6 / 1e9;
}

int KvGeometry::span_beats(const HbmConfig& h) const {
  return dim * dtype_bits / h.port_width_bits;
}

int KvGeometry::entry_beats(const HbmConfig& h) const {
  return 2 * span_beats(h);
}

int KvGeometry::entry_pages(const HbmConfig& h) const {
  return (entry_beats(h) + h.page_beats - 1) / h.page_beats;
}

uint64_t KvGeometry::entry_bytes() const {
  return 2ull * uint64_t(dim) * uint64_t(dtype_bits) / 8u;
}

int KvSimConfig::port_of(uint32_t token) const {
  if (policy == MapPolicy::interleave) return int(token % uint32_t(hbm.ports));
  return int((token / uint32_t(block_tokens)) % uint32_t(hbm.ports));
}

namespace {

void validate(const KvSimConfig& cfg) {
  const HbmConfig& h = cfg.hbm;
  if (h.ports <= 0 || h.channels <= 0 || h.ports % h.channels != 0)
    throw std::invalid_argument("kvsim: ports must divide evenly by channels");
  if (h.port_width_bits <= 0 || h.page_beats <= 0 || h.freq_mhz <= 0)
    throw std::invalid_argument("kvsim: bad HBM geometry");
  if (h.page_miss_penalty_cycles < 0 || h.burst_setup_cycles < 0)
    throw std::invalid_argument("kvsim: negative cost constant");
  if ((cfg.geom.dim * cfg.geom.dtype_bits) % h.port_width_bits != 0)
    throw std::invalid_argument("kvsim: entry not beat-aligned");
  if (cfg.policy == MapPolicy::block && cfg.block_tokens <= 0)
    throw std::invalid_argument("kvsim: block_tokens must be positive");
  if (cfg.buffer.enabled &&
      (cfg.buffer.read_ports <= 0 || cfg.buffer.write_ports <= 0 ||
       cfg.buffer.capacity_tokens <= 0))
    throw std::invalid_argument("kvsim: bad buffer configuration");
}

// Fetch list for one attended unit given the current buffer contents.
std::vector<FetchOp> unit_fetches(const TraceUnit& u, const KvSimConfig& cfg,
                                  const std::unordered_map<uint32_t, int>& buf,
                                  bool buf_valid, int* hits_out) {
  std::vector<FetchOp> fetches;
  int hits = 0;
  for (const TraceEntry& e : u.needed) {
    auto it = buf.end();
    if (cfg.buffer.enabled && buf_valid) it = buf.find(e.token);
    if (it != buf.end() && it->second == e.prov) {
      ++hits;
      continue;
    }
    FetchOp f;
    f.token = e.token;
    f.port = cfg.port_of(e.token);
    f.prov = e.prov;
    f.cross = e.prov < u.layer;
    f.retain = cfg.buffer.enabled && !u.lookahead_bit(e.token);
    fetches.push_back(f);
  }
  *hits_out = hits;
  return fetches;
}

// Retain exactly the entries the lookahead marks as reused, evicting the
// oldest provenance first when over capacity.
void update_buffer(const TraceUnit& u, const KvSimConfig& cfg,
                   std::unordered_map<uint32_t, int>& buf, bool& buf_valid,
                   uint64_t* evictions) {
  std::vector<std::pair<uint32_t, int>> keep;
  for (const TraceEntry& e : u.needed)
    if (!u.lookahead_bit(e.token)) keep.emplace_back(e.token, e.prov);
  if (int(keep.size()) > cfg.buffer.capacity_tokens) {
    std::sort(keep.begin(), keep.end(), [](const auto& x, const auto& y) {
      if (x.second != y.second) return x.second < y.second;
      return x.first < y.first;
    });
    const std::size_t drop =
        keep.size() - std::size_t(cfg.buffer.capacity_tokens);
    if (evictions) *evictions += drop;
    keep.erase(keep.begin(), keep.begin() + std::ptrdiff_t(drop));
  }
  buf.clear();
  for (const auto& [tok, prov] : keep) buf[tok] = prov;
  buf_valid = true;
}

}  // namespace

std::vector<Round> schedule_rounds(const std::vector<FetchOp>& fetches,
                                   int buffer_reads, const KvSimConfig& cfg) {
  std::vector<int> order(fetches.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const FetchOp& fa = fetches[std::size_t(a)];
    const FetchOp& fb = fetches[std::size_t(b)];
    if (fa.cross != fb.cross) return fa.cross;  // excursions claim channels first
    if (fa.port != fb.port) return fa.port < fb.port;
    return fa.token < fb.token;
  });

  enum { kEmpty = 0, kLocal = 1, kClosed = 2 };
  std::vector<char> placed(fetches.size(), 0);
  std::size_t remaining = fetches.size();
  int reads_left = buffer_reads;
  std::vector<Round> rounds;

  while (remaining > 0 || reads_left > 0) {
    Round r;
    std::vector<int> chan(std::size_t(cfg.hbm.channels), kEmpty);
    std::vector<char> port_used(std::size_t(cfg.hbm.ports), 0);
    int writes = 0;
    for (int id : order) {
      if (placed[std::size_t(id)]) continue;
      const FetchOp& f = fetches[std::size_t(id)];
      if (port_used[std::size_t(f.port)]) continue;
      const int c = cfg.hbm.channel_of(f.port);
      if (f.cross ? chan[std::size_t(c)] != kEmpty
                  : chan[std::size_t(c)] == kClosed)
        continue;
      if (f.retain && writes >= cfg.buffer.write_ports) continue;
      r.fetch_ids.push_back(id);
      placed[std::size_t(id)] = 1;
      --remaining;
      port_used[std::size_t(f.port)] = 1;
      chan[std::size_t(c)] = f.cross ? kClosed : kLocal;
      if (f.retain) ++writes;
    }
    if (reads_left > 0) {
      r.buffer_reads = std::min(reads_left, cfg.buffer.read_ports);
      reads_left -= r.buffer_reads;
    }
    if (r.fetch_ids.empty() && r.buffer_reads == 0)
      throw std::logic_error("schedule_rounds: no progress");
    rounds.push_back(std::move(r));
  }
  return rounds;
}

std::string check_rounds(const std::vector<FetchOp>& fetches, int buffer_reads,
                         const std::vector<Round>& rounds,
                         const KvSimConfig& cfg) {
  std::vector<int> served(fetches.size(), 0);
  int reads_total = 0;
  for (std::size_t ri = 0; ri < rounds.size(); ++ri) {
    const Round& r = rounds[ri];
    std::vector<int> port_n(std::size_t(cfg.hbm.ports), 0);
    std::vector<int> chan_n(std::size_t(cfg.hbm.channels), 0);
    std::vector<int> chan_cross(std::size_t(cfg.hbm.channels), 0);
    int writes = 0;
    for (int id : r.fetch_ids) {
      if (id < 0 || id >= int(fetches.size()))
        return "round " + std::to_string(ri) + ": fetch id out of range";
      served[std::size_t(id)] += 1;
      const FetchOp& f = fetches[std::size_t(id)];
      if (++port_n[std::size_t(f.port)] > 1)
        return "round " + std::to_string(ri) + ": port " +
               std::to_string(f.port) + " used twice";
      const int c = cfg.hbm.channel_of(f.port);
      chan_n[std::size_t(c)] += 1;
      chan_cross[std::size_t(c)] += f.cross ? 1 : 0;
      if (f.retain) ++writes;
    }
    for (int c = 0; c < cfg.hbm.channels; ++c)
      if (chan_cross[std::size_t(c)] > 0 && chan_n[std::size_t(c)] > 1)
        return "round " + std::to_string(ri) + ": excursion shares channel " +
               std::to_string(c);
    if (writes > cfg.buffer.write_ports)
      return "round " + std::to_string(ri) + ": " + std::to_string(writes) +
             " retained fetches exceed write ports";
    if (r.buffer_reads < 0 || r.buffer_reads > cfg.buffer.read_ports)
      return "round " + std::to_string(ri) + ": buffer reads exceed read ports";
    reads_total += r.buffer_reads;
  }
  for (std::size_t i = 0; i < served.size(); ++i)
    if (served[i] != 1)
      return "fetch " + std::to_string(i) + " served " +
             std::to_string(served[i]) + " times";
  if (reads_total != buffer_reads)
    return "buffer reads scheduled " + std::to_string(reads_total) + " of " +
           std::to_string(buffer_reads);
  return "";
}

std::string verify_rounds_over_trace(const AccessTrace& trace,
                                     const KvSimConfig& cfg) {
  validate(cfg);
  std::unordered_map<uint32_t, int> buf;
  bool buf_valid = false;
  for (const TraceUnit& u : trace.units) {
    if (!u.attend) {
      buf.clear();
      buf_valid = false;
      continue;
    }
    int hits = 0;
    const std::vector<FetchOp> fetches =
        unit_fetches(u, cfg, buf, buf_valid, &hits);
    const std::vector<Round> rounds = schedule_rounds(fetches, hits, cfg);
    const std::string err = check_rounds(fetches, hits, rounds, cfg);
    if (!err.empty())
      return "step " + std::to_string(u.step) + " layer " +
             std::to_string(u.layer) + ": " + err;
    if (cfg.buffer.enabled) update_buffer(u, cfg, buf, buf_valid, nullptr);
  }
  return "";
}

BandwidthReport run_kvsim(const AccessTrace& trace, const KvSimConfig& cfg) {
  validate(cfg);
  const int ports = cfg.hbm.ports;
  const double p = cfg.hbm.page_miss_penalty_cycles;
  const double b = cfg.hbm.burst_setup_cycles;
  const double eb = double(cfg.geom.entry_beats(cfg.hbm));
  const double stream_cost = eb + cfg.geom.entry_pages(cfg.hbm) * p;
  // Without staging the consumer needs entries in token order, so every
  // cross-layer entry is a lone excursion: jump out, stream, jump back,
  // holding the whole channel for the duration.
  const double cross_cost = stream_cost + 2.0 * (p + b);
  const uint64_t ebytes = cfg.geom.entry_bytes();
  const int ppc = cfg.hbm.ports_per_channel();
  const uint32_t stride =
      cfg.policy == MapPolicy::interleave ? uint32_t(ports) : 1u;

  BandwidthReport rep;
  std::unordered_map<uint32_t, int> buf;  // token -> provenance held
  bool buf_valid = false;

  // With the reuse buffer on, consecutive attended layers pool their
  // per-port busy time: lookahead lets an early-finishing port prefetch
  // into the next layer instead of idling at the unit barrier.
  std::vector<double> pool(std::size_t(ports), 0.0);
  double pool_floor = 0.0;
  bool pooling = false;
  double cycles = 0.0;
  auto close_stretch = [&]() {
    if (!pooling) return;
    double mx = 0.0;
    for (double v : pool) mx = std::max(mx, v);
    cycles += std::max(mx, pool_floor);
    std::fill(pool.begin(), pool.end(), 0.0);
    pool_floor = 0.0;
    pooling = false;
  };

  int prev_step = trace.units.empty() ? 0 : trace.units.front().step;
  std::vector<std::vector<uint32_t>> locals(static_cast<std::size_t>(ports));
  std::vector<std::vector<std::pair<int, uint32_t>>> xbatch(
      static_cast<std::size_t>(ports));

  for (const TraceUnit& u : trace.units) {
    if (u.step != prev_step) {
      close_stretch();
      prev_step = u.step;
    }
    if (!u.attend) {
      // Skipped layer: nothing fetched, retained contents go stale.  The
      // address streams of later layers stay known, so prefetch pooling
      // continues across the bubble; only the contents are lost.
      buf.clear();
      buf_valid = false;
      continue;
    }
    rep.units_attended += 1;

    int hits = 0;
    const std::vector<FetchOp> fetches =
        unit_fetches(u, cfg, buf, buf_valid, &hits);
    rep.needed_entries += u.needed.size();
    rep.buffer_hits += uint64_t(hits);
    rep.hbm_read_bytes += uint64_t(fetches.size()) * ebytes;
    rep.buffer_bytes += uint64_t(hits) * ebytes;

    const std::vector<Round> rounds = schedule_rounds(fetches, hits, cfg);
    rep.rounds += rounds.size();
    for (const Round& r : rounds) {
      rep.max_round_fetches =
          std::max(rep.max_round_fetches, uint64_t(r.fetch_ids.size()));
      rep.max_round_reads =
          std::max(rep.max_round_reads, uint64_t(r.buffer_reads));
    }

    // Per-port pipelined busy time for this unit.
    std::vector<double> busy(std::size_t(ports), 0.0);
    for (auto& v : locals) v.clear();
    for (auto& v : xbatch) v.clear();
    for (const FetchOp& f : fetches) {
      if (!f.cross) {
        locals[std::size_t(f.port)].push_back(f.token);
      } else if (cfg.buffer.enabled) {
        xbatch[std::size_t(f.port)].emplace_back(f.prov, f.token);
      } else {
        const int c0 = cfg.hbm.channel_of(f.port) * ppc;
        for (int q = c0; q < c0 + ppc; ++q) busy[std::size_t(q)] += cross_cost;
      }
    }
    // With staging the buffer reorders arrivals into token order, so cross
    // fetches stream region by region on their own port: one jump per
    // region visited instead of one excursion per entry.
    for (int q = 0; q < ports; ++q) {
      auto& runs = xbatch[std::size_t(q)];
      if (runs.empty()) continue;
      std::sort(runs.begin(), runs.end());
      int prev_prov = -1;
      uint32_t prev_tok = 0;
      for (const auto& [prov, tok] : runs) {
        if (prov != prev_prov)
          busy[std::size_t(q)] += p + b;  // region jump
        else if (tok != prev_tok + stride)
          busy[std::size_t(q)] += b;  // gap jump
        busy[std::size_t(q)] += stream_cost;
        prev_prov = prov;
        prev_tok = tok;
      }
    }
    uint32_t max_token = 0;
    bool any_needed = false;
    for (const TraceEntry& e : u.needed) {
      max_token = std::max(max_token, e.token);
      any_needed = true;
    }
    for (int q = 0; q < ports; ++q) {
      auto& toks = locals[std::size_t(q)];
      if (toks.empty()) continue;
      std::sort(toks.begin(), toks.end());
      busy[std::size_t(q)] += b;  // stream start
      uint32_t prev = toks.front();
      busy[std::size_t(q)] += stream_cost;
      for (std::size_t i = 1; i < toks.size(); ++i) {
        if (toks[i] != prev + stride) busy[std::size_t(q)] += b;  // gap jump
        busy[std::size_t(q)] += stream_cost;
        prev = toks[i];
      }
    }
    if (cfg.charge_decode_writes && any_needed) {
      const int wp = cfg.port_of(max_token + 1);
      busy[std::size_t(wp)] += stream_cost + b;
      rep.hbm_write_bytes += ebytes;
    }
    const double floor_c =
        hits > 0 ? std::ceil(double(hits) / cfg.buffer.read_ports) * eb : 0.0;

    if (cfg.buffer.enabled) {
      pooling = true;
      for (int q = 0; q < ports; ++q) pool[std::size_t(q)] += busy[std::size_t(q)];
      pool_floor += floor_c;
    } else {
      double mx = 0.0;
      for (double v : busy) mx = std::max(mx, v);
      cycles += std::max(mx, floor_c);
    }

    if (cfg.buffer.enabled)
      update_buffer(u, cfg, buf, buf_valid, &rep.evictions);
  }
  close_stretch();

  rep.cycles = cycles;
  rep.peak_gbps = cfg.hbm.peak_gbps();
  const double beat_bytes = cfg.hbm.port_width_bits / 8.0;
  const double hbm_beats =
      double(rep.hbm_read_bytes + rep.hbm_write_bytes) / beat_bytes;
  const double buf_beats = double(rep.buffer_bytes) / beat_bytes;
  const double port_cycles = cycles * double(ports);
  if (port_cycles > 0.0) {
    rep.hbm_util_pct = 100.0 * hbm_beats / port_cycles;
    rep.aggregate_util_pct = 100.0 * (hbm_beats + buf_beats) / port_cycles;
    const double seconds = cycles / (cfg.hbm.freq_mhz * 1e6);
    rep.achieved_gbps =
        double(rep.hbm_read_bytes + rep.hbm_write_bytes) / seconds / 1e9;
  }
  return rep;
}

double calibrate_page_penalty(const AccessTrace& trace, KvSimConfig cfg,
                              double target_util_pct, double tol_pct) {
  double lo = 0.0, hi = 512.0;
  // Utilization falls as the penalty grows; bisect.
  for (int it = 0; it < 64; ++it) {
    const double mid = 0.5 * (lo + hi);
    cfg.hbm.page_miss_penalty_cycles = mid;
    const double u = run_kvsim(trace, cfg).hbm_util_pct;
    if (std::fabs(u - target_util_pct) <= tol_pct) return mid;
    if (u > target_util_pct) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace opusim::kvsim
