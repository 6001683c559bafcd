#include "opusim/dataflow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace opusim::dataflow {

namespace {

using numerics::Fp16Bits;
using numerics::PeStats;

constexpr double kMaskedWide = -std::numeric_limits<double>::max();
constexpr double kMaskedDev = -65504.0;  // most negative finite float16

Fp16Bits ingest(double v, PeStats* st) {
  return numerics::encode_saturating(v, st);
}

double dev_round(double v, PeStats* st) { return ingest(v, st).to_double(); }

std::vector<Fp16Bits> ingest_span(const double* p, int n, PeStats* st) {
  std::vector<Fp16Bits> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[std::size_t(i)] = ingest(p[i], st);
  return out;
}

void merge(PeStats& into, const PeStats& s) {
  into.subnormal_flushes += s.subnormal_flushes;
  into.saturations += s.saturations;
  into.multiplies += s.multiplies;
}

}  // namespace

double silu(double z) { return z / (1.0 + std::exp(-z)); }

// ---- projection ---------------------------------------------------------

Mat project(const Mat& x, const Mat& w, int k_tile, EvalContext& ec) {
  if (x.cols != w.rows)
    throw std::invalid_argument("project: inner dimensions differ");
  if (k_tile <= 0) throw std::invalid_argument("project: k_tile not positive");
  const int t = x.rows, k = x.cols, n = w.cols;
  Mat y(t, n);

  if (ec.mode == EvalMode::wide) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int t0 = 0; t0 < k; t0 += k_tile) {
          const int te = std::min(k, t0 + k_tile);
          double part = 0.0;
          for (int kk = t0; kk < te; ++kk) part += x.at(i, kk) * w.at(kk, j);
          acc += part;
        }
        y.at(i, j) = acc;
      }
    return y;
  }

  if (ec.pe.mode != numerics::PeMode::fp16)
    throw std::invalid_argument("project: device path expects fp16 weights");
  PeStats enc;
  std::vector<std::vector<Fp16Bits>> wc(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    wc[std::size_t(j)].resize(std::size_t(k));
    for (int kk = 0; kk < k; ++kk)
      wc[std::size_t(j)][std::size_t(kk)] = ingest(w.at(kk, j), &enc);
  }
  PeStats total;
#pragma omp parallel
  {
    PeStats local;
#pragma omp for schedule(static)
    for (int i = 0; i < t; ++i) {
      std::vector<Fp16Bits> xr = ingest_span(x.row(i), k, &local);
      int j = 0;
      for (; j + 1 < n; j += 2) {
        auto [ya, yb] = numerics::pe_dot_pair(
            xr.data(), wc[std::size_t(j)].data(), wc[std::size_t(j) + 1].data(),
            std::size_t(k), ec.pe, &local);
        y.at(i, j) = ya.to_double();
        y.at(i, j + 1) = yb.to_double();
      }
      if (j < n)
        y.at(i, j) = numerics::pe_dot(xr.data(), wc[std::size_t(j)].data(),
                                      std::size_t(k), ec.pe, &local)
                         .to_double();
    }
#pragma omp critical
    merge(total, local);
  }
  merge(ec.pe_stats, enc);
  merge(ec.pe_stats, total);
  return y;
}

// ---- fused router + normalization ---------------------------------------

bool route_decision(double logit_skip, double logit_execute,
                    const RouterConfig& rc, uint64_t row) {
  double a = logit_skip + rc.bias_skip;
  double b = logit_execute + rc.bias_execute;
  if (rc.sampled) {
    Rng g(Rng::mix(rc.seed, rc.row_base + row));
    a += g.gumbel();
    b += g.gumbel();
  }
  return b >= a;  // ties go to execution
}

RouterResult fused_router_norm(Mat& x, const Mat& wr, const NormParams& np,
                               const RouterConfig& rc, int d_tile,
                               EvalContext& ec) {
  const int t = x.rows, d = x.cols;
  if (wr.rows != d || wr.cols != 2)
    throw std::invalid_argument("fused_router_norm: wr must be D x 2");
  if (d_tile <= 0)
    throw std::invalid_argument("fused_router_norm: d_tile not positive");
  if (!np.gain.empty() && int(np.gain.size()) != d)
    throw std::invalid_argument("fused_router_norm: gain length mismatch");

  RouterResult rr;
  rr.logits = Mat(t, 2);
  rr.mu.assign(std::size_t(t), 0.0);
  rr.sigma.assign(std::size_t(t), 0.0);
  rr.execute.assign(std::size_t(t), 0);

  const int tiles_per_row = (d + d_tile - 1) / d_tile;
  PeStats total;

  if (ec.mode == EvalMode::wide) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < t; ++i) {
      // One pass: logit accumulators and moment sums advance together.
      double l0 = 0.0, l1 = 0.0, s1 = 0.0, s2 = 0.0;
      for (int t0 = 0; t0 < d; t0 += d_tile) {
        const int te = std::min(d, t0 + d_tile);
        double p0 = 0.0, p1 = 0.0, ps = 0.0, ps2 = 0.0;
        for (int dd = t0; dd < te; ++dd) {
          const double v = x.at(i, dd);
          p0 += v * wr.at(dd, 0);
          p1 += v * wr.at(dd, 1);
          ps += v;
          ps2 += v * v;
        }
        l0 += p0;
        l1 += p1;
        s1 += ps;
        s2 += ps2;
      }
      rr.logits.at(i, 0) = l0;
      rr.logits.at(i, 1) = l1;
      const double mu = np.subtract_mean ? s1 / d : 0.0;
      rr.mu[std::size_t(i)] = mu;
      rr.sigma[std::size_t(i)] =
          std::sqrt(std::max(s2 / d - mu * mu, 0.0) + np.eps);
    }
  } else {
    PeStats enc;
    std::vector<Fp16Bits> w0(static_cast<std::size_t>(d));
    std::vector<Fp16Bits> w1(static_cast<std::size_t>(d));
    for (int dd = 0; dd < d; ++dd) {
      w0[std::size_t(dd)] = ingest(wr.at(dd, 0), &enc);
      w1[std::size_t(dd)] = ingest(wr.at(dd, 1), &enc);
    }
    merge(total, enc);
#pragma omp parallel
    {
      PeStats local;
#pragma omp for schedule(static)
      for (int i = 0; i < t; ++i) {
        std::vector<Fp16Bits> xr = ingest_span(x.row(i), d, &local);
        auto [la, lb] = numerics::pe_dot_pair(xr.data(), w0.data(), w1.data(),
                                              std::size_t(d), ec.pe, &local);
        float fs = 0.0f, fs2 = 0.0f;
        for (int dd = 0; dd < d; ++dd) {
          const float v = float(xr[std::size_t(dd)].to_double());
          fs += v;
          fs2 += v * v;
        }
        rr.logits.at(i, 0) = la.to_double();
        rr.logits.at(i, 1) = lb.to_double();
        const float muf = np.subtract_mean ? fs / float(d) : 0.0f;
        const float varf = std::max(fs2 / float(d) - muf * muf, 0.0f);
        rr.mu[std::size_t(i)] = double(muf);
        rr.sigma[std::size_t(i)] = double(std::sqrt(varf + float(np.eps)));
      }
#pragma omp critical
      merge(total, local);
    }
  }

  for (int i = 0; i < t; ++i)
    rr.execute[std::size_t(i)] =
        route_decision(rr.logits.at(i, 0), rr.logits.at(i, 1), rc, uint64_t(i))
            ? 1
            : 0;

  // Selected rows only, written back into the same storage.
  uint64_t inplace = 0;
  PeStats norm_total;
#pragma omp parallel reduction(+ : inplace)
  {
    PeStats local;
#pragma omp for schedule(static)
    for (int i = 0; i < t; ++i) {
      if (!rr.execute[std::size_t(i)]) continue;
      ++inplace;
      const double mu = rr.mu[std::size_t(i)];
      const double sg = rr.sigma[std::size_t(i)];
      for (int dd = 0; dd < d; ++dd) {
        const double g = np.gain.empty() ? 1.0 : np.gain[std::size_t(dd)];
        if (ec.mode == EvalMode::wide) {
          x.at(i, dd) = (x.at(i, dd) - mu) / sg * g;
        } else {
          const float xv = float(ingest(x.at(i, dd), &local).to_double());
          const float gv = float(ingest(g, &local).to_double());
          const float nv = (xv - float(mu)) / float(sg) * gv;
          x.at(i, dd) = dev_round(double(nv), &local);
        }
      }
    }
#pragma omp critical
    merge(norm_total, local);
  }
  merge(total, norm_total);
  merge(ec.pe_stats, total);

  if (ec.probes) {
    ec.probes->router_tile_passes += uint64_t(t) * uint64_t(tiles_per_row);
    ec.probes->norm_inplace_rows += inplace;
  }
  return rr;
}

// ---- fused attention -----------------------------------------------------

namespace {

struct TileRec {
  std::vector<double> s;  // spilled scores (device: float16-rounded)
  int writes = 0;
  int reads = 0;
};

}  // namespace

Mat fused_attention(const Mat& q, const Mat& k, const Mat& v,
                    const AttnConfig& cfg, EvalContext& ec) {
  const int h = cfg.heads;
  if (h <= 0 || q.cols % h != 0)
    throw std::invalid_argument("fused_attention: bad head count");
  const int dh = q.cols / h;
  if (k.cols != q.cols || v.cols != q.cols || k.rows != v.rows)
    throw std::invalid_argument("fused_attention: shape mismatch");
  if (cfg.kv_tile <= 0)
    throw std::invalid_argument("fused_attention: kv_tile not positive");
  const int t = q.rows, s = k.rows;
  if (!cfg.q_pos.empty() && int(cfg.q_pos.size()) != t)
    throw std::invalid_argument("fused_attention: q_pos length mismatch");
  if (!cfg.kv_pos.empty() && int(cfg.kv_pos.size()) != s)
    throw std::invalid_argument("fused_attention: kv_pos length mismatch");

  const bool device = ec.mode == EvalMode::device;
  const double scale = 1.0 / std::sqrt(double(dh));
  const double masked = device ? kMaskedDev : kMaskedWide;
  const int tiles = (s + cfg.kv_tile - 1) / cfg.kv_tile;

  auto qpos = [&](int i) { return cfg.q_pos.empty() ? i : cfg.q_pos[std::size_t(i)]; };
  auto kpos = [&](int j) { return cfg.kv_pos.empty() ? j : cfg.kv_pos[std::size_t(j)]; };

  Mat out(t, q.cols);
  uint64_t p_writes = 0, p_reads = 0, p_viol = 0, p_live = 0, p_rows = 0,
           p_masked = 0;
  PeStats total;

  for (int hp = 0; hp < h; hp += 2) {
    const int npair = std::min(2, h - hp);
    std::vector<TileRec> arena(std::size_t(npair) * std::size_t(t) *
                               std::size_t(tiles));
    auto slot = [&](int hl, int i, int tile) -> TileRec& {
      return arena[(std::size_t(hl) * std::size_t(t) + std::size_t(i)) *
                       std::size_t(tiles) +
                   std::size_t(tile)];
    };
    // Inter-pass state per query row: running max and softmax denominator.
    std::vector<double> run_m(std::size_t(npair) * std::size_t(t), masked);
    std::vector<double> run_l(std::size_t(npair) * std::size_t(t), 0.0);

    // Device operand caches for this head pair, rounded once.
    std::vector<std::vector<Fp16Bits>> qe, ke;
    if (device) {
      PeStats enc;
      qe.resize(std::size_t(npair) * std::size_t(t));
      ke.resize(std::size_t(npair) * std::size_t(s));
      for (int hl = 0; hl < npair; ++hl) {
        const int off = (hp + hl) * dh;
        for (int i = 0; i < t; ++i)
          qe[std::size_t(hl) * std::size_t(t) + std::size_t(i)] =
              ingest_span(q.row(i) + off, dh, &enc);
        for (int j = 0; j < s; ++j)
          ke[std::size_t(hl) * std::size_t(s) + std::size_t(j)] =
              ingest_span(k.row(j) + off, dh, &enc);
      }
      merge(total, enc);
    }

    // Pass 1: stream KV tiles, score, spill, fold into (max, denom).
#pragma omp parallel
    {
      PeStats local;
#pragma omp for schedule(static) collapse(2)
      for (int hl = 0; hl < npair; ++hl)
        for (int i = 0; i < t; ++i) {
          const int head_off = (hp + hl) * dh;
          const std::size_t ri = std::size_t(hl) * std::size_t(t) + std::size_t(i);
          for (int tile = 0; tile < tiles; ++tile) {
            const int j0 = tile * cfg.kv_tile;
            const int je = std::min(s, j0 + cfg.kv_tile);
            TileRec& rec = slot(hl, i, tile);
            rec.s.resize(std::size_t(je - j0));
            for (int j = j0; j < je; ++j) {
              double sv;
              if (cfg.causal && kpos(j) > qpos(i)) {
                sv = masked;
              } else if (device) {
                const Fp16Bits* qr = qe[ri].data();
                const Fp16Bits* kr =
                    ke[std::size_t(hl) * std::size_t(s) + std::size_t(j)].data();
                const double dot =
                    numerics::pe_dot(qr, kr, std::size_t(dh), ec.pe, &local)
                        .to_double();
                sv = dev_round(double(float(scale) * float(dot)), &local);
              } else {
                double dot = 0.0;
                for (int dd = 0; dd < dh; ++dd)
                  dot += q.at(i, head_off + dd) * k.at(j, head_off + dd);
                sv = scale * dot;
              }
              rec.s[std::size_t(j - j0)] = sv;
            }
            rec.writes += 1;

            // Online fold over this tile's unmasked entries.
            double tile_max = masked;
            for (double sv : rec.s)
              if (sv != masked) tile_max = std::max(tile_max, sv);
            if (tile_max == masked) continue;
            if (device) {
              const float mo = float(run_m[ri]);
              const float mn = run_l[ri] > 0.0
                                   ? std::max(mo, float(tile_max))
                                   : float(tile_max);
              float add = 0.0f;
              for (double sv : rec.s)
                if (sv != masked) add += std::exp(float(sv) - mn);
              const float carried =
                  run_l[ri] > 0.0 ? float(run_l[ri]) * std::exp(mo - mn) : 0.0f;
              run_m[ri] = double(mn);
              run_l[ri] = double(carried + add);
            } else {
              const double mo = run_m[ri];
              const double mn =
                  run_l[ri] > 0.0 ? std::max(mo, tile_max) : tile_max;
              double add = 0.0;
              for (double sv : rec.s)
                if (sv != masked) add += std::exp(sv - mn);
              const double carried =
                  run_l[ri] > 0.0 ? run_l[ri] * std::exp(mo - mn) : 0.0;
              run_m[ri] = mn;
              run_l[ri] = carried + add;
            }
          }
        }
#pragma omp critical
      merge(total, local);
    }

    // Pass 2: read every spilled tile back once, weight V, accumulate.
#pragma omp parallel reduction(+ : p_masked)
    {
      PeStats local;
#pragma omp for schedule(static) collapse(2)
      for (int hl = 0; hl < npair; ++hl)
        for (int i = 0; i < t; ++i) {
          const int head_off = (hp + hl) * dh;
          const std::size_t ri = std::size_t(hl) * std::size_t(t) + std::size_t(i);
          const bool dead = run_l[ri] <= 0.0;
          if (dead) ++p_masked;
          std::vector<double> acc(std::size_t(dh), 0.0);
          for (int tile = 0; tile < tiles; ++tile) {
            const int j0 = tile * cfg.kv_tile;
            TileRec& rec = slot(hl, i, tile);
            rec.reads += 1;
            if (dead) continue;
            for (std::size_t jj = 0; jj < rec.s.size(); ++jj) {
              const double sv = rec.s[jj];
              if (sv == masked) continue;
              const int j = j0 + int(jj);
              if (device) {
                const float p =
                    std::exp(float(sv) - float(run_m[ri])) / float(run_l[ri]);
                for (int dd = 0; dd < dh; ++dd) {
                  const float vv = float(
                      ingest(v.at(j, head_off + dd), &local).to_double());
                  acc[std::size_t(dd)] =
                      double(float(acc[std::size_t(dd)]) + p * vv);
                }
              } else {
                const double p = std::exp(sv - run_m[ri]) / run_l[ri];
                for (int dd = 0; dd < dh; ++dd)
                  acc[std::size_t(dd)] += p * v.at(j, head_off + dd);
              }
            }
          }
          for (int dd = 0; dd < dh; ++dd)
            out.at(i, head_off + dd) =
                device ? dev_round(acc[std::size_t(dd)], &local)
                       : acc[std::size_t(dd)];
        }
#pragma omp critical
      merge(total, local);
    }

    for (const TileRec& rec : arena) {
      p_writes += uint64_t(rec.writes);
      p_reads += uint64_t(rec.reads);
      if (rec.writes != 1 || rec.reads != 1) ++p_viol;
    }
    p_live = std::max(p_live, uint64_t(arena.size()));
    p_rows += 2u * uint64_t(s);  // K stream in pass 1, V stream in pass 2
  }

  merge(ec.pe_stats, total);
  if (ec.probes) {
    ec.probes->s_tile_writes += p_writes;
    ec.probes->s_tile_reads += p_reads;
    ec.probes->s_tile_violations += p_viol;
    ec.probes->s_tile_peak_live = std::max(ec.probes->s_tile_peak_live, p_live);
    ec.probes->kv_pass_rows += p_rows;
    ec.probes->masked_rows += p_masked;
  }
  return out;
}

// ---- pointwise stages ----------------------------------------------------

void rope_apply(Mat& x, int heads, const std::vector<int>& pos, double base,
                EvalContext& ec) {
  if (heads <= 0 || x.cols % heads != 0)
    throw std::invalid_argument("rope_apply: bad head count");
  const int dh = x.cols / heads;
  if (dh % 2 != 0)
    throw std::invalid_argument("rope_apply: head dim must be even");
  if (int(pos.size()) != x.rows)
    throw std::invalid_argument("rope_apply: position count mismatch");
  const bool device = ec.mode == EvalMode::device;
  PeStats total;
#pragma omp parallel
  {
    PeStats local;
#pragma omp for schedule(static)
    for (int i = 0; i < x.rows; ++i)
      for (int hh = 0; hh < heads; ++hh)
        for (int p = 0; p < dh / 2; ++p) {
          const double theta =
              double(pos[std::size_t(i)]) * std::pow(base, -2.0 * p / dh);
          const int c0 = hh * dh + 2 * p;
          const double a = x.at(i, c0), b = x.at(i, c0 + 1);
          if (device) {
            const float af = float(ingest(a, &local).to_double());
            const float bf = float(ingest(b, &local).to_double());
            const float cf = float(std::cos(theta)), sf = float(std::sin(theta));
            x.at(i, c0) = dev_round(double(af * cf - bf * sf), &local);
            x.at(i, c0 + 1) = dev_round(double(af * sf + bf * cf), &local);
          } else {
            const double c = std::cos(theta), sn = std::sin(theta);
            x.at(i, c0) = a * c - b * sn;
            x.at(i, c0 + 1) = a * sn + b * c;
          }
        }
#pragma omp critical
    merge(total, local);
  }
  merge(ec.pe_stats, total);
}

void swiglu_inplace(Mat& gate, const Mat& up, EvalContext& ec) {
  if (gate.rows != up.rows || gate.cols != up.cols)
    throw std::invalid_argument("swiglu_inplace: shape mismatch");
  const bool device = ec.mode == EvalMode::device;
  PeStats total;
#pragma omp parallel
  {
    PeStats local;
#pragma omp for schedule(static)
    for (int i = 0; i < gate.rows; ++i)
      for (int j = 0; j < gate.cols; ++j) {
        const double g = gate.at(i, j), u = up.at(i, j);
        if (device) {
          const float gf = float(ingest(g, &local).to_double());
          const float uf = float(ingest(u, &local).to_double());
          const float r = gf / (1.0f + std::exp(-gf)) * uf;
          gate.at(i, j) = dev_round(double(r), &local);
        } else {
          gate.at(i, j) = silu(g) * u;
        }
      }
#pragma omp critical
    merge(total, local);
  }
  merge(ec.pe_stats, total);
}

}  // namespace opusim::dataflow
