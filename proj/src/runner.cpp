#include "opusim/runner.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <utility>

namespace opusim::runner {

using dataflow::EvalContext;
using dataflow::Mat;

namespace {

constexpr double kForceExecute = 1e9;  // drowns any logit or noise draw

void check_config(const ModelConfig& mc) {
  if (mc.layers <= 0 || mc.dim <= 0 || mc.heads <= 0 || mc.ffn_dim <= 0)
    throw std::invalid_argument("run_model: bad dimensions");
  if (mc.dim % mc.heads != 0)
    throw std::invalid_argument("run_model: dim must divide into heads");
  if (mc.context <= 0 || mc.decode_steps < 0)
    throw std::invalid_argument("run_model: bad token counts");
}

Mat gather_rows(const Mat& x, const std::vector<int>& idx) {
  Mat out(int(idx.size()), x.cols);
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::memcpy(out.row(int(i)), x.row(idx[i]),
                sizeof(double) * std::size_t(x.cols));
  return out;
}

// Second-stage normalization; same formula the fused router pass applies.
void norm_rows_inplace(Mat& x, const std::vector<double>& gain,
                       bool subtract_mean, double eps) {
  for (int r = 0; r < x.rows; ++r) {
    double* row = x.row(r);
    double s1 = 0.0, s2 = 0.0;
    for (int c = 0; c < x.cols; ++c) {
      s1 += row[c];
      s2 += row[c] * row[c];
    }
    const double mu = subtract_mean ? s1 / x.cols : 0.0;
    const double var = s2 / x.cols - mu * mu;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int c = 0; c < x.cols; ++c) {
      const double g = gain.empty() ? 1.0 : gain[std::size_t(c)];
      row[c] = (row[c] - mu) * inv * g;
    }
  }
}

struct KvCache {
  std::vector<Mat> k, v;  // per layer, tokens x dim; rows valid per mask

  KvCache(int layers, int tokens, int dim)
      : k(std::size_t(layers), Mat(tokens, dim)),
        v(std::size_t(layers), Mat(tokens, dim)) {}
};

// Effective KV seen at layer l: each token's entry from the latest layer
// it actually ran.
void build_effective(const KvCache& kv, const dataflow::RouteMask& mask,
                     int layer, int upto, Mat& ke, Mat& ve) {
  for (int t = 0; t < upto; ++t) {
    const int src = mask.kv_source_layer(layer, t);
    std::memcpy(ke.row(t), kv.k[std::size_t(src)].row(t),
                sizeof(double) * std::size_t(ke.cols));
    std::memcpy(ve.row(t), kv.v[std::size_t(src)].row(t),
                sizeof(double) * std::size_t(ve.cols));
  }
}

struct LayerPass {
  std::vector<int> executed;  // token ids routed to execution
};

// One decoder layer over the block rows [row0, row0 + n) of h, whose
// absolute positions are pos[0..n).  Updates mask, KV cache, hidden rows.
LayerPass layer_forward(Mat& h, int row0, int n, const std::vector<int>& pos,
                        int layer, const ModelConfig& mc,
                        const LayerWeights& lw, dataflow::RouteMask& mask,
                        KvCache& kv, EvalContext& ec) {
  const int total = mc.context + mc.decode_steps;
  Mat block = Mat(n, mc.dim);
  for (int r = 0; r < n; ++r)
    std::memcpy(block.row(r), h.row(row0 + r),
                sizeof(double) * std::size_t(mc.dim));
  const Mat resid = block;

  dataflow::NormParams np;
  np.gain = lw.norm1;
  dataflow::RouterConfig rc;
  rc.bias_execute =
      layer == 0 ? kForceExecute : mc.router_bias_execute;
  rc.sampled = mc.sampled_routing;
  rc.seed = mc.seed;
  rc.row_base = uint64_t(layer) * uint64_t(total) + uint64_t(pos[0]);

  const dataflow::RouterResult rr =
      dataflow::fused_router_norm(block, lw.w_router, np, rc, mc.d_tile, ec);

  LayerPass lp;
  for (int r = 0; r < n; ++r) {
    mask.set(layer, pos[std::size_t(r)], rr.execute[std::size_t(r)] != 0);
    if (rr.execute[std::size_t(r)]) lp.executed.push_back(r);
  }
  if (lp.executed.empty()) return lp;

  std::vector<int> epos;
  for (int r : lp.executed) epos.push_back(pos[std::size_t(r)]);

  // Attention over the thinned cache.
  Mat xe = gather_rows(block, lp.executed);
  Mat q = dataflow::project(xe, lw.wq, mc.d_tile, ec);
  Mat ks = dataflow::project(xe, lw.wk, mc.d_tile, ec);
  Mat vs = dataflow::project(xe, lw.wv, mc.d_tile, ec);
  dataflow::rope_apply(q, mc.heads, epos, mc.rope_base, ec);
  dataflow::rope_apply(ks, mc.heads, epos, mc.rope_base, ec);
  for (std::size_t i = 0; i < lp.executed.size(); ++i) {
    std::memcpy(kv.k[std::size_t(layer)].row(epos[i]), ks.row(int(i)),
                sizeof(double) * std::size_t(mc.dim));
    std::memcpy(kv.v[std::size_t(layer)].row(epos[i]), vs.row(int(i)),
                sizeof(double) * std::size_t(mc.dim));
  }

  const int upto = pos[std::size_t(n - 1)] + 1;  // cache rows visible here
  Mat ke(upto, mc.dim);
  Mat ve(upto, mc.dim);
  build_effective(kv, mask, layer, upto, ke, ve);

  dataflow::AttnConfig ac;
  ac.heads = mc.heads;
  ac.kv_tile = mc.kv_tile;
  ac.q_pos = epos;
  ac.kv_pos.resize(std::size_t(upto));
  for (int t = 0; t < upto; ++t) ac.kv_pos[std::size_t(t)] = t;
  Mat attn = dataflow::fused_attention(q, ke, ve, ac, ec);
  Mat out = dataflow::project(attn, lw.wo, mc.d_tile, ec);

  for (std::size_t i = 0; i < lp.executed.size(); ++i) {
    const int r = lp.executed[i];
    double* dst = h.row(row0 + r);
    const double* rs = resid.row(r);
    const double* os = out.row(int(i));
    for (int c = 0; c < mc.dim; ++c) dst[c] = rs[c] + os[c];
  }
  for (int r = 0; r < n; ++r)
    if (!rr.execute[std::size_t(r)])
      std::memcpy(h.row(row0 + r), resid.row(r),
                  sizeof(double) * std::size_t(mc.dim));

  // Gated FFN on the executed rows.
  Mat xe2 = gather_rows(h, [&] {
    std::vector<int> rows;
    for (int r : lp.executed) rows.push_back(row0 + r);
    return rows;
  }());
  const Mat resid2 = xe2;
  norm_rows_inplace(xe2, lw.norm2, np.subtract_mean, np.eps);
  Mat gate = dataflow::project(xe2, lw.w_gate, mc.d_tile, ec);
  Mat up = dataflow::project(xe2, lw.w_up, mc.d_tile, ec);
  dataflow::swiglu_inplace(gate, up, ec);
  Mat down = dataflow::project(gate, lw.w_down, mc.d_tile, ec);
  for (std::size_t i = 0; i < lp.executed.size(); ++i) {
    double* dst = h.row(row0 + lp.executed[i]);
    const double* rs = resid2.row(int(i));
    const double* ds = down.row(int(i));
    for (int c = 0; c < mc.dim; ++c) dst[c] = rs[c] + ds[c];
  }
  return lp;
}

}  // namespace

ModelWeights make_weights(const ModelConfig& mc) {
  check_config(mc);
  ModelWeights mw;
  const double ws = 1.0 / std::sqrt(double(mc.dim));
  const double fs = 1.0 / std::sqrt(double(mc.ffn_dim));
  for (int l = 0; l < mc.layers; ++l) {
    Rng rng(Rng::mix(mc.seed, 0x57e1u + uint64_t(l)));
    LayerWeights lw;
    lw.wq = dataflow::randn(mc.dim, mc.dim, rng, ws);
    lw.wk = dataflow::randn(mc.dim, mc.dim, rng, ws);
    lw.wv = dataflow::randn(mc.dim, mc.dim, rng, ws);
    lw.wo = dataflow::randn(mc.dim, mc.dim, rng, ws);
    lw.w_gate = dataflow::randn(mc.dim, mc.ffn_dim, rng, ws);
    lw.w_up = dataflow::randn(mc.dim, mc.ffn_dim, rng, ws);
    lw.w_down = dataflow::randn(mc.ffn_dim, mc.dim, rng, fs);
    lw.w_router = dataflow::randn(mc.dim, 2, rng, ws);
    lw.norm1.resize(std::size_t(mc.dim));
    lw.norm2.resize(std::size_t(mc.dim));
    for (int c = 0; c < mc.dim; ++c) {
      lw.norm1[std::size_t(c)] = 1.0 + 0.1 * rng.normal();
      lw.norm2[std::size_t(c)] = 1.0 + 0.1 * rng.normal();
    }
    mw.layers.push_back(std::move(lw));
  }
  return mw;
}

RunResult run_model(const ModelConfig& mc, const ModelWeights& mw) {
  check_config(mc);
  if (int(mw.layers.size()) != mc.layers)
    throw std::invalid_argument("run_model: weight/layer count mismatch");
  const int total = mc.context + mc.decode_steps;

  RunResult res;
  res.mask = dataflow::RouteMask(mc.layers, total);
  EvalContext ec;
  ec.mode = mc.mode;
  ec.probes = &res.probes;

  Rng erng(Rng::mix(mc.seed, 0xe3bedu));
  res.hidden = dataflow::randn(total, mc.dim, erng);
  KvCache kv(mc.layers, total, mc.dim);

  // Prefill: the whole prompt through every layer.
  std::vector<int> ppos;
  for (int t = 0; t < mc.context; ++t) ppos.push_back(t);
  for (int l = 0; l < mc.layers; ++l)
    layer_forward(res.hidden, 0, mc.context, ppos, l, mc, mw.layers[std::size_t(l)],
                  res.mask, kv, ec);

  // Decode: one token at a time, emitting one trace unit per layer.
  for (int s = 0; s < mc.decode_steps; ++s) {
    const int post = mc.context + s;
    const std::vector<int> dpos{post};
    for (int l = 0; l < mc.layers; ++l) {
      layer_forward(res.hidden, post, 1, dpos, l, mc, mw.layers[std::size_t(l)],
                    res.mask, kv, ec);
      kvsim::TraceUnit u;
      u.step = s;
      u.layer = l;
      u.attend = res.mask.executed(l, post);
      for (int t = 0; t < post; ++t)
        if (l + 1 >= mc.layers || res.mask.executed(l + 1, t))
          u.set_lookahead_bit(uint32_t(t));
      if (u.attend)
        for (int t = 0; t < post; ++t)
          u.needed.push_back({uint32_t(t), res.mask.kv_source_layer(l, t)});
      res.trace.units.push_back(std::move(u));
    }
  }

  res.pe_stats = ec.pe_stats;
  uint64_t skipped = 0;
  for (int l = 1; l < mc.layers; ++l)
    for (int t = 0; t < total; ++t)
      if (!res.mask.executed(l, t)) ++skipped;
  res.skip_fraction =
      mc.layers > 1 ? double(skipped) / (double(mc.layers - 1) * total) : 0.0;
  res.storage_reduction =
      1.0 - double(res.mask.stored_entries()) / (double(mc.layers) * total);

  uint64_t h = fnv1a(res.hidden.a.data(), res.hidden.a.size() * sizeof(double));
  res.output_hash = fnv1a(res.mask.exec.data(), res.mask.exec.size(), h);
  return res;
}

double calibrate_router(const ModelConfig& mc, const ModelWeights& mw,
                        double tol, int iters) {
  if (mc.layers < 2)
    throw std::invalid_argument("calibrate_router: nothing to route");
  double lo = -8.0, hi = 8.0;
  double best_bias = 0.0, best_err = 1e99;
  for (int i = 0; i < iters; ++i) {
    const double mid = 0.5 * (lo + hi);
    ModelConfig probe = mc;
    probe.router_bias_execute = mid;
    const RunResult rr = run_model(probe, mw);
    const double err = rr.skip_fraction - mc.skip_target;
    if (std::abs(err) < best_err) {
      best_err = std::abs(err);
      best_bias = mid;
    }
    if (best_err <= tol * 0.5) break;
    // Skip share falls as the execute bias grows.
    if (err > 0.0)
      lo = mid;
    else
      hi = mid;
  }
  return best_bias;
}

uint64_t fnv1a(const void* data, std::size_t n, uint64_t h) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace opusim::runner
