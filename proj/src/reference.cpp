#include "opusim/reference.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <stdexcept>

namespace opusim::ref {

Mat matmul(const Mat& x, const Mat& w) {
  if (x.cols != w.rows) throw std::invalid_argument("matmul: shape mismatch");
  Mat y(x.rows, w.cols);
  for (int i = 0; i < x.rows; ++i)
    for (int j = 0; j < w.cols; ++j) {
      double acc = 0.0;
      for (int k = 0; k < x.cols; ++k) acc += x.at(i, k) * w.at(k, j);
      y.at(i, j) = acc;
    }
  return y;
}

RouterResult router_norm_unfused(Mat& x, const Mat& wr, const NormParams& np,
                                 const RouterConfig& rc) {
  const int t = x.rows, d = x.cols;
  RouterResult rr;
  rr.logits = matmul(x, wr);
  rr.mu.assign(std::size_t(t), 0.0);
  rr.sigma.assign(std::size_t(t), 0.0);
  rr.execute.assign(std::size_t(t), 0);

  for (int i = 0; i < t; ++i) {
    double s1 = 0.0, s2 = 0.0;
    for (int dd = 0; dd < d; ++dd) s1 += x.at(i, dd);
    const double mu = np.subtract_mean ? s1 / d : 0.0;
    for (int dd = 0; dd < d; ++dd) {
      const double c = x.at(i, dd);
      s2 += c * c;
    }
    rr.mu[std::size_t(i)] = mu;
    rr.sigma[std::size_t(i)] =
        std::sqrt(std::max(s2 / d - mu * mu, 0.0) + np.eps);
  }
  for (int i = 0; i < t; ++i)
    rr.execute[std::size_t(i)] = dataflow::route_decision(
        rr.logits.at(i, 0), rr.logits.at(i, 1), rc, uint64_t(i));
  for (int i = 0; i < t; ++i) {
    if (!rr.execute[std::size_t(i)]) continue;
    for (int dd = 0; dd < d; ++dd) {
      const double g = np.gain.empty() ? 1.0 : np.gain[std::size_t(dd)];
      x.at(i, dd) =
          (x.at(i, dd) - rr.mu[std::size_t(i)]) / rr.sigma[std::size_t(i)] * g;
    }
  }
  return rr;
}

Mat attention(const Mat& q, const Mat& k, const Mat& v,
              const AttnConfig& cfg) {
  const int h = cfg.heads;
  if (h <= 0 || q.cols % h != 0)
    throw std::invalid_argument("attention: bad head count");
  const int dh = q.cols / h;
  const int t = q.rows, s = k.rows;
  const double scale = 1.0 / std::sqrt(double(dh));
  auto qpos = [&](int i) { return cfg.q_pos.empty() ? i : cfg.q_pos[std::size_t(i)]; };
  auto kpos = [&](int j) { return cfg.kv_pos.empty() ? j : cfg.kv_pos[std::size_t(j)]; };

  Mat out(t, q.cols);
  std::vector<double> score(static_cast<std::size_t>(s));
  for (int hh = 0; hh < h; ++hh) {
    const int off = hh * dh;
    for (int i = 0; i < t; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < s; ++j) {
        if (cfg.causal && kpos(j) > qpos(i)) {
          score[std::size_t(j)] = -std::numeric_limits<double>::infinity();
          continue;
        }
        double dot = 0.0;
        for (int dd = 0; dd < dh; ++dd)
          dot += q.at(i, off + dd) * k.at(j, off + dd);
        score[std::size_t(j)] = scale * dot;
        mx = std::max(mx, score[std::size_t(j)]);
      }
      if (!std::isfinite(mx)) continue;  // fully masked row stays zero
      double denom = 0.0;
      for (int j = 0; j < s; ++j)
        if (std::isfinite(score[std::size_t(j)]))
          denom += std::exp(score[std::size_t(j)] - mx);
      for (int j = 0; j < s; ++j) {
        if (!std::isfinite(score[std::size_t(j)])) continue;
        const double p = std::exp(score[std::size_t(j)] - mx) / denom;
        for (int dd = 0; dd < dh; ++dd)
          out.at(i, off + dd) += p * v.at(j, off + dd);
      }
    }
  }
  return out;
}

void rope_complex(Mat& x, int heads, const std::vector<int>& pos,
                  double base) {
  if (heads <= 0 || x.cols % heads != 0)
    throw std::invalid_argument("rope_complex: bad head count");
  const int dh = x.cols / heads;
  if (dh % 2 != 0)
    throw std::invalid_argument("rope_complex: head dim must be even");
  for (int i = 0; i < x.rows; ++i)
    for (int hh = 0; hh < heads; ++hh)
      for (int p = 0; p < dh / 2; ++p) {
        const double theta =
            double(pos[std::size_t(i)]) * std::pow(base, -2.0 * p / dh);
        const int c0 = hh * dh + 2 * p;
        const std::complex<double> z(x.at(i, c0), x.at(i, c0 + 1));
        const std::complex<double> r = z * std::polar(1.0, theta);
        x.at(i, c0) = r.real();
        x.at(i, c0 + 1) = r.imag();
      }
}

Mat swiglu(const Mat& gate, const Mat& up) {
  if (gate.rows != up.rows || gate.cols != up.cols)
    throw std::invalid_argument("swiglu: shape mismatch");
  Mat y(gate.rows, gate.cols);
  for (std::size_t i = 0; i < y.a.size(); ++i)
    y.a[i] = dataflow::silu(gate.a[i]) * up.a[i];
  return y;
}

}  // namespace opusim::ref
