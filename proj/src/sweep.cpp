#include "opusim/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "opusim/rng.hpp"

namespace opusim::numerics {

namespace {

struct Trial {
  double err = 0.0;    // relative error, or unused
  bool used = false;   // false when the reference is exactly zero
  PeStats stats;
};

int quantize_int4(double w, double scale) {
  const double q = std::nearbyint(w / scale);
  return static_cast<int>(std::clamp(q, -8.0, 7.0));
}

Trial run_trial(const SweepSpec& spec, uint64_t trial_seed) {
  Rng rng(trial_seed);
  const int n = spec.depth;
  std::vector<Fp16Bits> x(n);
  std::vector<Fp16Bits> w16(n);
  std::vector<int8_t> w4(n);

  for (int i = 0; i < n; ++i) x[i] = Fp16Bits::encode(rng.normal(0.0, 1.0));

  if (spec.mode == PeMode::fp16) {
    for (int i = 0; i < n; ++i) {
      const double d = spec.dist == SweepDist::normal
                           ? rng.normal(0.0, 1.0)
                           : (rng.bernoulli(0.1) ? rng.normal(0.0, 0.2)
                                                 : rng.normal(0.0, 0.02));
      w16[i] = Fp16Bits::encode(d);
    }
  } else if (spec.dist == SweepDist::normal) {
    for (int i = 0; i < n; ++i)
      w4[i] = static_cast<int8_t>(int64_t(rng.below(16)) - 8);
  } else {
    // Mixture draws mapped onto the 4-bit grid with a per-trial max-abs
    // scale, as a quantizer would.
    std::vector<double> draw(n);
    double mx = 0.0;
    for (int i = 0; i < n; ++i) {
      draw[i] = rng.bernoulli(0.1) ? rng.normal(0.0, 0.2)
                                   : rng.normal(0.0, 0.02);
      mx = std::max(mx, std::fabs(draw[i]));
    }
    const double scale = mx > 0.0 ? mx / 7.0 : 1.0;
    for (int i = 0; i < n; ++i)
      w4[i] = static_cast<int8_t>(quantize_int4(draw[i], scale));
  }

  Trial t;
  double ref = 0.0;
  for (int i = 0; i < n; ++i) {
    const double xv = x[i].to_double();
    ref += spec.mode == PeMode::fp16 ? xv * w16[i].to_double()
                                     : xv * double(w4[i]);
  }

  double y = 0.0;
  if (spec.kernel == SweepKernel::naive) {
    if (spec.mode == PeMode::int4)
      for (int i = 0; i < n; ++i) w16[i] = Fp16Bits::encode(double(w4[i]));
    y = naive_dot(x.data(), w16.data(), std::size_t(n), &t.stats).to_double();
  } else {
    PeColumnConfig cfg;
    cfg.impl = spec.kernel == SweepKernel::impl1   ? PeImpl::impl1
               : spec.kernel == SweepKernel::impl2 ? PeImpl::impl2
                                                   : PeImpl::impl3;
    cfg.mode = spec.mode;
    if (spec.mode == PeMode::fp16)
      y = pe_dot(x.data(), w16.data(), std::size_t(n), cfg, &t.stats)
              .to_double();
    else
      y = pe_dot_int4(x.data(), w4.data(), std::size_t(n), cfg, &t.stats)
              .to_double();
  }

  if (ref == 0.0) return t;
  t.err = std::fabs(y - ref) / std::fabs(ref);
  t.used = true;
  return t;
}

}  // namespace

SweepResult run_error_sweep(const SweepSpec& spec) {
  if (spec.trials <= 0 || spec.depth <= 0)
    throw std::invalid_argument("sweep: trials and depth must be positive");
  std::vector<Trial> trials(std::size_t(spec.trials));

  if (spec.parallel) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < spec.trials; ++i)
      trials[std::size_t(i)] = run_trial(spec, Rng::mix(spec.seed, uint64_t(i)));
  } else {
    for (int i = 0; i < spec.trials; ++i)
      trials[std::size_t(i)] = run_trial(spec, Rng::mix(spec.seed, uint64_t(i)));
  }

  // Serial reduction keeps the result independent of thread count.
  SweepResult r;
  double sum = 0.0;
  for (const Trial& t : trials) {
    if (t.used) {
      sum += t.err;
      ++r.used_trials;
    } else {
      ++r.skipped_zero_ref;
    }
    r.stats.subnormal_flushes += t.stats.subnormal_flushes;
    r.stats.saturations += t.stats.saturations;
    r.stats.multiplies += t.stats.multiplies;
  }
  r.mean_rel_err_pct = r.used_trials ? 100.0 * sum / double(r.used_trials) : 0.0;
  return r;
}

const char* to_string(SweepKernel k) {
  switch (k) {
    case SweepKernel::impl1: return "impl1";
    case SweepKernel::impl2: return "impl2";
    case SweepKernel::impl3: return "impl3";
    case SweepKernel::naive: return "naive";
  }
  return "?";
}

const char* to_string(SweepDist d) {
  return d == SweepDist::normal ? "normal" : "mixture";
}

const char* to_string(PeMode m) { return m == PeMode::fp16 ? "fp16" : "int4"; }

}  // namespace opusim::numerics
