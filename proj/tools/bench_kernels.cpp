// Timings for the parallel kernels against their serial references.
// The references are the test oracles, so the drift column doubles as a
// sanity check: wide-mode kernels must agree to rounding noise.

#include <chrono>
#include <cstdio>
#include <omp.h>

#include "opusim/dataflow.hpp"
#include "opusim/reference.hpp"
#include "opusim/rng.hpp"
#include "opusim/sweep.hpp"

using opusim::Rng;
using opusim::dataflow::EvalContext;
using opusim::dataflow::Mat;

namespace {

double now_ms() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double, std::milli>(
             clock::now().time_since_epoch())
      .count();
}

template <class F>
double best_ms(F&& f, int reps) {
  double best = 1e300;
  for (int i = 0; i < reps; ++i) {
    const double t0 = now_ms();
    f();
    best = std::min(best, now_ms() - t0);
  }
  return best;
}

void report(const char* name, const char* shape, double serial_ms,
            double parallel_ms, double drift) {
  std::printf("%-22s %-20s %10.2f %10.2f %9.2fx %12.3e\n", name, shape,
              serial_ms, parallel_ms, serial_ms / parallel_ms, drift);
}

}  // namespace

int main() {
  const int reps = 3;
  std::printf("threads: %d\n\n", omp_get_max_threads());
  std::printf("%-22s %-20s %10s %10s %10s %12s\n", "kernel", "shape",
              "serial/ms", "par/ms", "speedup", "drift");

  {
    Rng rng(11);
    const Mat x = opusim::dataflow::randn(384, 768, rng);
    const Mat w = opusim::dataflow::randn(768, 768, rng);
    Mat got(1, 1), want(1, 1);
    EvalContext ec;
    const double tp = best_ms(
        [&] { got = opusim::dataflow::project(x, w, 64, ec); }, reps);
    const double ts =
        best_ms([&] { want = opusim::ref::matmul(x, w); }, reps);
    report("tiled projection", "384x768 * 768x768", ts, tp,
           opusim::dataflow::max_abs_diff(got, want));
  }

  {
    Rng rng(12);
    const int heads = 12, dim = heads * 64, qr = 384, kr = 768;
    const Mat q = opusim::dataflow::randn(qr, dim, rng);
    const Mat k = opusim::dataflow::randn(kr, dim, rng);
    const Mat v = opusim::dataflow::randn(kr, dim, rng);
    opusim::dataflow::AttnConfig ac;
    ac.heads = heads;
    ac.kv_tile = 64;
    ac.q_pos.resize(qr);
    for (int i = 0; i < qr; ++i) ac.q_pos[std::size_t(i)] = kr - qr + i;
    ac.kv_pos.resize(kr);
    for (int i = 0; i < kr; ++i) ac.kv_pos[std::size_t(i)] = i;
    Mat got(1, 1), want(1, 1);
    EvalContext ec;
    const double tp = best_ms(
        [&] { got = opusim::dataflow::fused_attention(q, k, v, ac, ec); },
        reps);
    const double ts =
        best_ms([&] { want = opusim::ref::attention(q, k, v, ac); }, reps);
    report("streamed attention", "384q 768kv 12h", ts, tp,
           opusim::dataflow::max_abs_diff(got, want));
  }

  {
    opusim::numerics::SweepSpec spec;
    spec.kernel = opusim::numerics::SweepKernel::impl2;
    spec.trials = 20000;
    opusim::numerics::SweepResult rp, rs;
    spec.parallel = true;
    const double tp =
        best_ms([&] { rp = opusim::numerics::run_error_sweep(spec); }, reps);
    spec.parallel = false;
    const double ts =
        best_ms([&] { rs = opusim::numerics::run_error_sweep(spec); }, reps);
    report("error sweep", "20k dots, depth 64", ts, tp,
           std::abs(rp.mean_rel_err_pct - rs.mean_rel_err_pct));
  }

  return 0;
}
