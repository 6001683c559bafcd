#pragma once

#include <cstddef>
#include <vector>

#include "opusim/rng.hpp"

namespace opusim::dataflow {

// Dense row-major matrix of binary64 values.  Device-precision kernels
// round to float16 at ingestion; this container stays wide so oracles and
// device paths can share inputs.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(std::size_t(r) * std::size_t(c), 0.0) {}

  double& at(int r, int c) { return a[std::size_t(r) * cols + c]; }
  double at(int r, int c) const { return a[std::size_t(r) * cols + c]; }
  double* row(int r) { return a.data() + std::size_t(r) * cols; }
  const double* row(int r) const { return a.data() + std::size_t(r) * cols; }
};

Mat randn(int rows, int cols, Rng& rng, double sigma = 1.0);

// Largest absolute difference between two equally shaped matrices.
double max_abs_diff(const Mat& x, const Mat& y);

}  // namespace opusim::dataflow
