#include "opusim/matrix.hpp"

#include <cmath>
#include <stdexcept>

namespace opusim::dataflow {

Mat randn(int rows, int cols, Rng& rng, double sigma) {
  Mat m(rows, cols);
  for (double& v : m.a) v = rng.normal(0.0, sigma);
  return m;
}

double max_abs_diff(const Mat& x, const Mat& y) {
  if (x.rows != y.rows || x.cols != y.cols)
    throw std::invalid_argument("max_abs_diff: shape mismatch");
  double d = 0.0;
  for (std::size_t i = 0; i < x.a.size(); ++i)
    d = std::max(d, std::fabs(x.a[i] - y.a[i]));
  return d;
}

}  // namespace opusim::dataflow
