#pragma once

#include <vector>

#include "opusim/dataflow.hpp"
#include "opusim/matrix.hpp"

// Serial, unfused implementations of every dataflow stage.  These
// deliberately materialize intermediates (full score matrices, separate
// statistics passes) and stay single-threaded; the fused kernels are
// validated against them and the benchmark tool compares their speed.

namespace opusim::ref {

using dataflow::AttnConfig;
using dataflow::Mat;
using dataflow::NormParams;
using dataflow::RouterConfig;
using dataflow::RouterResult;

Mat matmul(const Mat& x, const Mat& w);

// Separate passes: logits matmul, moment statistics, then normalization of
// the selected rows into a copy of x.
RouterResult router_norm_unfused(Mat& x, const Mat& wr, const NormParams& np,
                                 const RouterConfig& rc);

// Full score-matrix attention with a stable softmax per row.
Mat attention(const Mat& q, const Mat& k, const Mat& v, const AttnConfig& cfg);

// Rotary embedding through complex multiplication.
void rope_complex(Mat& x, int heads, const std::vector<int>& pos, double base);

Mat swiglu(const Mat& gate, const Mat& up);

}  // namespace opusim::ref
