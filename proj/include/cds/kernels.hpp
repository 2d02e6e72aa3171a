#pragma once

// Dense inner loops of the feature network, the contrastive loss and the
// structure diagnostics. Two implementations share one interface:
//
//   kernels::serial  straightforward loops, kept as the test reference
//   kernels::omp     OpenMP-parallel; every output element is produced by one
//                    thread with a fixed summation order, so results do not
//                    depend on the thread count
//
// The unqualified kernels:: functions forward to the OpenMP set.
//
// Matrices are row-major std::vector<double>. Tensor3 doubles as a
// (channels x positions) matrix with positions = height * width.

#include <span>
#include <vector>

#include "cds/tensor.hpp"

namespace cds::kernels {

struct AttentionGrads {
  Tensor3 dq;
  Tensor3 dk;
  Tensor3 dv;
};

namespace serial {

// 3x3 cyclic-padded convolution; weights [out][in][3][3], output size
// ceil(H / stride) x ceil(W / stride).
Tensor3 conv3x3_forward(const Tensor3& in, std::span<const double> weights,
                        std::span<const double> bias, int out_channels, int stride);
Tensor3 conv3x3_backward_input(const Tensor3& grad_out, std::span<const double> weights,
                               const Shape& in_shape, int stride);
// out[r] = sum_c w[r][c] * x[c] per position; w is rows x x.channels.
Tensor3 channel_mix(std::span<const double> w, int rows, const Tensor3& x);
// out[c] = sum_r w[r][c] * g[r] per position.
Tensor3 channel_mix_transposed(std::span<const double> w, int cols, const Tensor3& g);
// Row-softmax of scale * q^T k; positions x positions.
std::vector<double> attention_probs(const Tensor3& q, const Tensor3& k, double scale);
// o[f][i] = sum_j p[i][j] v[f][j]
Tensor3 attention_apply(std::span<const double> probs, const Tensor3& v);
AttentionGrads attention_backward(std::span<const double> probs, const Tensor3& q,
                                  const Tensor3& k, const Tensor3& v, const Tensor3& d_o,
                                  double scale);
// out[i][j] = a_i . b_j for row-major a (m x d) and b (n x d).
std::vector<double> gram(std::span<const double> a, std::span<const double> b, int m, int n,
                         int d);

}  // namespace serial

namespace omp {

Tensor3 conv3x3_forward(const Tensor3& in, std::span<const double> weights,
                        std::span<const double> bias, int out_channels, int stride);
Tensor3 conv3x3_backward_input(const Tensor3& grad_out, std::span<const double> weights,
                               const Shape& in_shape, int stride);
Tensor3 channel_mix(std::span<const double> w, int rows, const Tensor3& x);
Tensor3 channel_mix_transposed(std::span<const double> w, int cols, const Tensor3& g);
std::vector<double> attention_probs(const Tensor3& q, const Tensor3& k, double scale);
Tensor3 attention_apply(std::span<const double> probs, const Tensor3& v);
AttentionGrads attention_backward(std::span<const double> probs, const Tensor3& q,
                                  const Tensor3& k, const Tensor3& v, const Tensor3& d_o,
                                  double scale);
std::vector<double> gram(std::span<const double> a, std::span<const double> b, int m, int n,
                         int d);

}  // namespace omp

using omp::attention_apply;
using omp::attention_backward;
using omp::attention_probs;
using omp::channel_mix;
using omp::channel_mix_transposed;
using omp::conv3x3_backward_input;
using omp::conv3x3_forward;
using omp::gram;

int max_threads();

}  // namespace cds::kernels
