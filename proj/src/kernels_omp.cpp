#include <algorithm>
#include <cmath>
#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "cds/error.hpp"
#include "cds/kernels.hpp"

namespace cds::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace omp {

namespace {

using idx = std::ptrdiff_t;

int wrap(int i, int n) { return ((i % n) + n) % n; }

int out_extent(int n, int stride) { return (n + stride - 1) / stride; }

// (channels x n) -> (n x channels)
std::vector<double> position_major(const Tensor3& t) {
  const int f = t.shape().channels;
  const idx n = static_cast<idx>(t.shape().plane());
  std::vector<double> out(t.size());
#pragma omp parallel for schedule(static)
  for (idx p = 0; p < n; ++p) {
    for (int c = 0; c < f; ++c) out[static_cast<std::size_t>(p * f + c)] = t[static_cast<std::size_t>(c * n + p)];
  }
  return out;
}

std::vector<double> transpose_square(std::span<const double> m, idx n) {
  std::vector<double> out(m.size());
#pragma omp parallel for schedule(static)
  for (idx j = 0; j < n; ++j) {
    for (idx i = 0; i < n; ++i) out[static_cast<std::size_t>(j * n + i)] = m[static_cast<std::size_t>(i * n + j)];
  }
  return out;
}

}  // namespace

Tensor3 conv3x3_forward(const Tensor3& in, std::span<const double> weights,
                        std::span<const double> bias, int out_channels, int stride) {
  const Shape s = in.shape();
  Tensor3 out(Shape{out_channels, out_extent(s.height, stride), out_extent(s.width, stride)});
  const Shape os = out.shape();
  const idx rows = static_cast<idx>(out_channels) * os.height;
#pragma omp parallel for schedule(static)
  for (idx r = 0; r < rows; ++r) {
    const int o = static_cast<int>(r / os.height);
    const int y = static_cast<int>(r % os.height);
    for (int x = 0; x < os.width; ++x) {
      double acc = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(o)];
      for (int i = 0; i < s.channels; ++i) {
        const double* w = &weights[(static_cast<std::size_t>(o) * s.channels + i) * 9];
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = wrap(y * stride + ky - 1, s.height);
          for (int kx = 0; kx < 3; ++kx) {
            acc += w[ky * 3 + kx] * in(i, iy, wrap(x * stride + kx - 1, s.width));
          }
        }
      }
      out(o, y, x) = acc;
    }
  }
  return out;
}

Tensor3 conv3x3_backward_input(const Tensor3& grad_out, std::span<const double> weights,
                               const Shape& in_shape, int stride) {
  const Shape os = grad_out.shape();
  Tensor3 grad_in(in_shape);
  const idx rows = static_cast<idx>(in_shape.channels) * in_shape.height;
  // Gather form: input pixel (y, x) is read by output (y', x') through tap
  // (ky, kx) iff y' * stride + ky - 1 == y (mod H), likewise for x.
#pragma omp parallel for schedule(static)
  for (idx r = 0; r < rows; ++r) {
    const int i = static_cast<int>(r / in_shape.height);
    const int y = static_cast<int>(r % in_shape.height);
    for (int x = 0; x < in_shape.width; ++x) {
      double acc = 0.0;
      for (int o = 0; o < os.channels; ++o) {
        const double* w = &weights[(static_cast<std::size_t>(o) * in_shape.channels + i) * 9];
        for (int ky = 0; ky < 3; ++ky) {
          const int cy = wrap(y - ky + 1, in_shape.height);
          if (cy % stride != 0 || cy / stride >= os.height) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int cx = wrap(x - kx + 1, in_shape.width);
            if (cx % stride != 0 || cx / stride >= os.width) continue;
            acc += w[ky * 3 + kx] * grad_out(o, cy / stride, cx / stride);
          }
        }
      }
      grad_in(i, y, x) = acc;
    }
  }
  return grad_in;
}

Tensor3 channel_mix(std::span<const double> w, int rows, const Tensor3& x) {
  const Shape s = x.shape();
  Tensor3 out(Shape{rows, s.height, s.width});
  const idx n = static_cast<idx>(s.plane());
#pragma omp parallel for schedule(static)
  for (idx p = 0; p < n; ++p) {
    for (int r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (int c = 0; c < s.channels; ++c) {
        acc += w[static_cast<std::size_t>(r) * s.channels + c] * x[static_cast<std::size_t>(c * n + p)];
      }
      out[static_cast<std::size_t>(r * n + p)] = acc;
    }
  }
  return out;
}

Tensor3 channel_mix_transposed(std::span<const double> w, int cols, const Tensor3& g) {
  const Shape s = g.shape();
  Tensor3 out(Shape{cols, s.height, s.width});
  const idx n = static_cast<idx>(s.plane());
#pragma omp parallel for schedule(static)
  for (idx p = 0; p < n; ++p) {
    for (int c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (int r = 0; r < s.channels; ++r) {
        acc += w[static_cast<std::size_t>(r) * cols + c] * g[static_cast<std::size_t>(r * n + p)];
      }
      out[static_cast<std::size_t>(c * n + p)] = acc;
    }
  }
  return out;
}

std::vector<double> attention_probs(const Tensor3& q, const Tensor3& k, double scale) {
  require_same_shape(q, k, "attention_probs");
  const int f = q.shape().channels;
  const idx n = static_cast<idx>(q.shape().plane());
  const std::vector<double> qt = position_major(q);
  const std::vector<double> kt = position_major(k);
  std::vector<double> p(static_cast<std::size_t>(n * n));
#pragma omp parallel for schedule(static)
  for (idx i = 0; i < n; ++i) {
    double* row = &p[static_cast<std::size_t>(i * n)];
    const double* qi = &qt[static_cast<std::size_t>(i * f)];
    double mx = -INFINITY;
    for (idx j = 0; j < n; ++j) {
      const double* kj = &kt[static_cast<std::size_t>(j * f)];
      double acc = 0.0;
      for (int c = 0; c < f; ++c) acc += qi[c] * kj[c];
      row[j] = scale * acc;
      mx = std::max(mx, row[j]);
    }
    double z = 0.0;
    for (idx j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      z += row[j];
    }
    for (idx j = 0; j < n; ++j) row[j] /= z;
  }
  return p;
}

Tensor3 attention_apply(std::span<const double> probs, const Tensor3& v) {
  const int f = v.shape().channels;
  const idx n = static_cast<idx>(v.shape().plane());
  Tensor3 out(v.shape());
#pragma omp parallel for schedule(static)
  for (idx i = 0; i < n; ++i) {
    const double* row = &probs[static_cast<std::size_t>(i * n)];
    for (int c = 0; c < f; ++c) {
      const double* vc = &v.storage()[static_cast<std::size_t>(c * n)];
      double acc = 0.0;
      for (idx j = 0; j < n; ++j) acc += row[j] * vc[j];
      out[static_cast<std::size_t>(c * n + i)] = acc;
    }
  }
  return out;
}

AttentionGrads attention_backward(std::span<const double> probs, const Tensor3& q,
                                  const Tensor3& k, const Tensor3& v, const Tensor3& d_o,
                                  double scale) {
  const int f = v.shape().channels;
  const int fq = q.shape().channels;
  const idx n = static_cast<idx>(v.shape().plane());
  AttentionGrads g{Tensor3(q.shape()), Tensor3(k.shape()), Tensor3(v.shape())};

  const std::vector<double> dot_t = position_major(d_o);
  const std::vector<double> vt = position_major(v);
  std::vector<double> d_s(static_cast<std::size_t>(n * n));
#pragma omp parallel for schedule(static)
  for (idx i = 0; i < n; ++i) {
    const double* prow = &probs[static_cast<std::size_t>(i * n)];
    double* srow = &d_s[static_cast<std::size_t>(i * n)];
    const double* di = &dot_t[static_cast<std::size_t>(i * f)];
    double row = 0.0;
    for (idx j = 0; j < n; ++j) {
      const double* vj = &vt[static_cast<std::size_t>(j * f)];
      double dp = 0.0;
      for (int c = 0; c < f; ++c) dp += di[c] * vj[c];
      srow[j] = dp;
      row += prow[j] * dp;
    }
    for (idx j = 0; j < n; ++j) srow[j] = prow[j] * (srow[j] - row);
  }

  const std::vector<double> p_t = transpose_square(probs, n);
  const std::vector<double> ds_t = transpose_square(d_s, n);
#pragma omp parallel for schedule(static)
  for (idx j = 0; j < n; ++j) {
    const double* pcol = &p_t[static_cast<std::size_t>(j * n)];
    const double* scol = &ds_t[static_cast<std::size_t>(j * n)];
    for (int c = 0; c < f; ++c) {
      const double* doc = &d_o.storage()[static_cast<std::size_t>(c * n)];
      double dv = 0.0;
      for (idx i = 0; i < n; ++i) dv += pcol[i] * doc[i];
      g.dv[static_cast<std::size_t>(c * n + j)] = dv;
    }
    for (int c = 0; c < fq; ++c) {
      const double* qc = &q.storage()[static_cast<std::size_t>(c * n)];
      double dk = 0.0;
      for (idx i = 0; i < n; ++i) dk += scol[i] * qc[i];
      g.dk[static_cast<std::size_t>(c * n + j)] = scale * dk;
    }
  }
#pragma omp parallel for schedule(static)
  for (idx i = 0; i < n; ++i) {
    const double* srow = &d_s[static_cast<std::size_t>(i * n)];
    for (int c = 0; c < fq; ++c) {
      const double* kc = &k.storage()[static_cast<std::size_t>(c * n)];
      double dq = 0.0;
      for (idx j = 0; j < n; ++j) dq += srow[j] * kc[j];
      g.dq[static_cast<std::size_t>(c * n + i)] = scale * dq;
    }
  }
  return g;
}

std::vector<double> gram(std::span<const double> a, std::span<const double> b, int m, int n,
                         int d) {
  std::vector<double> out(static_cast<std::size_t>(m) * n);
#pragma omp parallel for schedule(static)
  for (idx i = 0; i < m; ++i) {
    const double* ai = &a[static_cast<std::size_t>(i) * d];
    for (int j = 0; j < n; ++j) {
      const double* bj = &b[static_cast<std::size_t>(j) * d];
      double acc = 0.0;
      for (int c = 0; c < d; ++c) acc += ai[c] * bj[c];
      out[static_cast<std::size_t>(i) * n + j] = acc;
    }
  }
  return out;
}

}  // namespace omp
}  // namespace cds::kernels
