#include <algorithm>
#include <cmath>

#include "cds/error.hpp"
#include "cds/kernels.hpp"

namespace cds::kernels::serial {

namespace {

int wrap(int i, int n) { return ((i % n) + n) % n; }

int out_extent(int n, int stride) { return (n + stride - 1) / stride; }

}  // namespace

Tensor3 conv3x3_forward(const Tensor3& in, std::span<const double> weights,
                        std::span<const double> bias, int out_channels, int stride) {
  const Shape& s = in.shape();
  Tensor3 out(Shape{out_channels, out_extent(s.height, stride), out_extent(s.width, stride)});
  const Shape& os = out.shape();
  for (int o = 0; o < out_channels; ++o) {
    for (int y = 0; y < os.height; ++y) {
      for (int x = 0; x < os.width; ++x) {
        double acc = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(o)];
        for (int i = 0; i < s.channels; ++i) {
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const double w = weights[((static_cast<std::size_t>(o) * s.channels + i) * 3 + ky) * 3 + kx];
              acc += w * in(i, wrap(y * stride + ky - 1, s.height), wrap(x * stride + kx - 1, s.width));
            }
          }
        }
        out(o, y, x) = acc;
      }
    }
  }
  return out;
}

Tensor3 conv3x3_backward_input(const Tensor3& grad_out, std::span<const double> weights,
                               const Shape& in_shape, int stride) {
  const Shape& os = grad_out.shape();
  Tensor3 grad_in(in_shape);
  for (int o = 0; o < os.channels; ++o) {
    for (int y = 0; y < os.height; ++y) {
      for (int x = 0; x < os.width; ++x) {
        const double g = grad_out(o, y, x);
        for (int i = 0; i < in_shape.channels; ++i) {
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const double w = weights[((static_cast<std::size_t>(o) * in_shape.channels + i) * 3 + ky) * 3 + kx];
              grad_in(i, wrap(y * stride + ky - 1, in_shape.height),
                      wrap(x * stride + kx - 1, in_shape.width)) += w * g;
            }
          }
        }
      }
    }
  }
  return grad_in;
}

Tensor3 channel_mix(std::span<const double> w, int rows, const Tensor3& x) {
  const Shape& s = x.shape();
  Tensor3 out(Shape{rows, s.height, s.width});
  const std::size_t n = s.plane();
  for (int r = 0; r < rows; ++r) {
    for (std::size_t p = 0; p < n; ++p) {
      double acc = 0.0;
      for (int c = 0; c < s.channels; ++c) {
        acc += w[static_cast<std::size_t>(r) * s.channels + c] * x[c * n + p];
      }
      out[r * n + p] = acc;
    }
  }
  return out;
}

Tensor3 channel_mix_transposed(std::span<const double> w, int cols, const Tensor3& g) {
  const Shape& s = g.shape();
  Tensor3 out(Shape{cols, s.height, s.width});
  const std::size_t n = s.plane();
  for (int c = 0; c < cols; ++c) {
    for (std::size_t p = 0; p < n; ++p) {
      double acc = 0.0;
      for (int r = 0; r < s.channels; ++r) {
        acc += w[static_cast<std::size_t>(r) * cols + c] * g[r * n + p];
      }
      out[c * n + p] = acc;
    }
  }
  return out;
}

std::vector<double> attention_probs(const Tensor3& q, const Tensor3& k, double scale) {
  require_same_shape(q, k, "attention_probs");
  const int f = q.shape().channels;
  const std::size_t n = q.shape().plane();
  std::vector<double> p(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int c = 0; c < f; ++c) acc += q[c * n + i] * k[c * n + j];
      p[i * n + j] = scale * acc;
      mx = std::max(mx, p[i * n + j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      p[i * n + j] = std::exp(p[i * n + j] - mx);
      z += p[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) p[i * n + j] /= z;
  }
  return p;
}

Tensor3 attention_apply(std::span<const double> probs, const Tensor3& v) {
  const int f = v.shape().channels;
  const std::size_t n = v.shape().plane();
  Tensor3 out(v.shape());
  for (int c = 0; c < f; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += probs[i * n + j] * v[c * n + j];
      out[c * n + i] = acc;
    }
  }
  return out;
}

AttentionGrads attention_backward(std::span<const double> probs, const Tensor3& q,
                                  const Tensor3& k, const Tensor3& v, const Tensor3& d_o,
                                  double scale) {
  const int f = v.shape().channels;
  const std::size_t n = v.shape().plane();
  AttentionGrads g{Tensor3(q.shape()), Tensor3(k.shape()), Tensor3(v.shape())};

  std::vector<double> d_s(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double dp = 0.0;
      for (int c = 0; c < f; ++c) dp += d_o[c * n + i] * v[c * n + j];
      d_s[i * n + j] = dp;
      row += probs[i * n + j] * dp;
    }
    for (std::size_t j = 0; j < n; ++j) {
      d_s[i * n + j] = probs[i * n + j] * (d_s[i * n + j] - row);
    }
  }

  for (int c = 0; c < f; ++c) {
    for (std::size_t j = 0; j < n; ++j) {
      double dv = 0.0;
      for (std::size_t i = 0; i < n; ++i) dv += probs[i * n + j] * d_o[c * n + i];
      g.dv[c * n + j] = dv;
    }
  }
  for (int c = 0; c < q.shape().channels; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double dq = 0.0;
      for (std::size_t j = 0; j < n; ++j) dq += d_s[i * n + j] * k[c * n + j];
      g.dq[c * n + i] = scale * dq;
    }
    for (std::size_t j = 0; j < n; ++j) {
      double dk = 0.0;
      for (std::size_t i = 0; i < n; ++i) dk += d_s[i * n + j] * q[c * n + i];
      g.dk[c * n + j] = scale * dk;
    }
  }
  return g;
}

std::vector<double> gram(std::span<const double> a, std::span<const double> b, int m, int n,
                         int d) {
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int c = 0; c < d; ++c) {
        acc += a[static_cast<std::size_t>(i) * d + c] * b[static_cast<std::size_t>(j) * d + c];
      }
      out[static_cast<std::size_t>(i) * n + j] = acc;
    }
  }
  return out;
}

}  // namespace cds::kernels::serial
