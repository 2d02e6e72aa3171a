#include "cds/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "cds/error.hpp"

namespace cds {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::invalid_config: return "invalid-config";
    case ErrorCode::shape_mismatch: return "shape-mismatch";
    case ErrorCode::out_of_range: return "out-of-range";
    case ErrorCode::unknown_tap: return "unknown-tap";
    case ErrorCode::unknown_vocabulary: return "unknown-vocabulary";
    case ErrorCode::backend_unavailable: return "backend-unavailable";
    case ErrorCode::numerical: return "numerical";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

std::string to_string(const Shape& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" +
         std::to_string(s.width);
}

Tensor3::Tensor3(Shape shape, double fill) : shape_(shape), data_(shape.size(), fill) {}

Tensor3::Tensor3(Shape shape, std::vector<double> data)
    : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.size()) {
    throw Error(ErrorCode::shape_mismatch,
                "tensor data has " + std::to_string(data_.size()) +
                    " entries, shape " + to_string(shape_) + " needs " +
                    std::to_string(shape_.size()));
  }
}

Tensor3& Tensor3::operator+=(const Tensor3& other) {
  require_same_shape(*this, other, "tensor +=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor3& Tensor3::operator-=(const Tensor3& other) {
  require_same_shape(*this, other, "tensor -=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor3& Tensor3::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Tensor3& Tensor3::axpy(double s, const Tensor3& other) {
  require_same_shape(*this, other, "tensor axpy");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * other.data_[i];
  return *this;
}

bool Tensor3::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor3 operator+(Tensor3 a, const Tensor3& b) { return a += b; }
Tensor3 operator-(Tensor3 a, const Tensor3& b) { return a -= b; }
Tensor3 operator*(double s, Tensor3 a) { return a *= s; }

double dot(const Tensor3& a, const Tensor3& b) {
  require_same_shape(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double l2_norm(const Tensor3& a) { return std::sqrt(dot(a, a)); }

double rms(const Tensor3& a) {
  if (a.empty()) return 0.0;
  return std::sqrt(dot(a, a) / static_cast<double>(a.size()));
}

double max_abs_diff(const Tensor3& a, const Tensor3& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void require_same_shape(const Tensor3& a, const Tensor3& b, const char* what) {
  if (!(a.shape() == b.shape())) {
    throw Error(ErrorCode::shape_mismatch, std::string(what) + ": shape " +
                                               to_string(a.shape()) + " vs " +
                                               to_string(b.shape()));
  }
}

Tensor3 roll(const Tensor3& in, int dy, int dx) {
  const Shape& s = in.shape();
  Tensor3 out(s);
  for (int c = 0; c < s.channels; ++c) {
    for (int y = 0; y < s.height; ++y) {
      const int sy = ((y - dy) % s.height + s.height) % s.height;
      for (int x = 0; x < s.width; ++x) {
        const int sx = ((x - dx) % s.width + s.width) % s.width;
        out(c, y, x) = in(c, sy, sx);
      }
    }
  }
  return out;
}

}  // namespace cds
