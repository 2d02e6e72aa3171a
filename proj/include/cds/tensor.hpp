#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace cds {

struct Shape {
  int channels = 0;
  int height = 0;
  int width = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }
  std::size_t plane() const {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

// Dense channel-major (C x H x W) array of doubles.
class Tensor3 {
 public:
  Tensor3() = default;
  explicit Tensor3(Shape shape, double fill = 0.0);
  Tensor3(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(int c, int y, int x) { return data_[index(c, y, x)]; }
  double operator()(int c, int y, int x) const { return data_[index(c, y, x)]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * shape_.height + static_cast<std::size_t>(y)) *
               shape_.width +
           static_cast<std::size_t>(x);
  }

  Tensor3& operator+=(const Tensor3& other);
  Tensor3& operator-=(const Tensor3& other);
  Tensor3& operator*=(double s);
  // this += s * other
  Tensor3& axpy(double s, const Tensor3& other);

  bool all_finite() const;

 private:
  Shape shape_{};
  std::vector<double> data_;
};

using Latent = Tensor3;

Tensor3 operator+(Tensor3 a, const Tensor3& b);
Tensor3 operator-(Tensor3 a, const Tensor3& b);
Tensor3 operator*(double s, Tensor3 a);

double dot(const Tensor3& a, const Tensor3& b);
double l2_norm(const Tensor3& a);
// Root mean square of all entries; 0 for an empty tensor.
double rms(const Tensor3& a);
double max_abs_diff(const Tensor3& a, const Tensor3& b);

// Throws ErrorCode::shape_mismatch naming `what` when the shapes differ.
void require_same_shape(const Tensor3& a, const Tensor3& b, const char* what);

// Cyclic translation: out(c, y, x) = in(c, y - dy, x - dx) with wraparound.
Tensor3 roll(const Tensor3& in, int dy, int dx);

}  // namespace cds
