#include "cds/generator.hpp"

#include <cmath>

#include <fmt/format.h>

#include "cds/error.hpp"

namespace cds {

std::string to_string(GeneratorKind kind) {
  return kind == GeneratorKind::identity_latent ? "identity_latent" : "coordinate_grid_toy";
}

IdentityLatentGenerator::IdentityLatentGenerator(const Latent& init) : shape_(init.shape()) {
  params_ = init.storage();
}

Latent IdentityLatentGenerator::render(int view) const {
  if (view != 0) throw Error(ErrorCode::out_of_range, "identity generator has a single view");
  return Latent(shape_, params_);
}

std::vector<double> IdentityLatentGenerator::render_vjp(int view, const Latent& g) const {
  if (view != 0) throw Error(ErrorCode::out_of_range, "identity generator has a single view");
  if (!(g.shape() == shape_)) throw Error(ErrorCode::shape_mismatch, "render_vjp: gradient shape");
  return g.storage();
}

std::unique_ptr<Generator> IdentityLatentGenerator::clone() const {
  return std::make_unique<IdentityLatentGenerator>(*this);
}

namespace {

int wrap(int i, int n) { return ((i % n) + n) % n; }

}  // namespace

CoordinateGridGenerator::CoordinateGridGenerator(Shape latent_shape, int grid_size,
                                                 std::vector<std::pair<int, int>> shifts)
    : shape_(latent_shape), grid_(grid_size), shifts_(std::move(shifts)) {
  if (grid_size < 2) throw Error(ErrorCode::invalid_argument, "grid size must be at least 2");
  if (shape_.size() == 0) throw Error(ErrorCode::invalid_argument, "empty latent shape");
  if (shifts_.empty()) throw Error(ErrorCode::invalid_argument, "grid generator needs at least one view");
  auto taps = [&](int n) {
    std::vector<Tap> out(static_cast<std::size_t>(n));
    for (int x = 0; x < n; ++x) {
      const double u = (x + 0.5) * grid_ / n - 0.5;
      const double f = std::floor(u);
      const int i0 = static_cast<int>(f);
      out[static_cast<std::size_t>(x)] = {wrap(i0, grid_), wrap(i0 + 1, grid_), 1.0 - (u - f), u - f};
    }
    return out;
  };
  rows_ = taps(shape_.height);
  cols_ = taps(shape_.width);
  params_.assign(grid_shape().size(), 0.0);
}

Latent CoordinateGridGenerator::upsample() const {
  const Shape gs = grid_shape();
  const Tensor3 g(gs, params_);
  Latent out(shape_);
  for (int c = 0; c < shape_.channels; ++c) {
    for (int y = 0; y < shape_.height; ++y) {
      const Tap& r = rows_[static_cast<std::size_t>(y)];
      for (int x = 0; x < shape_.width; ++x) {
        const Tap& q = cols_[static_cast<std::size_t>(x)];
        out(c, y, x) = r.w0 * (q.w0 * g(c, r.i0, q.i0) + q.w1 * g(c, r.i0, q.i1)) +
                       r.w1 * (q.w0 * g(c, r.i1, q.i0) + q.w1 * g(c, r.i1, q.i1));
      }
    }
  }
  return out;
}

Latent CoordinateGridGenerator::render(int view) const {
  if (view < 0 || view >= num_views()) {
    throw Error(ErrorCode::out_of_range, fmt::format("view {} outside [0, {})", view, num_views()));
  }
  const auto [dy, dx] = shifts_[static_cast<std::size_t>(view)];
  return roll(upsample(), dy, dx);
}

std::vector<double> CoordinateGridGenerator::render_vjp(int view, const Latent& g) const {
  if (view < 0 || view >= num_views()) {
    throw Error(ErrorCode::out_of_range, fmt::format("view {} outside [0, {})", view, num_views()));
  }
  if (!(g.shape() == shape_)) throw Error(ErrorCode::shape_mismatch, "render_vjp: gradient shape");
  const auto [dy, dx] = shifts_[static_cast<std::size_t>(view)];
  const Latent back = roll(g, -dy, -dx);
  Tensor3 out(grid_shape());
  for (int c = 0; c < shape_.channels; ++c) {
    for (int y = 0; y < shape_.height; ++y) {
      const Tap& r = rows_[static_cast<std::size_t>(y)];
      for (int x = 0; x < shape_.width; ++x) {
        const Tap& q = cols_[static_cast<std::size_t>(x)];
        const double v = back(c, y, x);
        out(c, r.i0, q.i0) += r.w0 * q.w0 * v;
        out(c, r.i0, q.i1) += r.w0 * q.w1 * v;
        out(c, r.i1, q.i0) += r.w1 * q.w0 * v;
        out(c, r.i1, q.i1) += r.w1 * q.w1 * v;
      }
    }
  }
  return out.storage();
}

std::unique_ptr<Generator> CoordinateGridGenerator::clone() const {
  return std::make_unique<CoordinateGridGenerator>(*this);
}

void CoordinateGridGenerator::fit(const Latent& target, int iterations) {
  if (!(target.shape() == shape_)) throw Error(ErrorCode::shape_mismatch, "fit: target shape");
  const std::size_t n = params_.size();
  auto normal_op = [&](const std::vector<double>& p) {
    CoordinateGridGenerator tmp(*this);
    tmp.params_ = p;
    return tmp.render_vjp(0, tmp.render(0));
  };
  std::fill(params_.begin(), params_.end(), 0.0);
  std::vector<double> r = render_vjp(0, target);
  std::vector<double> d = r;
  double rr = 0.0;
  for (double v : r) rr += v * v;
  const double stop = 1e-28 * std::max(rr, 1.0);
  for (int it = 0; it < iterations && rr > stop; ++it) {
    const std::vector<double> ad = normal_op(d);
    double dad = 0.0;
    for (std::size_t i = 0; i < n; ++i) dad += d[i] * ad[i];
    if (!(dad > 0.0)) break;
    const double alpha = rr / dad;
    double rr_new = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      params_[i] += alpha * d[i];
      r[i] -= alpha * ad[i];
      rr_new += r[i] * r[i];
    }
    const double beta = rr_new / rr;
    for (std::size_t i = 0; i < n; ++i) d[i] = r[i] + beta * d[i];
    rr = rr_new;
  }
}

}  // namespace cds
