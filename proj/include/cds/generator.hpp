#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cds/tensor.hpp"

namespace cds {

enum class GeneratorKind { identity_latent, coordinate_grid_toy };

std::string to_string(GeneratorKind kind);

// Differentiable parameterization theta -> z0(theta). A generator may render
// several views; view v pairs with source view v in the editor.
class Generator {
 public:
  virtual ~Generator() = default;

  virtual GeneratorKind kind() const = 0;
  virtual Shape latent_shape() const = 0;
  virtual int num_views() const { return 1; }
  virtual Latent render(int view = 0) const = 0;
  // (d render(view) / d theta)^T g
  virtual std::vector<double> render_vjp(int view, const Latent& g) const = 0;

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  virtual std::unique_ptr<Generator> clone() const = 0;

 protected:
  std::vector<double> params_;
};

// theta is the latent itself.
class IdentityLatentGenerator final : public Generator {
 public:
  explicit IdentityLatentGenerator(const Latent& init);

  GeneratorKind kind() const override { return GeneratorKind::identity_latent; }
  Shape latent_shape() const override { return shape_; }
  Latent render(int view = 0) const override;
  std::vector<double> render_vjp(int view, const Latent& g) const override;
  std::unique_ptr<Generator> clone() const override;

 private:
  Shape shape_;
};

// Trainable C x G x G grid, bilinearly upsampled (periodic boundary) to the
// latent size. View v is the upsampled field cyclically shifted by shifts[v].
class CoordinateGridGenerator final : public Generator {
 public:
  CoordinateGridGenerator(Shape latent_shape, int grid_size,
                          std::vector<std::pair<int, int>> shifts = {{0, 0}});

  GeneratorKind kind() const override { return GeneratorKind::coordinate_grid_toy; }
  Shape latent_shape() const override { return shape_; }
  int num_views() const override { return static_cast<int>(shifts_.size()); }
  Latent render(int view = 0) const override;
  std::vector<double> render_vjp(int view, const Latent& g) const override;
  std::unique_ptr<Generator> clone() const override;

  int grid_size() const { return grid_; }
  const std::vector<std::pair<int, int>>& shifts() const { return shifts_; }
  Shape grid_shape() const { return Shape{shape_.channels, grid_, grid_}; }

  // Least-squares fit of the grid to view 0 of `target` by conjugate
  // gradients on the normal equations.
  void fit(const Latent& target, int iterations = 200);

 private:
  struct Tap {
    int i0, i1;
    double w0, w1;
  };
  Latent upsample() const;

  Shape shape_;
  int grid_;
  std::vector<std::pair<int, int>> shifts_;
  std::vector<Tap> rows_;
  std::vector<Tap> cols_;
};

}  // namespace cds
