#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "cds/cut.hpp"
#include "cds/rng.hpp"
#include "cds/schedule.hpp"
#include "cds/toy_backend.hpp"

namespace cds::test {

inline Tensor3 random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  Tensor3 t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

inline std::shared_ptr<const NoiseSchedule> default_schedule() {
  return std::make_shared<const NoiseSchedule>(make_schedule(ScheduleKind::scaled_linear, 1000));
}

struct Toy {
  std::shared_ptr<const NoiseSchedule> sched;
  std::unique_ptr<ToyBackend> backend;
};

inline Toy make_toy(int side, double sigma = 0.25) {
  Toy toy;
  toy.sched = default_schedule();
  ToyBackendConfig c;
  c.latent_shape = {3, side, side};
  c.sigma = sigma;
  toy.backend = std::make_unique<ToyBackend>(c, toy.sched);
  return toy;
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

// Triple loop over (layer, query, candidate) with its own patch gathering and
// long double softmax. Mean over all terms.
inline double naive_patchnce(const std::vector<FeatureMap>& tgt, const std::vector<FeatureMap>& ref,
                             const PatchConfig& cfg, const PatchPlan& plan) {
  auto gather = [&](const Tensor3& m, Location loc, int p) {
    std::vector<long double> v;
    for (int c = 0; c < m.shape().channels; ++c)
      for (int dy = 0; dy < p; ++dy)
        for (int dx = 0; dx < p; ++dx) v.push_back(m(c, loc.row + dy, loc.col + dx));
    if (cfg.normalize) {
      long double n = 0;
      for (long double x : v) n += x * x;
      n = std::sqrt(n);
      for (long double& x : v) x /= n;
    }
    return v;
  };
  long double total = 0;
  int terms = 0;
  for (const LayerPlan& lp : plan) {
    const Tensor3* t = nullptr;
    const Tensor3* r = nullptr;
    for (const auto& f : tgt) if (f.layer_id == lp.layer_id) t = &f.data;
    for (const auto& f : ref) if (f.layer_id == lp.layer_id) r = &f.data;
    for (std::size_t s = 0; s < lp.locations.size(); ++s) {
      const auto q = gather(*t, lp.locations[s], lp.patch_size);
      long double pos = 0, denom = 0;
      for (std::size_t j = 0; j < lp.locations.size(); ++j) {
        const auto k = gather(*r, lp.locations[j], lp.patch_size);
        long double d = 0;
        for (std::size_t i = 0; i < q.size(); ++i) d += q[i] * k[i];
        const long double e = std::exp(d / cfg.tau);
        denom += e;
        if (j == s) pos = e;
      }
      total += -std::log(pos / denom);
      ++terms;
    }
  }
  return static_cast<double>(cfg.aggregation == Aggregation::mean ? total / terms : total);
}

}  // namespace cds::test
