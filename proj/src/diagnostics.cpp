#include "cds/diagnostics.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "cds/error.hpp"
#include "cds/kernels.hpp"

namespace cds {

Heatmap gradient_magnitude(const Tensor3& grad) {
  if (!grad.all_finite()) throw Error(ErrorCode::numerical, "gradient_heatmap: non-finite input");
  const Shape& s = grad.shape();
  Heatmap h;
  h.height = s.height;
  h.width = s.width;
  h.data.assign(s.plane(), 0.0);
  for (int c = 0; c < s.channels; ++c) {
    for (std::size_t i = 0; i < s.plane(); ++i) {
      const double v = grad[static_cast<std::size_t>(c) * s.plane() + i];
      h.data[i] += v * v;
    }
  }
  for (double& v : h.data) v = std::sqrt(v);
  return h;
}

Heatmap gradient_heatmap(const Tensor3& grad, HeatmapNorm norm, double global_max) {
  Heatmap h = gradient_magnitude(grad);
  h.normalization = norm;
  double scale = 0.0;
  if (norm == HeatmapNorm::per_image) {
    for (double v : h.data) scale = std::max(scale, v);
  } else {
    if (!(global_max > 0.0) || !std::isfinite(global_max)) {
      throw Error(ErrorCode::invalid_argument, "global heatmap normalization needs a positive max");
    }
    scale = global_max;
  }
  if (scale > 0.0) {
    for (double& v : h.data) v = std::min(v / scale, 1.0);
  }
  return h;
}

Image heatmap_to_image(const Heatmap& h, std::string_view colormap) {
  if (colormap != "gray" && colormap != "heat") {
    throw Error(ErrorCode::invalid_argument, fmt::format("unknown colormap '{}'", colormap));
  }
  Image img{h.width, h.height, std::vector<std::uint8_t>(static_cast<std::size_t>(h.width) * h.height * 3)};
  auto byte = [](double v) { return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0))); };
  for (int y = 0; y < h.height; ++y) {
    for (int x = 0; x < h.width; ++x) {
      const double v = std::clamp(h.at(y, x), 0.0, 1.0);
      if (colormap == "gray") {
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = byte(v);
      } else {
        img.at(x, y, 0) = byte(3.0 * v);
        img.at(x, y, 1) = byte(3.0 * v - 1.0);
        img.at(x, y, 2) = byte(3.0 * v - 2.0);
      }
    }
  }
  return img;
}

namespace {

// Position-major unit vectors (zero rows stay zero).
std::vector<double> unit_rows(const Tensor3& t) {
  const Shape& s = t.shape();
  const std::size_t n = s.plane();
  std::vector<double> out(n * static_cast<std::size_t>(s.channels));
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0.0;
    for (int c = 0; c < s.channels; ++c) {
      const double v = t[static_cast<std::size_t>(c) * n + i];
      out[i * static_cast<std::size_t>(s.channels) + static_cast<std::size_t>(c)] = v;
      norm += v * v;
    }
    if (norm > 0.0) {
      norm = std::sqrt(norm);
      for (int c = 0; c < s.channels; ++c) out[i * static_cast<std::size_t>(s.channels) + static_cast<std::size_t>(c)] /= norm;
    }
  }
  return out;
}

}  // namespace

StructureDistance self_similarity_distance(const FeatureMap& a, const FeatureMap& b) {
  if (!(a.data.shape() == b.data.shape())) {
    throw Error(ErrorCode::shape_mismatch,
                fmt::format("structure distance: {} vs {}", to_string(a.data.shape()), to_string(b.data.shape())));
  }
  const Shape& s = a.data.shape();
  const int n = static_cast<int>(s.plane());
  const std::vector<double> ua = unit_rows(a.data);
  const std::vector<double> ub = unit_rows(b.data);
  const std::vector<double> sa = kernels::gram(ua, ua, n, n, s.channels);
  const std::vector<double> sb = kernels::gram(ub, ub, n, n, s.channels);
  double sum = 0.0;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    const double d = sa[i] - sb[i];
    sum += d * d;
  }
  StructureDistance out;
  out.value = n > 0 ? std::sqrt(sum) / n : 0.0;
  out.layer_id = a.layer_id;
  return out;
}

std::string default_structure_layer(const BackendDescriptor& desc) {
  const LayerInfo* best = nullptr;
  for (const LayerInfo& l : desc.layers) {
    if (l.bottleneck) continue;
    if (best == nullptr || l.shape.plane() <= best->shape.plane()) best = &l;
  }
  if (best == nullptr) throw Error(ErrorCode::unknown_tap, "backend has no non-bottleneck layer");
  return best->id;
}

StructureDistance structure_distance(const Denoiser& backend, const Latent& a, const Latent& b,
                                     std::string layer, int t) {
  if (layer.empty()) layer = default_structure_layer(backend.descriptor());
  const TextEmbedding null = backend.embed_prompt(kNullPrompt);
  const std::vector<std::string> taps{layer};
  const DenoiserOutput fa = backend.predict_noise(a, null, t, taps);
  const DenoiserOutput fb = backend.predict_noise(b, null, t, taps);
  return self_similarity_distance(fa.features.at(0), fb.features.at(0));
}

double semantic_shift(const Latent& z, const Latent& source, const Latent& mu_ref, const Latent& mu_tgt) {
  require_same_shape(z, source, "semantic_shift");
  const Latent dir = mu_tgt - mu_ref;
  const double n = l2_norm(dir);
  if (!(n > 0.0)) throw Error(ErrorCode::invalid_argument, "semantic_shift: identical class means");
  return dot(z - source, dir) / n;
}

SeriesSummary summarize_series(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::invalid_argument, "cannot summarize an empty series");
  SeriesSummary s{values[0], 0, values[0], values.back()};
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] < s.min) {
      s.min = values[i];
      s.argmin = static_cast<int>(i);
    }
    s.max = std::max(s.max, values[i]);
  }
  return s;
}

int max_drop_step(std::span<const double> values) {
  int best = -1;
  double drop = 0.0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    const double d = values[i - 1] - values[i];
    if (d > drop) {
      drop = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

nlohmann::json summarize_run(const EditResult& result) {
  if (result.logs.empty()) throw Error(ErrorCode::invalid_argument, "run has no log records");
  std::vector<double> dds, con;
  for (const StepLog& l : result.logs) {
    dds.push_back(l.dds_norm);
    con.push_back(l.con_loss);
  }
  auto series = [](std::span<const double> v) {
    const SeriesSummary s = summarize_series(v);
    return nlohmann::json{{"min", s.min}, {"min_step", s.argmin}, {"max", s.max}, {"final", s.final}};
  };
  const int drop = max_drop_step(con);
  return {{"steps", result.logs.size()},
          {"method", result.method},
          {"dds_norm", series(dds)},
          {"con_loss", series(con)},
          {"con_loss_max_drop_step", drop < 0 ? nlohmann::json(nullptr) : nlohmann::json(drop)},
          {"wall_seconds", result.wall_seconds}};
}

}  // namespace cds
