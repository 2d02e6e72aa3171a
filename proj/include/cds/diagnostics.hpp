#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cds/backend.hpp"
#include "cds/editor.hpp"
#include "cds/image.hpp"

namespace cds {

enum class HeatmapNorm { per_image, global };

struct Heatmap {
  int height = 0;
  int width = 0;
  std::vector<double> data;  // row-major, nonnegative
  HeatmapNorm normalization = HeatmapNorm::per_image;
  std::string colormap = "heat";

  double at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

// Per-pixel L2 norm across channels, without normalization.
Heatmap gradient_magnitude(const Tensor3& grad);
// per_image divides by the map's own max; global divides by `global_max`
// (> 0), the max over every map of a run. An all-zero map stays zero.
Heatmap gradient_heatmap(const Tensor3& grad, HeatmapNorm norm = HeatmapNorm::per_image,
                         double global_max = 0.0);
// "gray" or "heat" (black, red, yellow, white). Values are clamped to [0, 1].
Image heatmap_to_image(const Heatmap& h, std::string_view colormap = "heat");

struct StructureDistance {
  double value = 0.0;
  std::string layer_id;
  std::string definition = "self-similarity-frobenius";
};

// ||S(a) - S(b)||_F / N with S the N x N cosine self-similarity over spatial
// positions; rows of zero vectors are zero.
StructureDistance self_similarity_distance(const FeatureMap& a, const FeatureMap& b);

// Coarsest tapped layer that is not the bottleneck.
std::string default_structure_layer(const BackendDescriptor& desc);

// Structure distance between two clean latents on `layer` (default layer when
// empty); features come from a null-prompt pass at timestep `t`.
StructureDistance structure_distance(const Denoiser& backend, const Latent& a, const Latent& b,
                                     std::string layer = {}, int t = 1);

// Displacement of `z` from `source` along the unit direction mu_ref -> mu_tgt.
double semantic_shift(const Latent& z, const Latent& source, const Latent& mu_ref, const Latent& mu_tgt);

struct SeriesSummary {
  double min = 0.0;
  int argmin = 0;
  double max = 0.0;
  double final = 0.0;
};

SeriesSummary summarize_series(std::span<const double> values);
// Step s with the largest positive drop values[s-1] - values[s]; -1 if none.
int max_drop_step(std::span<const double> values);

nlohmann::json summarize_run(const EditResult& result);

}  // namespace cds
