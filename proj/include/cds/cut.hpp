#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cds/backend.hpp"
#include "cds/rng.hpp"

namespace cds {

enum class LayerPolicy { up_path_no_bottleneck, all_tapped, explicit_list };
enum class Aggregation { mean, sum };

std::string to_string(LayerPolicy p);
LayerPolicy parse_layer_policy(std::string_view name);

struct PatchConfig {
  int num_patches = 256;
  // Unset: mixed sizes, 1x1 on the two coarsest selected layers and 2x2 on
  // the finer ones.
  std::optional<int> patch_size;
  double tau = 0.07;
  LayerPolicy layer_policy = LayerPolicy::up_path_no_bottleneck;
  std::vector<std::string> layers;  // used by explicit_list
  bool normalize = true;
  Aggregation aggregation = Aggregation::mean;
};

void validate(const PatchConfig& cfg);
nlohmann::json to_json(const PatchConfig& cfg);
PatchConfig patch_config_from_json(const nlohmann::json& j, PatchConfig base = {});

struct Location {
  int row = 0;
  int col = 0;
  bool operator==(const Location&) const = default;
};

enum class PatchRole { query, positive };

struct PatchSet {
  std::string layer_id;
  std::vector<Location> locations;
  int patch_size = 1;
  int dim = 0;                  // patch_size^2 * channels
  std::vector<double> vectors;  // locations.size() x dim, row-major
  PatchRole role = PatchRole::query;

  std::span<const double> row(std::size_t s) const {
    return std::span<const double>(vectors).subspan(s * static_cast<std::size_t>(dim),
                                                    static_cast<std::size_t>(dim));
  }
};

// Sampled locations for one layer, shared by the query and positive sets.
struct LayerPlan {
  std::string layer_id;
  int patch_size = 1;
  std::vector<Location> locations;
};

using PatchPlan = std::vector<LayerPlan>;

nlohmann::json to_json(const PatchPlan& plan);

struct CutLoss {
  double value = 0.0;
  std::map<std::string, double> per_layer;  // mean term per layer
  int num_terms = 0;
};

struct CutLossWithGrad {
  CutLoss loss;
  std::vector<FeatureMap> grad_target;  // d value / d target features, one per planned layer
};

// min(num_patches, (h - p + 1) (w - p + 1)) distinct top-left corners, drawn
// uniformly without replacement. When every position is taken they come back
// in raster order.
std::vector<Location> sample_locations(int height, int width, int patch_size, int num_patches,
                                       Rng& rng);

// Row s is the p x p x C block at locations[s], flattened channel-major
// (index c * p * p + dy * p + dx), L2-normalized when requested.
PatchSet extract_patches(const FeatureMap& fm, std::span<const Location> locations,
                         int patch_size, bool normalize, PatchRole role = PatchRole::query);

// -log(exp(q.p / tau) / (exp(q.p / tau) + sum_n exp(q.n / tau))) via
// log-sum-exp. `negatives` is row-major (count x query.size()).
double info_nce(std::span<const double> query, std::span<const double> positive,
                std::span<const double> negatives, double tau);

// Layer ids the policy selects from a backend, shallowest first. Throws
// invalid_config when nothing remains.
std::vector<std::string> select_layers(const BackendDescriptor& desc, const PatchConfig& cfg);

// Patch side for each layer of `layer_shapes` (same order).
std::vector<int> patch_sizes_for(std::span<const Shape> layer_shapes, const PatchConfig& cfg);

// Fresh per-layer locations; layers are drawn independently in list order.
PatchPlan plan_patches(std::span<const FeatureMap> features, const PatchConfig& cfg, Rng& rng);

// PatchNCE between target-branch queries and reference-branch positives and
// negatives (the other sampled patches of the same reference layer).
CutLoss patchnce_loss(std::span<const FeatureMap> features_tgt,
                      std::span<const FeatureMap> features_ref, const PatchConfig& cfg, Rng& rng);
CutLoss patchnce_loss_at(std::span<const FeatureMap> features_tgt,
                         std::span<const FeatureMap> features_ref, const PatchConfig& cfg,
                         const PatchPlan& plan);
// Loss plus its gradient with respect to the target features. Reference
// features are constants.
CutLossWithGrad patchnce_loss_grad(std::span<const FeatureMap> features_tgt,
                                   std::span<const FeatureMap> features_ref,
                                   const PatchConfig& cfg, const PatchPlan& plan);

}  // namespace cds
