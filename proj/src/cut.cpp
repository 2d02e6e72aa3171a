#include "cds/cut.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "cds/error.hpp"
#include "cds/kernels.hpp"

namespace cds {

namespace {

constexpr double kNormFloor = 1e-12;

double norm_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

struct LayerPair {
  const FeatureMap* tgt;
  const FeatureMap* ref;
};

const FeatureMap* find_layer(std::span<const FeatureMap> maps, std::string_view id) {
  for (const FeatureMap& m : maps) {
    if (m.layer_id == id) return &m;
  }
  return nullptr;
}

std::vector<LayerPair> match_layers(std::span<const FeatureMap> tgt, std::span<const FeatureMap> ref,
                                    const PatchConfig& cfg) {
  std::vector<std::string> ids;
  if (cfg.layer_policy == LayerPolicy::explicit_list) {
    ids = cfg.layers;
  } else {
    for (const FeatureMap& m : tgt) ids.push_back(m.layer_id);
  }
  if (ids.empty()) throw Error(ErrorCode::invalid_config, "no layers left for the contrastive loss");
  std::vector<LayerPair> pairs;
  for (const std::string& id : ids) {
    const FeatureMap* t = find_layer(tgt, id);
    const FeatureMap* r = find_layer(ref, id);
    if (t == nullptr || r == nullptr) {
      throw Error(ErrorCode::shape_mismatch, fmt::format("layer '{}' missing from one branch", id));
    }
    if (!(t->data.shape() == r->data.shape())) {
      throw Error(ErrorCode::shape_mismatch,
                  fmt::format("layer '{}' shape {} vs {}", id, to_string(t->data.shape()),
                              to_string(r->data.shape())));
    }
    pairs.push_back({t, r});
  }
  return pairs;
}

const LayerPlan& plan_for(const PatchPlan& plan, std::string_view id) {
  for (const LayerPlan& lp : plan) {
    if (lp.layer_id == id) return lp;
  }
  throw Error(ErrorCode::invalid_argument, fmt::format("patch plan has no entry for layer '{}'", id));
}

// Sum over s of the per-query NCE terms for one layer; writes
// d(sum)/d(query vectors) into grad_q when it is non-null.
double layer_nce(const PatchSet& q, const PatchSet& r, double tau, std::vector<double>* grad_q) {
  const int s_count = static_cast<int>(q.locations.size());
  const int d = q.dim;
  const std::vector<double> logits = kernels::gram(q.vectors, r.vectors, s_count, s_count, d);
  if (grad_q != nullptr) grad_q->assign(q.vectors.size(), 0.0);
  double total = 0.0;
  std::vector<double> p(static_cast<std::size_t>(s_count));
  for (int s = 0; s < s_count; ++s) {
    const double* row = &logits[static_cast<std::size_t>(s) * s_count];
    double mx = -INFINITY;
    for (int j = 0; j < s_count; ++j) mx = std::max(mx, row[j] / tau);
    double z = 0.0;
    for (int j = 0; j < s_count; ++j) {
      p[static_cast<std::size_t>(j)] = std::exp(row[j] / tau - mx);
      z += p[static_cast<std::size_t>(j)];
    }
    total += mx + std::log(z) - row[s] / tau;
    if (grad_q != nullptr) {
      double* g = &(*grad_q)[static_cast<std::size_t>(s) * d];
      for (int j = 0; j < s_count; ++j) {
        const double w = (p[static_cast<std::size_t>(j)] / z - (j == s ? 1.0 : 0.0)) / tau;
        if (w == 0.0) continue;
        const double* rj = &r.vectors[static_cast<std::size_t>(j) * d];
        for (int c = 0; c < d; ++c) g[c] += w * rj[c];
      }
    }
  }
  return total;
}

CutLossWithGrad patchnce_impl(std::span<const FeatureMap> features_tgt,
                              std::span<const FeatureMap> features_ref, const PatchConfig& cfg,
                              const PatchPlan& plan, bool want_grad) {
  validate(cfg);
  const std::vector<LayerPair> pairs = match_layers(features_tgt, features_ref, cfg);

  struct Term {
    double sum;
    int count;
  };
  std::vector<Term> terms;
  std::vector<std::vector<double>> grads(pairs.size());
  std::vector<PatchSet> queries;
  int total_terms = 0;
  for (std::size_t l = 0; l < pairs.size(); ++l) {
    const LayerPlan& lp = plan_for(plan, pairs[l].tgt->layer_id);
    PatchSet q = extract_patches(*pairs[l].tgt, lp.locations, lp.patch_size, cfg.normalize, PatchRole::query);
    const PatchSet r = extract_patches(*pairs[l].ref, lp.locations, lp.patch_size, cfg.normalize, PatchRole::positive);
    const double sum = layer_nce(q, r, cfg.tau, want_grad ? &grads[l] : nullptr);
    const int count = static_cast<int>(lp.locations.size());
    terms.push_back({sum, count});
    total_terms += count;
    queries.push_back(std::move(q));
  }

  CutLossWithGrad out;
  double total = 0.0;
  for (std::size_t l = 0; l < pairs.size(); ++l) {
    total += terms[l].sum;
    out.loss.per_layer[pairs[l].tgt->layer_id] = terms[l].count > 0 ? terms[l].sum / terms[l].count : 0.0;
  }
  out.loss.num_terms = total_terms;
  const double weight = cfg.aggregation == Aggregation::mean && total_terms > 0 ? 1.0 / total_terms : 1.0;
  out.loss.value = total * weight;
  if (!want_grad) return out;

  for (std::size_t l = 0; l < pairs.size(); ++l) {
    const FeatureMap& fm = *pairs[l].tgt;
    const LayerPlan& lp = plan_for(plan, fm.layer_id);
    const int p = lp.patch_size;
    const int d = queries[l].dim;
    FeatureMap g{fm.layer_id, Tensor3(fm.data.shape()), fm.tap_point};
    std::vector<double> block(static_cast<std::size_t>(d));
    for (std::size_t s = 0; s < lp.locations.size(); ++s) {
      const Location loc = lp.locations[s];
      const double* dq = &grads[l][s * static_cast<std::size_t>(d)];
      // Back through the normalization q = h / |h|.
      if (cfg.normalize) {
        std::size_t k = 0;
        double n2 = 0.0;
        for (int c = 0; c < fm.data.shape().channels; ++c) {
          for (int dy = 0; dy < p; ++dy) {
            for (int dx = 0; dx < p; ++dx, ++k) {
              block[k] = fm.data(c, loc.row + dy, loc.col + dx);
              n2 += block[k] * block[k];
            }
          }
        }
        const double n = std::max(std::sqrt(n2), kNormFloor);
        double qdq = 0.0;
        for (int k2 = 0; k2 < d; ++k2) qdq += (block[static_cast<std::size_t>(k2)] / n) * dq[k2];
        for (int k2 = 0; k2 < d; ++k2) {
          block[static_cast<std::size_t>(k2)] = (dq[k2] - (block[static_cast<std::size_t>(k2)] / n) * qdq) / n;
        }
      } else {
        std::copy(dq, dq + d, block.begin());
      }
      std::size_t k = 0;
      for (int c = 0; c < fm.data.shape().channels; ++c) {
        for (int dy = 0; dy < p; ++dy) {
          for (int dx = 0; dx < p; ++dx, ++k) g.data(c, loc.row + dy, loc.col + dx) += weight * block[k];
        }
      }
    }
    out.grad_target.push_back(std::move(g));
  }
  return out;
}

}  // namespace

std::string to_string(LayerPolicy p) {
  switch (p) {
    case LayerPolicy::up_path_no_bottleneck: return "up_path_no_bottleneck";
    case LayerPolicy::all_tapped: return "all_tapped";
    case LayerPolicy::explicit_list: return "explicit";
  }
  return "unknown";
}

LayerPolicy parse_layer_policy(std::string_view name) {
  if (name == "up_path_no_bottleneck") return LayerPolicy::up_path_no_bottleneck;
  if (name == "all_tapped") return LayerPolicy::all_tapped;
  if (name == "explicit") return LayerPolicy::explicit_list;
  throw Error(ErrorCode::invalid_config, fmt::format("unknown layer policy '{}'", name));
}

void validate(const PatchConfig& cfg) {
  if (cfg.num_patches < 1) throw Error(ErrorCode::invalid_config, "num_patches must be at least 1");
  if (!(cfg.tau > 0.0) || !std::isfinite(cfg.tau)) {
    throw Error(ErrorCode::invalid_config, "tau must be positive");
  }
  if (cfg.patch_size && *cfg.patch_size < 1) {
    throw Error(ErrorCode::invalid_config, "patch_size must be at least 1");
  }
}

nlohmann::json to_json(const PatchConfig& cfg) {
  nlohmann::json j{{"num_patches", cfg.num_patches},
                   {"patch_size", cfg.patch_size ? nlohmann::json(*cfg.patch_size) : nlohmann::json("mixed")},
                   {"tau", cfg.tau},
                   {"layer_policy", to_string(cfg.layer_policy)},
                   {"layers", cfg.layers},
                   {"normalize", cfg.normalize},
                   {"aggregation", cfg.aggregation == Aggregation::mean ? "mean" : "sum"}};
  return j;
}

PatchConfig patch_config_from_json(const nlohmann::json& j, PatchConfig c) {
  if (j.is_null()) return c;
  try {
    if (j.contains("num_patches")) c.num_patches = j.at("num_patches").get<int>();
    if (j.contains("patch_size")) {
      const auto& p = j.at("patch_size");
      if (p.is_string() && p.get<std::string>() == "mixed") {
        c.patch_size.reset();
      } else {
        c.patch_size = p.get<int>();
      }
    }
    if (j.contains("tau")) c.tau = j.at("tau").get<double>();
    if (j.contains("layer_policy")) c.layer_policy = parse_layer_policy(j.at("layer_policy").get<std::string>());
    if (j.contains("layers")) c.layers = j.at("layers").get<std::vector<std::string>>();
    if (j.contains("normalize")) c.normalize = j.at("normalize").get<bool>();
    if (j.contains("aggregation")) {
      const std::string a = j.at("aggregation").get<std::string>();
      if (a == "mean") {
        c.aggregation = Aggregation::mean;
      } else if (a == "sum") {
        c.aggregation = Aggregation::sum;
      } else {
        throw Error(ErrorCode::invalid_config, "aggregation must be 'mean' or 'sum'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::invalid_config, std::string("patch config: ") + e.what());
  }
  validate(c);
  return c;
}

nlohmann::json to_json(const PatchPlan& plan) {
  nlohmann::json out = nlohmann::json::array();
  for (const LayerPlan& lp : plan) {
    nlohmann::json locs = nlohmann::json::array();
    for (const Location& l : lp.locations) locs.push_back({l.row, l.col});
    out.push_back({{"layer", lp.layer_id}, {"patch_size", lp.patch_size}, {"locations", locs}});
  }
  return out;
}

std::vector<Location> sample_locations(int height, int width, int patch_size, int num_patches,
                                       Rng& rng) {
  if (patch_size < 1 || num_patches < 1) {
    throw Error(ErrorCode::invalid_argument, "patch size and count must be positive");
  }
  if (height < patch_size || width < patch_size) {
    throw Error(ErrorCode::invalid_argument,
                fmt::format("{}x{} map is smaller than a {}x{} patch", height, width, patch_size, patch_size));
  }
  const int rows = height - patch_size + 1;
  const int cols = width - patch_size + 1;
  const int total = rows * cols;
  std::vector<Location> out;
  if (num_patches >= total) {
    out.reserve(static_cast<std::size_t>(total));
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) out.push_back({r, c});
    }
    return out;
  }
  // Partial Fisher-Yates over position indices.
  std::vector<int> idx(static_cast<std::size_t>(total));
  std::iota(idx.begin(), idx.end(), 0);
  out.reserve(static_cast<std::size_t>(num_patches));
  for (int i = 0; i < num_patches; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(i, total - 1));
    std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
    out.push_back({idx[static_cast<std::size_t>(i)] / cols, idx[static_cast<std::size_t>(i)] % cols});
  }
  return out;
}

PatchSet extract_patches(const FeatureMap& fm, std::span<const Location> locations,
                         int patch_size, bool normalize, PatchRole role) {
  const Shape& s = fm.data.shape();
  PatchSet ps;
  ps.layer_id = fm.layer_id;
  ps.locations.assign(locations.begin(), locations.end());
  ps.patch_size = patch_size;
  ps.dim = patch_size * patch_size * s.channels;
  ps.role = role;
  ps.vectors.resize(locations.size() * static_cast<std::size_t>(ps.dim));
  for (std::size_t i = 0; i < locations.size(); ++i) {
    const Location loc = locations[i];
    if (loc.row < 0 || loc.col < 0 || loc.row + patch_size > s.height || loc.col + patch_size > s.width) {
      throw Error(ErrorCode::out_of_range,
                  fmt::format("patch at ({}, {}) size {} outside {} map '{}'", loc.row, loc.col,
                              patch_size, to_string(s), fm.layer_id));
    }
    double* row = &ps.vectors[i * static_cast<std::size_t>(ps.dim)];
    std::size_t k = 0;
    for (int c = 0; c < s.channels; ++c) {
      for (int dy = 0; dy < patch_size; ++dy) {
        for (int dx = 0; dx < patch_size; ++dx) row[k++] = fm.data(c, loc.row + dy, loc.col + dx);
      }
    }
    if (normalize) {
      const double n = std::max(norm_of({row, static_cast<std::size_t>(ps.dim)}), kNormFloor);
      for (int c = 0; c < ps.dim; ++c) row[c] /= n;
    }
  }
  return ps;
}

double info_nce(std::span<const double> query, std::span<const double> positive,
                std::span<const double> negatives, double tau) {
  if (!(tau > 0.0)) throw Error(ErrorCode::invalid_argument, "tau must be positive");
  const std::size_t d = query.size();
  if (positive.size() != d || (d == 0 ? !negatives.empty() : negatives.size() % d != 0)) {
    throw Error(ErrorCode::shape_mismatch, "info_nce: vector dimensions differ");
  }
  auto dotp = [&](std::span<const double> other) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += query[i] * other[i];
    return s / tau;
  };
  const double l_pos = dotp(positive);
  const std::size_t n = d == 0 ? 0 : negatives.size() / d;
  std::vector<double> l(n + 1);
  l[0] = l_pos;
  for (std::size_t j = 0; j < n; ++j) l[j + 1] = dotp(negatives.subspan(j * d, d));
  const double mx = *std::max_element(l.begin(), l.end());
  double z = 0.0;
  for (double v : l) z += std::exp(v - mx);
  return mx + std::log(z) - l_pos;
}

std::vector<std::string> select_layers(const BackendDescriptor& desc, const PatchConfig& cfg) {
  std::vector<std::string> out;
  switch (cfg.layer_policy) {
    case LayerPolicy::all_tapped:
      for (const LayerInfo& l : desc.layers) out.push_back(l.id);
      break;
    case LayerPolicy::up_path_no_bottleneck:
      for (const LayerInfo& l : desc.layers) {
        if (!l.bottleneck) out.push_back(l.id);
      }
      break;
    case LayerPolicy::explicit_list:
      for (const std::string& id : cfg.layers) {
        (void)desc.layer(id);
        out.push_back(id);
      }
      break;
  }
  if (out.empty()) throw Error(ErrorCode::invalid_config, "layer policy selects no layers");
  return out;
}

std::vector<int> patch_sizes_for(std::span<const Shape> layer_shapes, const PatchConfig& cfg) {
  std::vector<int> sizes(layer_shapes.size(), cfg.patch_size.value_or(2));
  if (cfg.patch_size) return sizes;
  std::vector<std::size_t> order(layer_shapes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return layer_shapes[a].plane() < layer_shapes[b].plane();
  });
  for (std::size_t i = 0; i < order.size() && i < 2; ++i) sizes[order[i]] = 1;
  return sizes;
}

PatchPlan plan_patches(std::span<const FeatureMap> features, const PatchConfig& cfg, Rng& rng) {
  validate(cfg);
  std::vector<const FeatureMap*> maps;
  if (cfg.layer_policy == LayerPolicy::explicit_list) {
    for (const std::string& id : cfg.layers) {
      const FeatureMap* m = find_layer(features, id);
      if (m == nullptr) throw Error(ErrorCode::unknown_tap, fmt::format("no features for layer '{}'", id));
      maps.push_back(m);
    }
  } else {
    for (const FeatureMap& m : features) maps.push_back(&m);
  }
  if (maps.empty()) throw Error(ErrorCode::invalid_config, "no layers left for the contrastive loss");
  std::vector<Shape> shapes;
  for (const FeatureMap* m : maps) shapes.push_back(m->data.shape());
  const std::vector<int> sizes = patch_sizes_for(shapes, cfg);
  PatchPlan plan;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const Shape& s = shapes[i];
    plan.push_back({maps[i]->layer_id, sizes[i],
                    sample_locations(s.height, s.width, sizes[i], cfg.num_patches, rng)});
  }
  return plan;
}

CutLoss patchnce_loss(std::span<const FeatureMap> features_tgt,
                      std::span<const FeatureMap> features_ref, const PatchConfig& cfg, Rng& rng) {
  const PatchPlan plan = plan_patches(features_tgt, cfg, rng);
  return patchnce_impl(features_tgt, features_ref, cfg, plan, false).loss;
}

CutLoss patchnce_loss_at(std::span<const FeatureMap> features_tgt,
                         std::span<const FeatureMap> features_ref, const PatchConfig& cfg,
                         const PatchPlan& plan) {
  return patchnce_impl(features_tgt, features_ref, cfg, plan, false).loss;
}

CutLossWithGrad patchnce_loss_grad(std::span<const FeatureMap> features_tgt,
                                   std::span<const FeatureMap> features_ref,
                                   const PatchConfig& cfg, const PatchPlan& plan) {
  return patchnce_impl(features_tgt, features_ref, cfg, plan, true);
}

}  // namespace cds
