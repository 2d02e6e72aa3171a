#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "cds/backend.hpp"

namespace cds {

struct ToyBackendConfig {
  std::vector<std::string> vocabulary{"cat", "dog", "cow", "pig", "fox", "owl"};
  double sigma = 0.25;
  std::uint64_t seed = 7;
  int layer_count = 4;  // conv stage + (layer_count - 1) attention stages
  Shape latent_shape{3, 64, 64};
  int embedding_dim = 8;
  std::vector<int> widths{8, 8, 16, 16};  // feature channels per stage
  double color_scale = 0.6;               // per-class channel offsets in [-s, s]
  double structure_scale = 0.25;          // amplitude of per-class spatial blobs
  double stem_blur = 0.06;                // Gaussian low-pass before conv0, sigma as a fraction of the side
};

ToyBackendConfig toy_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ToyBackendConfig& c);

// Intermediate values of one feature-network pass, kept for backprop.
struct ToyActivations;

// Analytic denoiser over a K-class Gaussian mixture of latents: class k has
// prior N(mu_k, sigma^2 I). The noise predictor is the exact posterior-mean
// predictor, eps = (z_t - a_t E[z0 | z_t]) / b_t, where a conditional
// embedding selects mixture weights w_k ~ (emb . u_k)^2 over the orthonormal
// vocabulary basis u_k and the null embedding weights all classes equally.
//
// Feature taps come from a fixed, seeded network on z_t:
//   stem    fixed Gaussian low-pass
//   conv0   3x3 zero-sum kernels + tanh, full resolution
//   attnL   stride-2 conv + tanh, then softmax self-attention with a residual
// The deepest stage is the bottleneck; it also mixes in the spatial mean of
// z_t, which makes it the semantic-mixing layer. The zero-sum first stage
// makes every other tap blind to per-channel constant offsets.
class ToyBackend final : public Denoiser {
 public:
  ToyBackend(ToyBackendConfig config, std::shared_ptr<const NoiseSchedule> schedule);
  ~ToyBackend() override;

  const BackendDescriptor& descriptor() const override { return descriptor_; }
  const ToyBackendConfig& config() const { return config_; }
  const NoiseSchedule& schedule() const { return *schedule_; }

  TextEmbedding embed_prompt(std::string_view prompt) const override;
  DenoiserOutput predict_noise(const Latent& z_t, const TextEmbedding& emb, int t,
                               std::span<const std::string> taps) const override;
  Latent noise_vjp(const Latent& z_t, const TextEmbedding& emb, int t,
                   const Latent& grad_eps) const override;
  Latent features_vjp(const Latent& z_t, const TextEmbedding& emb, int t,
                      std::span<const FeatureMap> grads) const override;
  Latent encode_image(const Image& image) const override;
  Image decode_latent(const Latent& z) const override;

  // Independent of prompt and timestep.
  std::vector<FeatureMap> feature_taps(const Latent& z, std::span<const std::string> taps) const;
  std::vector<FeatureMap> feature_taps(const Latent& z) const;

  int num_classes() const { return static_cast<int>(means_.size()); }
  const Latent& class_mean(int k) const { return means_.at(static_cast<std::size_t>(k)); }
  const Latent& class_mean(std::string_view word) const;
  int class_index(std::string_view word) const;

  // Mixture weights implied by an embedding (sum to one).
  std::vector<double> class_weights(const TextEmbedding& emb) const;
  // Posterior class probabilities p(k | z_t) under the given weights.
  std::vector<double> responsibilities(const Latent& z_t, const std::vector<double>& weights,
                                       int t) const;

 private:
  struct Stage;

  ToyActivations forward(const Latent& z) const;
  ToyActivations forward_until(const Latent& z, int last_stage) const;
  void init_network(Rng& rng);
  void init_means(Rng& rng);

  ToyBackendConfig config_;
  std::shared_ptr<const NoiseSchedule> schedule_;
  BackendDescriptor descriptor_;
  std::vector<Latent> means_;
  std::vector<Stage> stages_;
  std::vector<double> stem_taps_;
};

// A structured source scene: the class mean of `word` plus a seeded soft
// ellipse and stripe, so the latent has layout that the class means lack.
Latent toy_source_latent(const ToyBackend& backend, std::string_view word, std::uint64_t seed);

}  // namespace cds
