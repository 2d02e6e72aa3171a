#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cds/image.hpp"
#include "cds/schedule.hpp"
#include "cds/tensor.hpp"

namespace cds {

enum class EmbeddingKind { conditional, null };

// The empty prompt is the reserved null token.
inline constexpr std::string_view kNullPrompt = "";

struct TextEmbedding {
  std::vector<double> vector;
  EmbeddingKind kind = EmbeddingKind::conditional;
  std::string prompt;

  bool operator==(const TextEmbedding&) const = default;
};

enum class TapPoint { attention_output, residual_plus_attention, conv_output };

std::string to_string(TapPoint tap);

struct FeatureMap {
  std::string layer_id;
  Tensor3 data;
  TapPoint tap_point = TapPoint::residual_plus_attention;
};

struct DenoiserOutput {
  Latent eps_hat;
  std::vector<FeatureMap> features;  // ordered by network depth
};

struct GuidanceConfig {
  double omega = 7.5;
};

struct LayerInfo {
  std::string id;
  Shape shape;
  TapPoint tap_point = TapPoint::residual_plus_attention;
  bool bottleneck = false;
  // Layer whose features carry global (prompt-like) content rather than
  // purely spatial layout.
  bool semantic_mixing = false;
};

struct BackendDescriptor {
  std::string name;
  Shape latent_shape;
  int embedding_dim = 0;
  std::vector<LayerInfo> layers;  // ordered by depth, shallowest first
  bool differentiable = false;
  bool thread_safe = true;
  bool deterministic = true;

  const LayerInfo& layer(std::string_view id) const;
  bool has_layer(std::string_view id) const;
};

nlohmann::json to_json(const BackendDescriptor& d);

// Denoiser contract. Implementations are immutable after construction and
// predict_noise is a pure function of its arguments.
class Denoiser {
 public:
  virtual ~Denoiser() = default;

  virtual const BackendDescriptor& descriptor() const = 0;
  virtual TextEmbedding embed_prompt(std::string_view prompt) const = 0;
  virtual DenoiserOutput predict_noise(const Latent& z_t, const TextEmbedding& emb, int t,
                                       std::span<const std::string> taps) const = 0;

  // Vector-Jacobian products with respect to z_t. Backends without
  // differentiability throw backend_unavailable.
  virtual Latent noise_vjp(const Latent& z_t, const TextEmbedding& emb, int t,
                           const Latent& grad_eps) const;
  // `grads` holds one gradient per tapped layer (matched by layer_id).
  virtual Latent features_vjp(const Latent& z_t, const TextEmbedding& emb, int t,
                              std::span<const FeatureMap> grads) const;

  virtual Latent encode_image(const Image& image) const = 0;
  virtual Image decode_latent(const Latent& z) const = 0;

 protected:
  void check_latent(const Latent& z, const char* what) const;
  void check_taps(std::span<const std::string> taps) const;
};

// (1 + omega) * eps_cond - omega * eps_uncond
Latent cfg_compose(const Latent& eps_cond, const Latent& eps_uncond, const GuidanceConfig& g);

// Affine 8-bit <-> [-1, 1] mapping used by the identity image codec:
// latent = 2 * v / 255 - 1, v = round((latent + 1) * 255 / 2) clamped.
Latent image_to_latent(const Image& image);
Image latent_to_image(const Latent& z);

// Adapter for an external latent diffusion model. The wrapped model supplies
// the hooks; any missing hook makes the corresponding call fail with
// backend_unavailable. Adapters declare themselves non-differentiable, so the
// editor falls back to its linearized contrastive gradient.
struct LdmHooks {
  // Returns eps_hat and appends the requested feature maps (up-path
  // self-attention layers, named as in the descriptor).
  std::function<Latent(const Latent& z_t, const TextEmbedding& emb, int t,
                       std::span<const std::string> taps, std::vector<FeatureMap>& features)>
      predict;
  std::function<TextEmbedding(std::string_view prompt)> encode_text;
  std::function<Latent(const Image&)> vae_encode;
  std::function<Image(const Latent&)> vae_decode;
};

class LdmAdapter final : public Denoiser {
 public:
  LdmAdapter(BackendDescriptor descriptor, LdmHooks hooks);

  const BackendDescriptor& descriptor() const override { return descriptor_; }
  TextEmbedding embed_prompt(std::string_view prompt) const override;
  DenoiserOutput predict_noise(const Latent& z_t, const TextEmbedding& emb, int t,
                               std::span<const std::string> taps) const override;
  Latent encode_image(const Image& image) const override;
  Image decode_latent(const Latent& z) const override;

 private:
  BackendDescriptor descriptor_;
  LdmHooks hooks_;
};

// Names accepted by make_backend.
std::vector<std::string> registered_backends();

// Builds a backend from its JSON parameter block. Unknown names throw
// backend_unavailable.
std::unique_ptr<Denoiser> make_backend(std::string_view name, const nlohmann::json& params,
                                       std::shared_ptr<const NoiseSchedule> schedule);

}  // namespace cds
