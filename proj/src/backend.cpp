#include "cds/backend.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "cds/error.hpp"
#include "cds/toy_backend.hpp"

namespace cds {

std::string to_string(TapPoint tap) {
  switch (tap) {
    case TapPoint::attention_output: return "attention_output";
    case TapPoint::residual_plus_attention: return "residual_plus_attention";
    case TapPoint::conv_output: return "conv_output";
  }
  return "unknown";
}

const LayerInfo& BackendDescriptor::layer(std::string_view id) const {
  for (const LayerInfo& l : layers) {
    if (l.id == id) return l;
  }
  throw Error(ErrorCode::unknown_tap, fmt::format("backend '{}' has no layer '{}'", name, id));
}

bool BackendDescriptor::has_layer(std::string_view id) const {
  return std::any_of(layers.begin(), layers.end(), [&](const LayerInfo& l) { return l.id == id; });
}

nlohmann::json to_json(const BackendDescriptor& d) {
  nlohmann::json layers = nlohmann::json::array();
  for (const LayerInfo& l : d.layers) {
    layers.push_back({{"id", l.id},
                      {"shape", {l.shape.channels, l.shape.height, l.shape.width}},
                      {"tap_point", to_string(l.tap_point)},
                      {"bottleneck", l.bottleneck},
                      {"semantic_mixing", l.semantic_mixing}});
  }
  return {{"name", d.name},
          {"latent_shape", {d.latent_shape.channels, d.latent_shape.height, d.latent_shape.width}},
          {"embedding_dim", d.embedding_dim},
          {"layers", layers},
          {"differentiable", d.differentiable},
          {"thread_safe", d.thread_safe},
          {"deterministic", d.deterministic}};
}

Latent Denoiser::noise_vjp(const Latent&, const TextEmbedding&, int, const Latent&) const {
  throw Error(ErrorCode::backend_unavailable,
              fmt::format("backend '{}' is not differentiable", descriptor().name));
}

Latent Denoiser::features_vjp(const Latent&, const TextEmbedding&, int,
                              std::span<const FeatureMap>) const {
  throw Error(ErrorCode::backend_unavailable,
              fmt::format("backend '{}' is not differentiable", descriptor().name));
}

void Denoiser::check_latent(const Latent& z, const char* what) const {
  if (!(z.shape() == descriptor().latent_shape)) {
    throw Error(ErrorCode::shape_mismatch,
                fmt::format("{}: latent {} does not match backend shape {}", what,
                            to_string(z.shape()), to_string(descriptor().latent_shape)));
  }
}

void Denoiser::check_taps(std::span<const std::string> taps) const {
  for (const std::string& id : taps) (void)descriptor().layer(id);
}

Latent cfg_compose(const Latent& eps_cond, const Latent& eps_uncond, const GuidanceConfig& g) {
  require_same_shape(eps_cond, eps_uncond, "cfg_compose");
  if (!std::isfinite(g.omega)) throw Error(ErrorCode::invalid_argument, "guidance scale not finite");
  Latent out(eps_cond.shape());
  const double wc = 1.0 + g.omega;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = wc * eps_cond[i] - g.omega * eps_uncond[i];
  }
  return out;
}

Latent image_to_latent(const Image& image) {
  Latent z(Shape{3, image.height, image.width});
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) {
        z(c, y, x) = 2.0 * image.at(x, y, c) / 255.0 - 1.0;
      }
    }
  }
  return z;
}

Image latent_to_image(const Latent& z) {
  if (z.shape().channels != 3) {
    throw Error(ErrorCode::shape_mismatch, "image decode needs a 3-channel latent");
  }
  Image img{z.shape().width, z.shape().height, {}};
  img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        const double v = std::round((z(c, y, x) + 1.0) * 255.0 / 2.0);
        img.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    }
  }
  return img;
}

LdmAdapter::LdmAdapter(BackendDescriptor descriptor, LdmHooks hooks)
    : descriptor_(std::move(descriptor)), hooks_(std::move(hooks)) {
  descriptor_.differentiable = false;
  if (descriptor_.layers.empty()) {
    throw Error(ErrorCode::invalid_config, "adapter descriptor declares no tappable layers");
  }
}

namespace {

[[noreturn]] void unavailable(const std::string& name, const char* hook) {
  throw Error(ErrorCode::backend_unavailable,
              fmt::format("backend '{}': adapter hook '{}' is not wired", name, hook));
}

}  // namespace

TextEmbedding LdmAdapter::embed_prompt(std::string_view prompt) const {
  if (!hooks_.encode_text) unavailable(descriptor_.name, "encode_text");
  return hooks_.encode_text(prompt);
}

DenoiserOutput LdmAdapter::predict_noise(const Latent& z_t, const TextEmbedding& emb, int t,
                                         std::span<const std::string> taps) const {
  if (!hooks_.predict) unavailable(descriptor_.name, "predict");
  check_latent(z_t, "predict_noise");
  check_taps(taps);
  DenoiserOutput out;
  out.eps_hat = hooks_.predict(z_t, emb, t, taps, out.features);
  check_latent(out.eps_hat, "adapter eps_hat");
  return out;
}

Latent LdmAdapter::encode_image(const Image& image) const {
  if (!hooks_.vae_encode) unavailable(descriptor_.name, "vae_encode");
  return hooks_.vae_encode(image);
}

Image LdmAdapter::decode_latent(const Latent& z) const {
  if (!hooks_.vae_decode) unavailable(descriptor_.name, "vae_decode");
  return hooks_.vae_decode(z);
}

std::vector<std::string> registered_backends() { return {"toy"}; }

std::unique_ptr<Denoiser> make_backend(std::string_view name, const nlohmann::json& params,
                                       std::shared_ptr<const NoiseSchedule> schedule) {
  if (name == "toy") {
    return std::make_unique<ToyBackend>(toy_config_from_json(params), std::move(schedule));
  }
  throw Error(ErrorCode::backend_unavailable,
              fmt::format("backend '{}' is not registered (available: toy)", name));
}

}  // namespace cds
