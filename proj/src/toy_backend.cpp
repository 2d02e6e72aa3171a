#include "cds/toy_backend.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include <fmt/format.h>

#include "cds/error.hpp"
#include "cds/kernels.hpp"
#include "cds/rng.hpp"

namespace cds {

struct ToyBackend::Stage {
  std::string id;
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
  Shape in_shape;
  Shape out_shape;
  std::vector<double> conv_w;
  std::vector<double> conv_b;
  bool attention = false;
  std::vector<double> wq, wk, wv, wo;
  std::vector<double> semantic_w;  // out_channels x latent channels; bottleneck only
};

struct ToyActivations {
  struct Stage {
    Tensor3 x;  // tanh output
    Tensor3 q, k, v;
    std::vector<double> probs;
    Tensor3 y;  // tapped output
  };
  std::vector<Stage> stages;
};

namespace {

const char* const kStopwords[] = {"a", "an", "the", "photo", "picture", "image", "of"};

std::vector<double> normal_vector(Rng& rng, std::size_t n, double scale) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

std::vector<double> gaussian_taps(double sigma) {
  if (!(sigma > 0.0)) return {1.0};
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double total = 0.0;
  for (int i = -r; i <= r; ++i) {
    k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += k[static_cast<std::size_t>(i + r)];
  }
  for (double& v : k) v /= total;
  return k;
}

// Separable cyclic blur; symmetric taps make it self-adjoint.
Tensor3 blur(const Tensor3& in, const std::vector<double>& taps) {
  if (taps.size() == 1) return in;
  const Shape& s = in.shape();
  const int r = static_cast<int>(taps.size() / 2);
  Tensor3 tmp(s), out(s);
  for (int c = 0; c < s.channels; ++c) {
    for (int y = 0; y < s.height; ++y) {
      for (int x = 0; x < s.width; ++x) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) {
          acc += taps[static_cast<std::size_t>(i + r)] * in(c, y, ((x + i) % s.width + s.width) % s.width);
        }
        tmp(c, y, x) = acc;
      }
    }
    for (int y = 0; y < s.height; ++y) {
      for (int x = 0; x < s.width; ++x) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) {
          acc += taps[static_cast<std::size_t>(i + r)] * tmp(c, ((y + i) % s.height + s.height) % s.height, x);
        }
        out(c, y, x) = acc;
      }
    }
  }
  return out;
}

}  // namespace

ToyBackendConfig toy_config_from_json(const nlohmann::json& j) {
  ToyBackendConfig c;
  if (j.is_null()) return c;
  if (!j.is_object()) throw Error(ErrorCode::invalid_config, "toy backend params must be an object");
  try {
    if (j.contains("vocabulary")) c.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
    if (j.contains("sigma")) c.sigma = j.at("sigma").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("layer_count")) c.layer_count = j.at("layer_count").get<int>();
    if (j.contains("latent_shape")) {
      const auto s = j.at("latent_shape").get<std::vector<int>>();
      if (s.size() != 3) throw Error(ErrorCode::invalid_config, "latent_shape needs 3 entries");
      c.latent_shape = Shape{s[0], s[1], s[2]};
    }
    if (j.contains("embedding_dim")) c.embedding_dim = j.at("embedding_dim").get<int>();
    if (j.contains("widths")) c.widths = j.at("widths").get<std::vector<int>>();
    if (j.contains("color_scale")) c.color_scale = j.at("color_scale").get<double>();
    if (j.contains("structure_scale")) c.structure_scale = j.at("structure_scale").get<double>();
    if (j.contains("stem_blur")) c.stem_blur = j.at("stem_blur").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::invalid_config, std::string("toy backend params: ") + e.what());
  }
  return c;
}

nlohmann::json to_json(const ToyBackendConfig& c) {
  return {{"vocabulary", c.vocabulary},
          {"sigma", c.sigma},
          {"seed", c.seed},
          {"layer_count", c.layer_count},
          {"latent_shape", {c.latent_shape.channels, c.latent_shape.height, c.latent_shape.width}},
          {"embedding_dim", c.embedding_dim},
          {"widths", c.widths},
          {"color_scale", c.color_scale},
          {"structure_scale", c.structure_scale},
          {"stem_blur", c.stem_blur}};
}

ToyBackend::ToyBackend(ToyBackendConfig config, std::shared_ptr<const NoiseSchedule> schedule)
    : config_(std::move(config)), schedule_(std::move(schedule)) {
  const ToyBackendConfig& c = config_;
  if (!schedule_) throw Error(ErrorCode::invalid_config, "toy backend needs a noise schedule");
  if (c.vocabulary.empty()) throw Error(ErrorCode::invalid_config, "toy vocabulary is empty");
  if (static_cast<int>(c.vocabulary.size()) > c.embedding_dim) {
    throw Error(ErrorCode::invalid_config, "embedding_dim must be at least the vocabulary size");
  }
  if (!(c.sigma > 0.0)) throw Error(ErrorCode::invalid_config, "toy sigma must be positive");
  if (c.layer_count < 3) throw Error(ErrorCode::invalid_config, "toy backend needs at least 3 layers");
  if (static_cast<int>(c.widths.size()) < c.layer_count) {
    throw Error(ErrorCode::invalid_config, "toy widths must list one entry per layer");
  }
  if (c.latent_shape.channels < 1 || c.latent_shape.height < 1 || c.latent_shape.width < 1) {
    throw Error(ErrorCode::invalid_config, "toy latent shape must be positive");
  }
  for (std::size_t i = 0; i < c.vocabulary.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (c.vocabulary[i] == c.vocabulary[j]) {
        throw Error(ErrorCode::invalid_config, "duplicate vocabulary word '" + c.vocabulary[i] + "'");
      }
    }
  }

  Rng mean_rng(mix_seed(c.seed, 2, 0));
  init_means(mean_rng);
  if (!(c.stem_blur >= 0.0)) throw Error(ErrorCode::invalid_config, "stem_blur must be non-negative");
  stem_taps_ = gaussian_taps(c.stem_blur * std::min(c.latent_shape.height, c.latent_shape.width));
  Rng net_rng(mix_seed(c.seed, 1, 0));
  init_network(net_rng);

  descriptor_.name = "toy";
  descriptor_.latent_shape = c.latent_shape;
  descriptor_.embedding_dim = c.embedding_dim;
  descriptor_.differentiable = true;
  descriptor_.thread_safe = true;
  descriptor_.deterministic = true;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    LayerInfo info;
    info.id = stages_[s].id;
    info.shape = stages_[s].out_shape;
    info.tap_point = stages_[s].attention ? TapPoint::residual_plus_attention : TapPoint::conv_output;
    info.bottleneck = s + 1 == stages_.size();
    info.semantic_mixing = info.bottleneck;
    descriptor_.layers.push_back(info);
  }
}

ToyBackend::~ToyBackend() = default;

void ToyBackend::init_means(Rng& rng) {
  const Shape& s = config_.latent_shape;
  for (std::size_t k = 0; k < config_.vocabulary.size(); ++k) {
    Latent mu(s);
    std::vector<double> color(static_cast<std::size_t>(s.channels));
    for (double& v : color) v = config_.color_scale * (2.0 * rng.uniform() - 1.0);
    struct Blob {
      double cy, cx, radius;
      std::vector<double> amp;
    };
    std::vector<Blob> blobs(3);
    for (Blob& b : blobs) {
      b.cy = rng.uniform();
      b.cx = rng.uniform();
      b.radius = 0.12 + 0.18 * rng.uniform();
      b.amp.resize(static_cast<std::size_t>(s.channels));
      for (double& a : b.amp) a = config_.structure_scale * (2.0 * rng.uniform() - 1.0);
    }
    for (int c = 0; c < s.channels; ++c) {
      for (int y = 0; y < s.height; ++y) {
        const double fy = (y + 0.5) / s.height;
        for (int x = 0; x < s.width; ++x) {
          const double fx = (x + 0.5) / s.width;
          double v = color[static_cast<std::size_t>(c)];
          for (const Blob& b : blobs) {
            const double d2 = (fy - b.cy) * (fy - b.cy) + (fx - b.cx) * (fx - b.cx);
            v += b.amp[static_cast<std::size_t>(c)] * std::exp(-d2 / (2.0 * b.radius * b.radius));
          }
          mu(c, y, x) = v;
        }
      }
    }
    means_.push_back(std::move(mu));
  }
}

void ToyBackend::init_network(Rng& rng) {
  const ToyBackendConfig& c = config_;
  Shape in = c.latent_shape;
  for (int s = 0; s < c.layer_count; ++s) {
    Stage st;
    st.in_channels = in.channels;
    st.out_channels = c.widths[static_cast<std::size_t>(s)];
    st.stride = s == 0 ? 1 : 2;
    st.attention = s > 0;
    st.id = s == 0 ? "conv0" : fmt::format("attn{}", s);
    st.in_shape = in;
    st.out_shape = Shape{st.out_channels, (in.height + st.stride - 1) / st.stride,
                         (in.width + st.stride - 1) / st.stride};
    const std::size_t nw = static_cast<std::size_t>(st.out_channels) * st.in_channels * 9;
    const double fan_in = static_cast<double>(st.in_channels) * 9.0;
    if (s == 0) {
      st.conv_w = normal_vector(rng, nw, 2.0 / std::sqrt(fan_in));
      // Zero-sum kernels: the first stage ignores per-channel constant offsets.
      for (std::size_t k = 0; k < nw; k += 9) {
        double mean = 0.0;
        for (std::size_t i = 0; i < 9; ++i) mean += st.conv_w[k + i];
        mean /= 9.0;
        for (std::size_t i = 0; i < 9; ++i) st.conv_w[k + i] -= mean;
      }
    } else {
      st.conv_w = normal_vector(rng, nw, 1.5 / std::sqrt(fan_in));
    }
    st.conv_b = normal_vector(rng, static_cast<std::size_t>(st.out_channels), 0.1);
    if (st.attention) {
      const std::size_t f = static_cast<std::size_t>(st.out_channels);
      const double sc = 1.0 / std::sqrt(static_cast<double>(f));
      st.wq = normal_vector(rng, f * f, sc);
      st.wk = normal_vector(rng, f * f, sc);
      st.wv = normal_vector(rng, f * f, sc);
      st.wo = normal_vector(rng, f * f, 0.5 * sc);
    }
    if (s + 1 == c.layer_count) {
      st.semantic_w = normal_vector(rng, static_cast<std::size_t>(st.out_channels) * c.latent_shape.channels,
                                    1.0 / std::sqrt(static_cast<double>(c.latent_shape.channels)));
    }
    in = st.out_shape;
    stages_.push_back(std::move(st));
  }
}

int ToyBackend::class_index(std::string_view word) const {
  for (std::size_t k = 0; k < config_.vocabulary.size(); ++k) {
    if (config_.vocabulary[k] == word) return static_cast<int>(k);
  }
  throw Error(ErrorCode::unknown_vocabulary, fmt::format("'{}' is not in the toy vocabulary", word));
}

const Latent& ToyBackend::class_mean(std::string_view word) const {
  return means_[static_cast<std::size_t>(class_index(word))];
}

TextEmbedding ToyBackend::embed_prompt(std::string_view prompt) const {
  TextEmbedding emb;
  emb.prompt = std::string(prompt);
  emb.vector.assign(static_cast<std::size_t>(config_.embedding_dim), 0.0);
  if (prompt == kNullPrompt) {
    emb.kind = EmbeddingKind::null;
    return emb;
  }
  std::istringstream words{std::string(prompt)};
  std::string word;
  int count = 0;
  while (words >> word) {
    std::transform(word.begin(), word.end(), word.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    if (std::find(std::begin(kStopwords), std::end(kStopwords), word) != std::end(kStopwords)) continue;
    emb.vector[static_cast<std::size_t>(class_index(word))] += 1.0;
    ++count;
  }
  if (count == 0) {
    throw Error(ErrorCode::unknown_vocabulary,
                fmt::format("prompt '{}' names no vocabulary word", prompt));
  }
  double norm = 0.0;
  for (double v : emb.vector) norm += v * v;
  norm = std::sqrt(norm);
  for (double& v : emb.vector) v /= norm;
  return emb;
}

std::vector<double> ToyBackend::class_weights(const TextEmbedding& emb) const {
  const std::size_t k_count = means_.size();
  std::vector<double> w(k_count, 1.0 / static_cast<double>(k_count));
  if (emb.kind == EmbeddingKind::null) return w;
  if (emb.vector.size() != static_cast<std::size_t>(config_.embedding_dim)) {
    throw Error(ErrorCode::shape_mismatch, "embedding dimension does not match the toy backend");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < k_count; ++k) {
    w[k] = emb.vector[k] * emb.vector[k];
    total += w[k];
  }
  if (!(total > 0.0)) {
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(k_count));
    return w;
  }
  for (double& v : w) v /= total;
  return w;
}

std::vector<double> ToyBackend::responsibilities(const Latent& z_t, const std::vector<double>& weights,
                                                 int t) const {
  const double a = schedule_->a(t);
  const double b = schedule_->b(t);
  const double var = a * a * config_.sigma * config_.sigma + b * b;
  std::vector<double> logits(means_.size(), -INFINITY);
  double mx = -INFINITY;
  for (std::size_t k = 0; k < means_.size(); ++k) {
    if (weights[k] <= 0.0) continue;
    double d2 = 0.0;
    const Latent& mu = means_[k];
    for (std::size_t i = 0; i < z_t.size(); ++i) {
      const double d = z_t[i] - a * mu[i];
      d2 += d * d;
    }
    logits[k] = std::log(weights[k]) - d2 / (2.0 * var);
    mx = std::max(mx, logits[k]);
  }
  double z = 0.0;
  for (double& l : logits) {
    l = std::isfinite(l) ? std::exp(l - mx) : 0.0;
    z += l;
  }
  for (double& l : logits) l /= z;
  return logits;
}

namespace {

void check_timestep(const NoiseSchedule& s, int t) {
  if (t < 0 || t >= s.num_steps()) {
    throw Error(ErrorCode::out_of_range, fmt::format("timestep {} outside [0, {})", t, s.num_steps()));
  }
  if (!(s.b(t) > 0.0)) {
    throw Error(ErrorCode::out_of_range, fmt::format("timestep {} has b_t = 0; noise is undefined", t));
  }
}

}  // namespace

DenoiserOutput ToyBackend::predict_noise(const Latent& z_t, const TextEmbedding& emb, int t,
                                         std::span<const std::string> taps) const {
  check_latent(z_t, "predict_noise");
  check_taps(taps);
  check_timestep(*schedule_, t);
  const double a = schedule_->a(t);
  const double b = schedule_->b(t);
  const double var = a * a * config_.sigma * config_.sigma + b * b;
  const std::vector<double> r = responsibilities(z_t, class_weights(emb), t);

  DenoiserOutput out;
  out.eps_hat = Latent(z_t.shape());
  // eps = (b / v) (z - a * sum_k r_k mu_k),  v = a^2 sigma^2 + b^2
  for (std::size_t i = 0; i < z_t.size(); ++i) {
    double m = 0.0;
    for (std::size_t k = 0; k < means_.size(); ++k) m += r[k] * means_[k][i];
    out.eps_hat[i] = (b / var) * (z_t[i] - a * m);
  }
  if (!taps.empty()) out.features = feature_taps(z_t, taps);
  return out;
}

Latent ToyBackend::noise_vjp(const Latent& z_t, const TextEmbedding& emb, int t,
                             const Latent& grad_eps) const {
  check_latent(z_t, "noise_vjp");
  require_same_shape(z_t, grad_eps, "noise_vjp");
  check_timestep(*schedule_, t);
  const double a = schedule_->a(t);
  const double b = schedule_->b(t);
  const double var = a * a * config_.sigma * config_.sigma + b * b;
  const std::vector<double> r = responsibilities(z_t, class_weights(emb), t);

  // d eps / dz = (b/v) (I - a dm/dz) with dm/dz^T g = (a/v) sum_k r_k (c_k - c_bar) mu_k,
  // c_k = mu_k . g
  std::vector<double> c(means_.size(), 0.0);
  double c_bar = 0.0;
  for (std::size_t k = 0; k < means_.size(); ++k) {
    if (r[k] == 0.0) continue;
    c[k] = dot(means_[k], grad_eps);
    c_bar += r[k] * c[k];
  }
  Latent out = grad_eps;
  for (std::size_t k = 0; k < means_.size(); ++k) {
    const double coef = r[k] * (c[k] - c_bar);
    if (coef == 0.0) continue;
    out.axpy(-(a * a / var) * coef, means_[k]);
  }
  out *= b / var;
  return out;
}

ToyActivations ToyBackend::forward(const Latent& z) const {
  return forward_until(z, static_cast<int>(stages_.size()) - 1);
}

ToyActivations ToyBackend::forward_until(const Latent& z, int last_stage) const {
  ToyActivations acts;
  const Tensor3 stem = blur(z, stem_taps_);
  const Tensor3* in = &stem;
  for (int s = 0; s <= last_stage; ++s) {
    const Stage& st = stages_[static_cast<std::size_t>(s)];
    ToyActivations::Stage a;
    Tensor3 u = kernels::conv3x3_forward(*in, st.conv_w, st.conv_b, st.out_channels, st.stride);
    if (!st.semantic_w.empty()) {
      const Shape& zs = z.shape();
      std::vector<double> mean(static_cast<std::size_t>(zs.channels), 0.0);
      for (int c = 0; c < zs.channels; ++c) {
        for (std::size_t p = 0; p < zs.plane(); ++p) mean[static_cast<std::size_t>(c)] += z[c * zs.plane() + p];
        mean[static_cast<std::size_t>(c)] /= static_cast<double>(zs.plane());
      }
      const std::size_t n = u.shape().plane();
      for (int o = 0; o < st.out_channels; ++o) {
        double add = 0.0;
        for (int c = 0; c < zs.channels; ++c) {
          add += st.semantic_w[static_cast<std::size_t>(o) * zs.channels + c] * mean[static_cast<std::size_t>(c)];
        }
        for (std::size_t p = 0; p < n; ++p) u[o * n + p] += add;
      }
    }
    a.x = std::move(u);
    for (double& v : a.x.values()) v = std::tanh(v);
    if (st.attention) {
      a.q = kernels::channel_mix(st.wq, st.out_channels, a.x);
      a.k = kernels::channel_mix(st.wk, st.out_channels, a.x);
      a.v = kernels::channel_mix(st.wv, st.out_channels, a.x);
      a.probs = kernels::attention_probs(a.q, a.k, 1.0 / std::sqrt(static_cast<double>(st.out_channels)));
      const Tensor3 o = kernels::attention_apply(a.probs, a.v);
      a.y = a.x + kernels::channel_mix(st.wo, st.out_channels, o);
    } else {
      a.y = a.x;
    }
    acts.stages.push_back(std::move(a));
    in = &acts.stages.back().y;
  }
  return acts;
}

std::vector<FeatureMap> ToyBackend::feature_taps(const Latent& z, std::span<const std::string> taps) const {
  check_latent(z, "feature_taps");
  check_taps(taps);
  if (taps.empty()) return {};
  int deepest = 0;
  std::vector<int> wanted;
  for (const std::string& id : taps) {
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      if (stages_[s].id == id) {
        wanted.push_back(static_cast<int>(s));
        deepest = std::max(deepest, static_cast<int>(s));
      }
    }
  }
  const ToyActivations acts = forward_until(z, deepest);
  std::vector<FeatureMap> out;
  for (std::size_t s = 0; s <= static_cast<std::size_t>(deepest); ++s) {
    if (std::find(wanted.begin(), wanted.end(), static_cast<int>(s)) == wanted.end()) continue;
    out.push_back(FeatureMap{stages_[s].id, acts.stages[s].y, descriptor_.layers[s].tap_point});
  }
  return out;
}

std::vector<FeatureMap> ToyBackend::feature_taps(const Latent& z) const {
  std::vector<std::string> all;
  for (const Stage& st : stages_) all.push_back(st.id);
  return feature_taps(z, all);
}

Latent ToyBackend::features_vjp(const Latent& z_t, const TextEmbedding&, int,
                                std::span<const FeatureMap> grads) const {
  check_latent(z_t, "features_vjp");
  Latent dz(z_t.shape());
  if (grads.empty()) return dz;

  std::vector<const Tensor3*> injected(stages_.size(), nullptr);
  int deepest = 0;
  for (const FeatureMap& g : grads) {
    bool found = false;
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      if (stages_[s].id != g.layer_id) continue;
      if (!(g.data.shape() == stages_[s].out_shape)) {
        throw Error(ErrorCode::shape_mismatch,
                    fmt::format("gradient for '{}' has shape {}, layer is {}", g.layer_id,
                                to_string(g.data.shape()), to_string(stages_[s].out_shape)));
      }
      injected[s] = &g.data;
      deepest = std::max(deepest, static_cast<int>(s));
      found = true;
    }
    if (!found) throw Error(ErrorCode::unknown_tap, fmt::format("toy backend has no layer '{}'", g.layer_id));
  }

  const ToyActivations acts = forward_until(z_t, deepest);
  Tensor3 grad_y;  // gradient flowing into stage s output
  for (int s = deepest; s >= 0; --s) {
    const Stage& st = stages_[static_cast<std::size_t>(s)];
    const ToyActivations::Stage& a = acts.stages[static_cast<std::size_t>(s)];
    if (grad_y.empty()) grad_y = Tensor3(st.out_shape);
    if (injected[static_cast<std::size_t>(s)] != nullptr) grad_y += *injected[static_cast<std::size_t>(s)];

    Tensor3 dx = grad_y;
    if (st.attention) {
      const Tensor3 d_o = kernels::channel_mix_transposed(st.wo, st.out_channels, grad_y);
      const kernels::AttentionGrads ag = kernels::attention_backward(
          a.probs, a.q, a.k, a.v, d_o, 1.0 / std::sqrt(static_cast<double>(st.out_channels)));
      dx += kernels::channel_mix_transposed(st.wq, st.out_channels, ag.dq);
      dx += kernels::channel_mix_transposed(st.wk, st.out_channels, ag.dk);
      dx += kernels::channel_mix_transposed(st.wv, st.out_channels, ag.dv);
    }
    Tensor3 du = std::move(dx);
    for (std::size_t i = 0; i < du.size(); ++i) du[i] *= 1.0 - a.x[i] * a.x[i];

    if (!st.semantic_w.empty()) {
      const Shape& zs = z_t.shape();
      const std::size_t n = du.shape().plane();
      for (int c = 0; c < zs.channels; ++c) {
        double g = 0.0;
        for (int o = 0; o < st.out_channels; ++o) {
          double sum = 0.0;
          for (std::size_t p = 0; p < n; ++p) sum += du[o * n + p];
          g += st.semantic_w[static_cast<std::size_t>(o) * zs.channels + c] * sum;
        }
        g /= static_cast<double>(zs.plane());
        for (std::size_t p = 0; p < zs.plane(); ++p) dz[c * zs.plane() + p] += g;
      }
    }

    Tensor3 d_in = kernels::conv3x3_backward_input(du, st.conv_w, st.in_shape, st.stride);
    if (s == 0) {
      dz += blur(d_in, stem_taps_);
    } else {
      grad_y = std::move(d_in);
    }
  }
  return dz;
}

Latent ToyBackend::encode_image(const Image& image) const {
  const Shape& s = config_.latent_shape;
  if (s.channels != 3 || image.width != s.width || image.height != s.height) {
    throw Error(ErrorCode::shape_mismatch,
                fmt::format("image {}x{} does not match toy latent {}", image.width, image.height,
                            to_string(s)));
  }
  return image_to_latent(image);
}

Image ToyBackend::decode_latent(const Latent& z) const {
  check_latent(z, "decode_latent");
  return latent_to_image(z);
}

Latent toy_source_latent(const ToyBackend& backend, std::string_view word, std::uint64_t seed) {
  const int k = backend.class_index(word);
  Latent z = backend.class_mean(k);
  const Shape& s = z.shape();
  Rng rng(mix_seed(seed, 3, static_cast<std::uint64_t>(k)));
  const double cy = 0.5 + 0.1 * (2.0 * rng.uniform() - 1.0);
  const double cx = 0.5 + 0.1 * (2.0 * rng.uniform() - 1.0);
  const double ry = 0.2 + 0.1 * rng.uniform();
  const double rx = 0.25 + 0.1 * rng.uniform();
  const double stripe_phase = rng.uniform();
  std::vector<double> amp(static_cast<std::size_t>(s.channels));
  for (double& v : amp) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * (0.35 + 0.15 * rng.uniform());
  for (int c = 0; c < s.channels; ++c) {
    for (int y = 0; y < s.height; ++y) {
      const double fy = (y + 0.5) / s.height;
      for (int x = 0; x < s.width; ++x) {
        const double fx = (x + 0.5) / s.width;
        const double r = std::sqrt((fy - cy) * (fy - cy) / (ry * ry) + (fx - cx) * (fx - cx) / (rx * rx));
        const double inside = 1.0 / (1.0 + std::exp((r - 1.0) / 0.06));
        const double stripe = std::sin(2.0 * 3.141592653589793 * (2.0 * (fx + fy) + stripe_phase));
        z(c, y, x) += amp[static_cast<std::size_t>(c)] * inside + 0.12 * stripe;
      }
    }
  }
  return z;
}

}  // namespace cds
