#include "cds/editor.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <fmt/format.h>

#include "cds/distill.hpp"
#include "cds/error.hpp"

namespace cds {

std::string to_string(LossLocation loc) {
  switch (loc) {
    case LossLocation::self_attention: return "self_attention";
    case LossLocation::score_output: return "score_output";
    case LossLocation::cross_attention_placeholder: return "cross_attention_placeholder";
  }
  return "unknown";
}

LossLocation parse_loss_location(std::string_view name) {
  if (name == "self_attention") return LossLocation::self_attention;
  if (name == "score_output") return LossLocation::score_output;
  if (name == "cross_attention_placeholder") return LossLocation::cross_attention_placeholder;
  throw Error(ErrorCode::invalid_config, fmt::format("unknown loss location '{}'", name));
}

std::string to_string(Optimizer opt) { return opt == Optimizer::sgd ? "sgd" : "rmsprop"; }

Optimizer parse_optimizer(std::string_view name) {
  if (name == "sgd") return Optimizer::sgd;
  if (name == "rmsprop") return Optimizer::rmsprop;
  throw Error(ErrorCode::invalid_config, fmt::format("unknown optimizer '{}'", name));
}

void validate(const EditConfig& cfg, int num_timesteps) {
  if (cfg.steps < 1) throw Error(ErrorCode::invalid_config, "steps must be at least 1");
  if (!(cfg.step_size > 0.0) || !std::isfinite(cfg.step_size)) {
    throw Error(ErrorCode::invalid_config, "step_size must be positive");
  }
  if (!(cfg.lambda_con >= 0.0) || !std::isfinite(cfg.lambda_con)) {
    throw Error(ErrorCode::invalid_config, "lambda_con must be non-negative");
  }
  if (!std::isfinite(cfg.guidance.omega)) throw Error(ErrorCode::invalid_config, "omega must be finite");
  if (cfg.log_every < 1) throw Error(ErrorCode::invalid_config, "log_every must be at least 1");
  if (!(cfg.rmsprop_decay >= 0.0 && cfg.rmsprop_decay < 1.0) || !(cfg.rmsprop_eps > 0.0)) {
    throw Error(ErrorCode::invalid_config, "rmsprop needs decay in [0, 1) and eps > 0");
  }
  try {
    validate(cfg.t_range, num_timesteps);
  } catch (const Error& e) {
    throw Error(ErrorCode::invalid_config, e.what());
  }
  validate(cfg.patch);
}

nlohmann::json to_json(const EditConfig& cfg) {
  return {{"guidance", {{"omega", cfg.guidance.omega}}},
          {"lambda_con", cfg.lambda_con},
          {"steps", cfg.steps},
          {"step_size", cfg.step_size},
          {"t_range", {cfg.t_range.t_min, cfg.t_range.t_max}},
          {"patch", to_json(cfg.patch)},
          {"seed", cfg.seed},
          {"log_every", cfg.log_every},
          {"optimizer", to_string(cfg.optimizer)},
          {"rmsprop", {{"decay", cfg.rmsprop_decay}, {"eps", cfg.rmsprop_eps}}},
          {"loss_location", to_string(cfg.loss_location)},
          {"frozen_draw", cfg.frozen_draw}};
}

EditConfig edit_config_from_json(const nlohmann::json& j, EditConfig c) {
  if (j.is_null()) return c;
  if (!j.is_object()) throw Error(ErrorCode::invalid_config, "edit config must be an object");
  static const char* const kKeys[] = {"guidance", "lambda_con", "steps",     "step_size", "t_range",
                                      "patch",    "seed",       "log_every", "optimizer", "rmsprop",
                                      "loss_location", "frozen_draw"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(std::begin(kKeys), std::end(kKeys), key) == std::end(kKeys)) {
      throw Error(ErrorCode::invalid_config, fmt::format("unknown edit config key '{}'", key));
    }
  }
  try {
    if (j.contains("guidance")) c.guidance.omega = j.at("guidance").value("omega", c.guidance.omega);
    if (j.contains("lambda_con")) c.lambda_con = j.at("lambda_con").get<double>();
    if (j.contains("steps")) c.steps = j.at("steps").get<int>();
    if (j.contains("step_size")) c.step_size = j.at("step_size").get<double>();
    if (j.contains("t_range")) {
      const auto r = j.at("t_range").get<std::vector<int>>();
      if (r.size() != 2) throw Error(ErrorCode::invalid_config, "t_range needs [t_min, t_max]");
      c.t_range = {r[0], r[1]};
    }
    if (j.contains("patch")) c.patch = patch_config_from_json(j.at("patch"), c.patch);
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("log_every")) c.log_every = j.at("log_every").get<int>();
    if (j.contains("optimizer")) c.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
    if (j.contains("rmsprop")) {
      c.rmsprop_decay = j.at("rmsprop").value("decay", c.rmsprop_decay);
      c.rmsprop_eps = j.at("rmsprop").value("eps", c.rmsprop_eps);
    }
    if (j.contains("loss_location")) c.loss_location = parse_loss_location(j.at("loss_location").get<std::string>());
    if (j.contains("frozen_draw")) c.frozen_draw = j.at("frozen_draw").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::invalid_config, std::string("edit config: ") + e.what());
  }
  return c;
}

EditState::EditState(std::unique_ptr<Generator> gen, std::uint64_t s)
    : generator(std::move(gen)), seed(s) {}

EditState::EditState(const EditState& o)
    : generator(o.generator ? o.generator->clone() : nullptr),
      step(o.step),
      history(o.history),
      opt_state(o.opt_state),
      seed(o.seed) {}

EditState& EditState::operator=(const EditState& o) {
  if (this != &o) *this = EditState(o);
  return *this;
}

Rng step_rng(std::uint64_t seed, int step, int stream) {
  return Rng(mix_seed(seed, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(stream)));
}

Prompts embed_prompts(const Denoiser& backend, std::string_view prompt_ref, std::string_view prompt_tgt) {
  return {backend.embed_prompt(prompt_tgt), backend.embed_prompt(prompt_ref), backend.embed_prompt(kNullPrompt)};
}

namespace {

const std::string kScoreLayer = "eps_guided";

// Patch config actually used for a loss location.
PatchConfig effective_patch(const EditConfig& cfg, const BackendDescriptor& desc) {
  PatchConfig pc = cfg.patch;
  if (cfg.loss_location == LossLocation::cross_attention_placeholder) {
    pc.layer_policy = LayerPolicy::explicit_list;
    pc.layers.clear();
    for (const LayerInfo& l : desc.layers) {
      if (l.semantic_mixing) pc.layers.push_back(l.id);
    }
    if (pc.layers.empty()) {
      throw Error(ErrorCode::invalid_config, "backend declares no semantic-mixing layer");
    }
  } else if (cfg.loss_location == LossLocation::score_output) {
    pc.layer_policy = LayerPolicy::explicit_list;
    pc.layers = {kScoreLayer};
  }
  return pc;
}

// d l / d z0 for a loss on the guided score, given g = d l / d eps_guided.
Latent score_output_backprop(const Denoiser& backend, const BranchResult& br, const Prompts& p,
                             const EditConfig& cfg, const NoiseSchedule& sched, const Latent& g,
                             bool differentiable) {
  const double a = sched.a(br.t);
  if (!differentiable) return (a / sched.b(br.t)) * g;
  const double w = cfg.guidance.omega;
  Latent out = (1.0 + w) * backend.noise_vjp(br.z_t, p.tgt, br.t, g);
  out.axpy(-w, backend.noise_vjp(br.z_t, p.null, br.t, g));
  out *= a;
  return out;
}

void warn_once(std::vector<std::string>* warnings, const std::string& msg) {
  if (warnings == nullptr) return;
  for (const std::string& w : *warnings) {
    if (w == msg) return;
  }
  warnings->push_back(msg);
}

}  // namespace

void cds_step(EditState& state, std::span<const Latent> sources, const Prompts& prompts,
              const EditConfig& cfg, const Denoiser& backend, const NoiseSchedule& sched,
              StepDetail* detail, std::vector<std::string>* warnings) {
  if (!state.generator) throw Error(ErrorCode::invalid_argument, "edit state has no generator");
  Generator& gen = *state.generator;
  const BackendDescriptor& desc = backend.descriptor();
  if (static_cast<int>(sources.size()) != gen.num_views()) {
    throw Error(ErrorCode::invalid_argument,
                fmt::format("{} source views for a {}-view generator", sources.size(), gen.num_views()));
  }
  const int view = state.step % gen.num_views();
  const Latent& source = sources[static_cast<std::size_t>(view)];
  if (!(source.shape() == desc.latent_shape)) {
    throw Error(ErrorCode::shape_mismatch,
                fmt::format("source {} vs backend latent {}", to_string(source.shape()),
                            to_string(desc.latent_shape)));
  }

  const int draw = cfg.frozen_draw ? 0 : state.step;
  Rng noise = step_rng(state.seed, draw, 0);
  const int t = sample_timestep(noise, cfg.t_range);
  const Latent eps = noise.normal_like(desc.latent_shape);
  const Latent z0 = gen.render(view);

  const bool use_con = cfg.lambda_con > 0.0;
  const bool on_taps = use_con && cfg.loss_location != LossLocation::score_output && desc.differentiable;
  const PatchConfig pc = effective_patch(cfg, desc);
  std::vector<std::string> taps;
  if (on_taps) {
    taps = pc.layer_policy == LayerPolicy::explicit_list ? pc.layers : select_layers(desc, pc);
  }

  DdsResult dds = dds_grad(backend, z0, source, prompts.tgt, prompts.ref, prompts.null, t, eps,
                           cfg.guidance, sched, taps);

  Latent con_grad(desc.latent_shape);
  double con_loss = 0.0;
  PatchPlan plan;
  if (use_con) {
    Rng prng = step_rng(state.seed, draw, 1);
    if (on_taps) {
      PatchConfig tap_cfg = pc;
      tap_cfg.layer_policy = LayerPolicy::explicit_list;
      tap_cfg.layers = taps;
      plan = plan_patches(dds.target.features, tap_cfg, prng);
      const CutLossWithGrad lg =
          patchnce_loss_grad(dds.target.features, dds.reference.features, tap_cfg, plan);
      con_loss = lg.loss.value;
      con_grad = backend.features_vjp(dds.target.z_t, prompts.tgt, t, lg.grad_target);
      con_grad *= sched.a(t);
    } else {
      if (cfg.loss_location != LossLocation::score_output) {
        warn_once(warnings, fmt::format("backend '{}' is not differentiable; the contrastive loss is "
                                        "applied to the score output through a linearized final layer",
                                        desc.name));
      }
      PatchConfig score_cfg = pc;
      score_cfg.layer_policy = LayerPolicy::explicit_list;
      score_cfg.layers = {kScoreLayer};
      const std::vector<FeatureMap> ft{{kScoreLayer, dds.target.eps_guided, TapPoint::attention_output}};
      const std::vector<FeatureMap> fr{{kScoreLayer, dds.reference.eps_guided, TapPoint::attention_output}};
      plan = plan_patches(ft, score_cfg, prng);
      const CutLossWithGrad lg = patchnce_loss_grad(ft, fr, score_cfg, plan);
      con_loss = lg.loss.value;
      con_grad = score_output_backprop(backend, dds.target, prompts, cfg, sched, lg.grad_target.front().data,
                                       desc.differentiable);
    }
  }

  Latent total = dds.grad.grad;
  if (use_con) total.axpy(cfg.lambda_con, con_grad);
  const std::vector<double> g = gen.render_vjp(view, total);

  std::vector<double>& theta = gen.params();
  std::vector<double> next(theta.size());
  std::vector<double> moments = state.opt_state;
  double upd2 = 0.0;
  if (cfg.optimizer == Optimizer::rmsprop) {
    if (moments.size() != theta.size()) moments.assign(theta.size(), 0.0);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      moments[i] = cfg.rmsprop_decay * moments[i] + (1.0 - cfg.rmsprop_decay) * g[i] * g[i];
      const double d = cfg.step_size * g[i] / (std::sqrt(moments[i]) + cfg.rmsprop_eps);
      next[i] = theta[i] - d;
      upd2 += d * d;
    }
  } else {
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double d = cfg.step_size * g[i];
      next[i] = theta[i] - d;
      upd2 += d * d;
    }
  }
  bool finite = std::isfinite(con_loss) && std::isfinite(upd2);
  for (double v : next) finite = finite && std::isfinite(v);
  if (!finite) {
    throw NumericalError(state.step, state.step - 1,
                         fmt::format("non-finite update at step {} (t = {})", state.step, t));
  }
  theta = std::move(next);
  state.opt_state = std::move(moments);

  StepLog log{state.step, t, l2_norm(dds.grad.grad), con_loss, std::sqrt(upd2)};
  state.history.push_back(log);
  ++state.step;

  if (detail != nullptr) {
    detail->log = log;
    detail->view = view;
    detail->eps = eps;
    detail->z0 = z0;
    detail->dds = std::move(dds.grad.grad);
    detail->con_grad = std::move(con_grad);
    detail->total_grad = std::move(total);
    detail->plan = std::move(plan);
  }
}

namespace {

EditResult run_loop(EditState state, std::span<const Latent> sources, std::string_view prompt_ref,
                    std::string_view prompt_tgt, const EditConfig& cfg, const Denoiser& backend,
                    const NoiseSchedule& sched, const StepObserver& observer, EditState* resume) {
  validate(cfg, sched.num_steps());
  const Prompts prompts = embed_prompts(backend, prompt_ref, prompt_tgt);
  EditResult result;
  result.config = to_json(cfg);
  result.method = cfg.lambda_con == 0.0 ? "dds" : "cds";
  const auto t0 = std::chrono::steady_clock::now();
  StepDetail detail;
  while (state.step < cfg.steps) {
    cds_step(state, sources, prompts, cfg, backend, sched, observer ? &detail : nullptr, &result.warnings);
    if (observer) observer(state, detail);
  }
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  result.logs = state.history;
  for (int v = 0; v < state.generator->num_views(); ++v) result.final_views.push_back(state.generator->render(v));
  result.final_latent = result.final_views.front();
  if (!result.final_latent.all_finite()) throw NumericalError(cfg.steps, cfg.steps - 1, "final latent is not finite");
  if (resume != nullptr) *resume = std::move(state);
  return result;
}

}  // namespace

EditResult run_edit(const Latent& source, std::string_view prompt_ref, std::string_view prompt_tgt,
                    const EditConfig& cfg, const Denoiser& backend, const NoiseSchedule& sched,
                    const StepObserver& observer, EditState* resume) {
  EditState state = resume != nullptr && resume->generator
                        ? std::move(*resume)
                        : EditState(std::make_unique<IdentityLatentGenerator>(source), cfg.seed);
  return run_loop(std::move(state), std::span<const Latent>(&source, 1), prompt_ref, prompt_tgt, cfg,
                  backend, sched, observer, resume);
}

EditResult run_generator_edit(const Generator& gen, std::span<const Latent> source_views,
                              std::string_view prompt_ref, std::string_view prompt_tgt,
                              const EditConfig& cfg, const Denoiser& backend,
                              const NoiseSchedule& sched, const StepObserver& observer,
                              EditState* resume) {
  if (source_views.empty()) throw Error(ErrorCode::invalid_argument, "at least one source view is required");
  for (const Latent& v : source_views) {
    if (!(v.shape() == gen.latent_shape())) {
      throw Error(ErrorCode::shape_mismatch, "source view shape does not match the generator render");
    }
  }
  EditState state = resume != nullptr && resume->generator ? std::move(*resume)
                                                          : EditState(gen.clone(), cfg.seed);
  return run_loop(std::move(state), source_views, prompt_ref, prompt_tgt, cfg, backend, sched, observer,
                  resume);
}

Pack state_to_pack(const EditState& state) {
  if (!state.generator) throw Error(ErrorCode::invalid_argument, "edit state has no generator");
  const Generator& gen = *state.generator;
  const Shape s = gen.latent_shape();
  nlohmann::json g{{"kind", to_string(gen.kind())}, {"latent_shape", {s.channels, s.height, s.width}}};
  Pack p;
  if (const auto* grid = dynamic_cast<const CoordinateGridGenerator*>(&gen)) {
    g["grid_size"] = grid->grid_size();
    nlohmann::json shifts = nlohmann::json::array();
    for (const auto& [dy, dx] : grid->shifts()) shifts.push_back({dy, dx});
    g["shifts"] = shifts;
    const Shape gs = grid->grid_shape();
    p.fields.push_back({"params", {gs.channels, gs.height, gs.width}, gen.params()});
  } else {
    p.fields.push_back({"params", {s.channels, s.height, s.width}, gen.params()});
  }
  p.fields.push_back({"opt_state", {static_cast<std::int64_t>(state.opt_state.size())}, state.opt_state});
  nlohmann::json hist = nlohmann::json::array();
  for (const StepLog& l : state.history) hist.push_back({l.step, l.t, l.dds_norm, l.con_loss, l.update_norm});
  p.meta = {{"format", "edit_state"}, {"generator", g}, {"step", state.step}, {"seed", state.seed},
            {"history", hist}};
  return p;
}

EditState state_from_pack(const Pack& pack) {
  try {
    const nlohmann::json& g = pack.meta.at("generator");
    const auto ls = g.at("latent_shape").get<std::vector<int>>();
    const Shape shape{ls.at(0), ls.at(1), ls.at(2)};
    const PackField& params = pack.field("params");
    std::unique_ptr<Generator> gen;
    if (g.at("kind") == "identity_latent") {
      gen = std::make_unique<IdentityLatentGenerator>(Latent(shape));
    } else if (g.at("kind") == "coordinate_grid_toy") {
      std::vector<std::pair<int, int>> shifts;
      for (const auto& sh : g.at("shifts")) shifts.emplace_back(sh.at(0).get<int>(), sh.at(1).get<int>());
      gen = std::make_unique<CoordinateGridGenerator>(shape, g.at("grid_size").get<int>(), shifts);
    } else {
      throw Error(ErrorCode::io, "checkpoint names an unknown generator kind");
    }
    if (params.data.size() != gen->params().size()) throw Error(ErrorCode::io, "checkpoint parameter count");
    gen->params() = params.data;
    EditState st(std::move(gen), pack.meta.at("seed").get<std::uint64_t>());
    st.step = pack.meta.at("step").get<int>();
    st.opt_state = pack.field("opt_state").data;
    for (const auto& h : pack.meta.at("history")) {
      st.history.push_back({h.at(0).get<int>(), h.at(1).get<int>(), h.at(2).get<double>(),
                            h.at(3).get<double>(), h.at(4).get<double>()});
    }
    if (static_cast<int>(st.history.size()) != st.step) throw Error(ErrorCode::io, "checkpoint history length");
    return st;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::io, std::string("checkpoint header: ") + e.what());
  }
}

}  // namespace cds
