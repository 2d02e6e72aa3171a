#include "cds/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <map>
#include <ostream>
#include <set>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "cds/backend.hpp"
#include "cds/diagnostics.hpp"
#include "cds/editor.hpp"
#include "cds/error.hpp"
#include "cds/io.hpp"
#include "cds/toy_backend.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cds {

namespace {

constexpr const char* kToolVersion = "1.0.0";

// Everything a run needs, resolved from defaults, config file and flags.
struct RunSpec {
  std::string backend_name = "toy";
  json backend_params = json::object();
  ScheduleKind schedule_kind = ScheduleKind::scaled_linear;
  int schedule_steps = 1000;
  ScheduleParams schedule_params;
  EditConfig edit;
  std::string generator_kind = "identity_latent";
  int grid_size = 16;
  std::string source;
  std::string prompt_ref;
  std::string prompt_tgt;
  std::string out_root = "runs";
  std::string tag = "edit";
  std::string colormap = "heat";
  HeatmapNorm heatmap_norm = HeatmapNorm::per_image;
  bool dump_patches = false;
};

json to_json(const RunSpec& s) {
  json sched{{"kind", to_string(s.schedule_kind)},
             {"num_steps", s.schedule_steps},
             {"beta_start", s.schedule_params.beta_start},
             {"beta_end", s.schedule_params.beta_end},
             {"cosine_offset", s.schedule_params.cosine_offset},
             {"alpha_bar_start", s.schedule_params.alpha_bar_start},
             {"alpha_bar_end", s.schedule_params.alpha_bar_end}};
  json edit = cds::to_json(s.edit);
  json guidance = edit["guidance"];
  json patch = edit["patch"];
  edit.erase("guidance");
  edit.erase("patch");
  json gen{{"kind", s.generator_kind}};
  if (s.generator_kind == "coordinate_grid_toy") gen["grid_size"] = s.grid_size;
  return {{"backend", {{"name", s.backend_name}, {"params", s.backend_params}}},
          {"schedule", sched},
          {"guidance", guidance},
          {"patch", patch},
          {"edit", edit},
          {"generator", gen},
          {"input", {{"source", s.source}, {"prompt_ref", s.prompt_ref}, {"prompt_tgt", s.prompt_tgt}}},
          {"output",
           {{"root", s.out_root},
            {"tag", s.tag},
            {"colormap", s.colormap},
            {"heatmap_norm", s.heatmap_norm == HeatmapNorm::per_image ? "per_image" : "global"},
            {"dump_patches", s.dump_patches}}}};
}

void require_object(const json& j, const char* what) {
  if (!j.is_object()) throw Error(ErrorCode::invalid_config, fmt::format("'{}' must be an object", what));
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* what) {
  for (const auto& [k, v] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; })) {
      throw Error(ErrorCode::invalid_config, fmt::format("unknown key '{}' in {}", k, what));
    }
  }
}

// Applies a parsed config document onto `s`. Relative paths resolve against `base`.
void apply_config(RunSpec& s, const json& doc, const fs::path& base) {
  require_object(doc, "config");
  check_keys(doc, {"backend", "schedule", "guidance", "patch", "edit", "generator", "input", "output"}, "config");
  try {
    if (doc.contains("backend")) {
      const json& b = doc.at("backend");
      require_object(b, "backend");
      check_keys(b, {"name", "params"}, "backend");
      s.backend_name = b.value("name", s.backend_name);
      if (b.contains("params")) s.backend_params = b.at("params");
    }
    if (doc.contains("schedule")) {
      const json& j = doc.at("schedule");
      require_object(j, "schedule");
      check_keys(j, {"kind", "num_steps", "beta_start", "beta_end", "cosine_offset", "alpha_bar_start", "alpha_bar_end"},
                 "schedule");
      if (j.contains("kind")) s.schedule_kind = parse_schedule_kind(j.at("kind").get<std::string>());
      s.schedule_steps = j.value("num_steps", s.schedule_steps);
      ScheduleParams& p = s.schedule_params;
      p.beta_start = j.value("beta_start", p.beta_start);
      p.beta_end = j.value("beta_end", p.beta_end);
      p.cosine_offset = j.value("cosine_offset", p.cosine_offset);
      p.alpha_bar_start = j.value("alpha_bar_start", p.alpha_bar_start);
      p.alpha_bar_end = j.value("alpha_bar_end", p.alpha_bar_end);
    }
    json edit = doc.value("edit", json::object());
    require_object(edit, "edit");
    check_keys(edit, {"lambda_con", "steps", "step_size", "t_range", "seed", "log_every", "optimizer", "rmsprop",
                      "loss_location", "frozen_draw"},
               "edit");
    if (doc.contains("guidance")) {
      require_object(doc.at("guidance"), "guidance");
      check_keys(doc.at("guidance"), {"omega"}, "guidance");
      edit["guidance"] = doc.at("guidance");
    }
    if (doc.contains("patch")) {
      check_keys(doc.at("patch"), {"num_patches", "patch_size", "tau", "layer_policy", "layers", "normalize", "aggregation"},
                 "patch");
      edit["patch"] = doc.at("patch");
    }
    s.edit = edit_config_from_json(edit, s.edit);
    if (doc.contains("generator")) {
      const json& g = doc.at("generator");
      require_object(g, "generator");
      check_keys(g, {"kind", "grid_size"}, "generator");
      s.generator_kind = g.value("kind", s.generator_kind);
      s.grid_size = g.value("grid_size", s.grid_size);
    }
    if (doc.contains("input")) {
      const json& in = doc.at("input");
      require_object(in, "input");
      check_keys(in, {"source", "prompt_ref", "prompt_tgt"}, "input");
      if (in.contains("source")) {
        fs::path p = in.at("source").get<std::string>();
        if (p.is_relative() && !base.empty()) p = base / p;
        s.source = p.lexically_normal().string();
      }
      s.prompt_ref = in.value("prompt_ref", s.prompt_ref);
      s.prompt_tgt = in.value("prompt_tgt", s.prompt_tgt);
    }
    if (doc.contains("output")) {
      const json& o = doc.at("output");
      require_object(o, "output");
      check_keys(o, {"root", "tag", "colormap", "heatmap_norm", "dump_patches"}, "output");
      s.out_root = o.value("root", s.out_root);
      s.tag = o.value("tag", s.tag);
      s.colormap = o.value("colormap", s.colormap);
      const std::string norm = o.value("heatmap_norm", std::string("per_image"));
      if (norm != "per_image" && norm != "global") {
        throw Error(ErrorCode::invalid_config, "heatmap_norm must be 'per_image' or 'global'");
      }
      s.heatmap_norm = norm == "global" ? HeatmapNorm::global : HeatmapNorm::per_image;
      s.dump_patches = o.value("dump_patches", s.dump_patches);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::invalid_config, std::string("config: ") + e.what());
  }
}

void check_spec(const RunSpec& s) {
  if (s.generator_kind != "identity_latent" && s.generator_kind != "coordinate_grid_toy") {
    throw Error(ErrorCode::invalid_config, fmt::format("unknown generator kind '{}'", s.generator_kind));
  }
  if (s.colormap != "heat" && s.colormap != "gray") {
    throw Error(ErrorCode::invalid_config, fmt::format("unknown colormap '{}'", s.colormap));
  }
  if (s.tag.empty() || s.tag.find_first_of("/\\") != std::string::npos) {
    throw Error(ErrorCode::invalid_config, "output tag must be a non-empty file name");
  }
}

// Flags shared by edit and ablate; unset options leave the config untouched.
struct EditFlags {
  std::string config;
  std::string source;
  std::optional<std::string> prompt_ref;
  std::optional<std::string> prompt_tgt;
  std::optional<double> lambda_con;
  std::optional<double> omega;
  std::optional<int> steps;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> backend;
  std::string out;
  std::optional<int> patch_size;
  std::optional<int> num_patches;
  std::optional<std::string> loss_location;
  bool dump_patches = false;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "JSON config file");
    app->add_option("--source", source, "source image (.png) or latent (.latent)");
    app->add_option("--prompt-ref", prompt_ref, "prompt describing the source");
    app->add_option("--prompt-tgt", prompt_tgt, "prompt describing the edit");
    app->add_option("--lambda-con", lambda_con, "weight of the contrastive loss");
    app->add_option("--omega", omega, "classifier-free guidance scale");
    app->add_option("--steps", steps, "optimization steps");
    app->add_option("--seed", seed, "random seed");
    app->add_option("--backend", backend, "denoiser backend name");
    app->add_option("--out", out, "run directory (default runs/<timestamp>-<tag>)");
    app->add_option("--patch-size", patch_size, "patch side for every layer (default mixed 1/2)");
    app->add_option("--num-patches", num_patches, "patches per layer");
    app->add_option("--loss-location", loss_location,
                    "self_attention, score_output or cross_attention_placeholder");
    app->add_flag("--dump-patches", dump_patches, "write sampled patch locations per step");
  }

  RunSpec resolve() const {
    RunSpec s;
    if (!config.empty()) {
      if (!fs::exists(config)) throw Error(ErrorCode::invalid_config, fmt::format("config not found: {}", config));
      json doc;
      try {
        doc = json::parse(read_file(config));
      } catch (const json::exception& e) {
        throw Error(ErrorCode::invalid_config, fmt::format("config {}: {}", config, e.what()));
      }
      apply_config(s, doc, fs::path(config).parent_path());
    }
    if (!source.empty()) s.source = source;
    if (prompt_ref) s.prompt_ref = *prompt_ref;
    if (prompt_tgt) s.prompt_tgt = *prompt_tgt;
    if (lambda_con) s.edit.lambda_con = *lambda_con;
    if (omega) s.edit.guidance.omega = *omega;
    if (steps) s.edit.steps = *steps;
    if (seed) s.edit.seed = *seed;
    if (backend) s.backend_name = *backend;
    if (patch_size) s.edit.patch.patch_size = *patch_size;
    if (num_patches) s.edit.patch.num_patches = *num_patches;
    if (loss_location) s.edit.loss_location = parse_loss_location(*loss_location);
    if (dump_patches) s.dump_patches = true;
    check_spec(s);
    if (s.source.empty()) throw Error(ErrorCode::invalid_config, "no source given (--source or input.source)");
    if (s.prompt_ref.empty() || s.prompt_tgt.empty()) {
      throw Error(ErrorCode::invalid_config, "both --prompt-ref and --prompt-tgt are required");
    }
    return s;
  }
};

struct Context {
  std::shared_ptr<const NoiseSchedule> schedule;
  std::unique_ptr<Denoiser> backend;
  Latent source;
  std::string source_sha1;
};

Context build_context(const RunSpec& s) {
  Context c;
  try {
    c.schedule = std::make_shared<NoiseSchedule>(make_schedule(s.schedule_kind, s.schedule_steps, s.schedule_params));
  } catch (const Error& e) {
    throw Error(ErrorCode::invalid_config, std::string("schedule: ") + e.what());
  }
  validate(s.edit, c.schedule->num_steps());
  c.backend = make_backend(s.backend_name, s.backend_params, c.schedule);
  if (!fs::exists(s.source)) throw Error(ErrorCode::invalid_config, fmt::format("source not found: {}", s.source));
  const std::string bytes = read_file(s.source);
  c.source_sha1 = git_blob_sha1(bytes);
  if (fs::path(s.source).extension() == ".latent") {
    c.source = read_latent(s.source);
  } else {
    c.source = c.backend->encode_image(read_png(s.source));
  }
  if (!(c.source.shape() == c.backend->descriptor().latent_shape)) {
    throw Error(ErrorCode::invalid_config,
                fmt::format("source latent {} does not match backend latent {}", to_string(c.source.shape()),
                            to_string(c.backend->descriptor().latent_shape)));
  }
  return c;
}

fs::path make_run_dir(const std::string& out, const RunSpec& s, bool allow_existing) {
  fs::path dir;
  if (!out.empty()) {
    dir = out;
  } else {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
    dir = fs::path(s.out_root) / fmt::format("{}-{}", stamp, s.tag);
  }
  if (fs::exists(dir) && !allow_existing && !fs::is_empty(dir)) {
    throw Error(ErrorCode::invalid_config, fmt::format("output directory {} is not empty", dir.string()));
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::io, fmt::format("cannot create {}: {}", dir.string(), ec.message()));
  return dir;
}

std::string loss_csv(const std::vector<StepLog>& logs) {
  std::string out = "step,t,dds_norm,con_loss,update_norm\n";
  for (const StepLog& l : logs) {
    out += fmt::format("{},{},{:.17g},{:.17g},{:.17g}\n", l.step, l.t, l.dds_norm, l.con_loss, l.update_norm);
  }
  return out;
}

json inventory(const fs::path& dir) {
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), dir).generic_string();
    if (rel == "manifest.json" || rel.ends_with(".tmp")) continue;
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  json inv = json::array();
  for (const std::string& f : files) {
    const std::string bytes = read_file(dir / f);
    inv.push_back({{"path", f}, {"bytes", bytes.size()}, {"sha1", git_blob_sha1(bytes)}});
  }
  inv.push_back({{"path", "manifest.json"}});
  return inv;
}

void write_manifest(const fs::path& dir, json manifest) {
  manifest["inventory"] = inventory(dir);
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

json base_manifest(const std::string& command, const RunSpec& s, const Context& c) {
  const json resolved = to_json(s);
  json desc = to_json(c.backend->descriptor());
  return {{"tool", "cds"},
          {"version", kToolVersion},
          {"command", command},
          {"method", s.edit.lambda_con == 0.0 ? "dds" : "cds"},
          {"seed", s.edit.seed},
          {"config", resolved},
          {"backend", desc},
          {"inputs", {{"source", {{"path", s.source}, {"sha1", c.source_sha1}}}}},
          {"input_hash", git_blob_sha1(resolved.dump() + "\n" + c.source_sha1)}};
}

std::unique_ptr<Generator> make_generator(const RunSpec& s, const Latent& source) {
  if (s.generator_kind == "coordinate_grid_toy") {
    auto g = std::make_unique<CoordinateGridGenerator>(source.shape(), s.grid_size);
    g->fit(source);
    return g;
  }
  return std::make_unique<IdentityLatentGenerator>(source);
}

// Mean latent of the classes a prompt selects, when the backend knows them.
std::optional<Latent> prompt_mean(const Denoiser& backend, const std::string& prompt) {
  const auto* toy = dynamic_cast<const ToyBackend*>(&backend);
  if (toy == nullptr) return std::nullopt;
  const std::vector<double> w = toy->class_weights(toy->embed_prompt(prompt));
  Latent m(backend.descriptor().latent_shape);
  for (int k = 0; k < toy->num_classes(); ++k) m.axpy(w[static_cast<std::size_t>(k)], toy->class_mean(k));
  return m;
}

int report(const std::exception& e, std::ostream& err) {
  if (const auto* n = dynamic_cast<const NumericalError*>(&e)) {
    err << fmt::format("error: numerical abort at step {} (last good step {}): {}\n", n->step(), n->last_good_step(),
                       n->what());
    return exit_numerical;
  }
  if (const auto* ce = dynamic_cast<const Error*>(&e)) {
    err << fmt::format("error: {}: {}\n", to_string(ce->code()), ce->what());
    switch (ce->code()) {
      case ErrorCode::backend_unavailable:
      case ErrorCode::unknown_tap: return exit_backend;
      case ErrorCode::numerical: return exit_numerical;
      default: return exit_config;
    }
  }
  err << "error: " << e.what() << "\n";
  return exit_failure;
}

int cmd_edit(const EditFlags& flags, bool resume, std::ostream& out) {
  const RunSpec spec = flags.resolve();
  if (resume && flags.out.empty()) throw Error(ErrorCode::invalid_config, "--resume requires --out");
  Context ctx = build_context(spec);
  const fs::path dir = make_run_dir(flags.out, spec, resume);
  fs::create_directories(dir / "heatmaps");

  EditState state;
  if (resume) {
    if (!fs::exists(dir / "checkpoint.state")) {
      throw Error(ErrorCode::invalid_config, fmt::format("no checkpoint in {}", dir.string()));
    }
    state = state_from_pack(read_pack(dir / "checkpoint.state"));
    if (state.seed != spec.edit.seed) throw Error(ErrorCode::invalid_config, "checkpoint seed differs from config");
  } else {
    state = EditState(make_generator(spec, ctx.source), spec.edit.seed);
  }

  const EditConfig& cfg = spec.edit;
  json manifest = base_manifest("edit", spec, ctx);
  std::vector<std::pair<int, Heatmap>> maps;
  json patches = json::array();
  const auto observer = [&](const EditState& st, const StepDetail& d) {
    const int step = d.log.step;
    const bool last = step + 1 == cfg.steps;
    if (step % cfg.log_every == 0 || last) maps.emplace_back(step, gradient_magnitude(d.total_grad));
    if ((step + 1) % cfg.log_every == 0 || last) write_pack(dir / "checkpoint.state", state_to_pack(st));
    if (spec.dump_patches) patches.push_back({{"step", step}, {"t", d.log.t}, {"plan", to_json(d.plan)}});
  };

  EditResult result;
  const Generator& gen0 = *state.generator;
  try {
    if (spec.generator_kind == "identity_latent" && gen0.kind() == GeneratorKind::identity_latent) {
      result = run_edit(ctx.source, spec.prompt_ref, spec.prompt_tgt, cfg, *ctx.backend, *ctx.schedule, observer,
                        &state);
    } else {
      const std::vector<Latent> views{ctx.source};
      result = run_generator_edit(gen0, views, spec.prompt_ref, spec.prompt_tgt, cfg, *ctx.backend, *ctx.schedule,
                                  observer, &state);
    }
  } catch (const NumericalError& e) {
    manifest["status"] = "numerical_abort";
    manifest["error"] = {{"step", e.step()}, {"last_good_step", e.last_good_step()}, {"message", e.what()}};
    write_manifest(dir, manifest);
    throw;
  }

  double global_max = 0.0;
  for (const auto& [step, h] : maps) {
    for (double v : h.data) global_max = std::max(global_max, v);
  }
  for (auto& [step, h] : maps) {
    Heatmap n = h;
    double scale = spec.heatmap_norm == HeatmapNorm::global ? global_max : 0.0;
    if (spec.heatmap_norm == HeatmapNorm::per_image) {
      for (double v : h.data) scale = std::max(scale, v);
    }
    if (scale > 0.0) {
      for (double& v : n.data) v = std::min(v / scale, 1.0);
    }
    n.normalization = spec.heatmap_norm;
    write_png(dir / "heatmaps" / fmt::format("step_{:04d}.png", step), heatmap_to_image(n, spec.colormap));
  }
  write_png(dir / "source.png", ctx.backend->decode_latent(ctx.source));
  write_png(dir / "output.png", ctx.backend->decode_latent(result.final_latent));
  write_latent(dir / "output.latent", result.final_latent);
  write_file_atomic(dir / "loss.csv", loss_csv(result.logs));
  if (spec.dump_patches) write_file_atomic(dir / "patches.json", patches.dump() + "\n");
  json summary = summarize_run(result);
  summary["structure_distance"] = structure_distance(*ctx.backend, ctx.source, result.final_latent).value;
  if (const auto mr = prompt_mean(*ctx.backend, spec.prompt_ref)) {
    const auto mt = prompt_mean(*ctx.backend, spec.prompt_tgt);
    if (l2_norm(*mt - *mr) > 0.0) summary["semantic_shift"] = semantic_shift(result.final_latent, ctx.source, *mr, *mt);
  }
  write_file_atomic(dir / "summary.json", summary.dump(2) + "\n");
  manifest["status"] = "ok";
  manifest["method"] = result.method;
  manifest["warnings"] = result.warnings;
  manifest["wall_seconds"] = result.wall_seconds;
  write_manifest(dir, manifest);
  for (const std::string& w : result.warnings) out << "warning: " << w << "\n";
  out << dir.string() << "\n";
  return exit_ok;
}

int cmd_ablate(const EditFlags& flags, const std::string& axis, const std::vector<std::string>& values,
               std::vector<std::uint64_t> seeds, std::ostream& out) {
  if (axis != "lambda" && axis != "patch_size" && axis != "num_patches" && axis != "loss_location") {
    throw Error(ErrorCode::invalid_config, fmt::format("unknown sweep axis '{}'", axis));
  }
  if (values.empty()) throw Error(ErrorCode::invalid_config, "empty sweep");
  RunSpec base = flags.resolve();
  if (seeds.empty()) seeds.push_back(base.edit.seed);
  Context ctx = build_context(base);
  RunSpec tagged = base;
  if (flags.out.empty() && base.tag == "edit") tagged.tag = "ablate";
  const fs::path dir = make_run_dir(flags.out, tagged, false);

  std::vector<RunSpec> specs;
  for (const std::string& v : values) {
    RunSpec s = base;
    try {
      if (axis == "lambda") {
        s.edit.lambda_con = std::stod(v);
      } else if (axis == "patch_size") {
        if (v == "mixed") {
          s.edit.patch.patch_size.reset();
        } else {
          s.edit.patch.patch_size = std::stoi(v);
        }
      } else if (axis == "num_patches") {
        s.edit.patch.num_patches = std::stoi(v);
      } else {
        s.edit.loss_location = parse_loss_location(v);
      }
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::invalid_config, fmt::format("bad {} value '{}'", axis, v));
    }
    validate(s.edit, ctx.schedule->num_steps());
    specs.push_back(std::move(s));
  }

  const Denoiser& be = *ctx.backend;
  const std::optional<Latent> mu_ref = prompt_mean(be, base.prompt_ref);
  const std::optional<Latent> mu_tgt = prompt_mean(be, base.prompt_tgt);
  const bool has_shift = mu_ref && mu_tgt && l2_norm(*mu_tgt - *mu_ref) > 0.0;
  const TextEmbedding null = be.embed_prompt(kNullPrompt);
  const std::vector<std::string> taps = select_layers(be.descriptor(), base.edit.patch);
  const std::vector<FeatureMap> src_feats = be.predict_noise(ctx.source, null, 1, taps).features;

  std::string csv = "axis,value,seed,final_con_loss,eval_con_loss,structure_distance,semantic_shift\n";
  std::vector<Image> panels{be.decode_latent(ctx.source)};
  json runs = json::array();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    std::vector<double> fc, ec, sd, sh;
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      EditConfig cfg = specs[i].edit;
      cfg.seed = seeds[k];
      const EditResult r = run_edit(ctx.source, base.prompt_ref, base.prompt_tgt, cfg, be, *ctx.schedule);
      const std::vector<FeatureMap> f = be.predict_noise(r.final_latent, null, 1, taps).features;
      Rng prng(mix_seed(cfg.seed, 0xe7a1, 0));
      PatchConfig pc = base.edit.patch;
      pc.layer_policy = LayerPolicy::explicit_list;
      pc.layers = taps;
      fc.push_back(r.logs.back().con_loss);
      ec.push_back(patchnce_loss(f, src_feats, pc, prng).value);
      sd.push_back(structure_distance(be, ctx.source, r.final_latent).value);
      sh.push_back(has_shift ? semantic_shift(r.final_latent, ctx.source, *mu_ref, *mu_tgt) : NAN);
      csv += fmt::format("{},{},{},{:.17g},{:.17g},{:.17g},{}\n", axis, values[i], cfg.seed, fc.back(), ec.back(),
                         sd.back(), has_shift ? fmt::format("{:.17g}", sh.back()) : std::string());
      if (k == 0) panels.push_back(be.decode_latent(r.final_latent));
      runs.push_back({{"value", values[i]}, {"seed", cfg.seed}, {"method", r.method}, {"config", to_json(cfg)}});
    }
    auto median = [](std::vector<double> v) {
      std::sort(v.begin(), v.end());
      const std::size_t n = v.size();
      return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    csv += fmt::format("{},{},median,{:.17g},{:.17g},{:.17g},{}\n", axis, values[i], median(fc), median(ec),
                       median(sd), has_shift ? fmt::format("{:.17g}", median(sh)) : std::string());
  }
  write_file_atomic(dir / "ablation.csv", csv);
  write_png(dir / "panel.png", hconcat(panels));
  json manifest = base_manifest("ablate", base, ctx);
  manifest["sweep"] = {{"axis", axis}, {"values", values}, {"seeds", seeds}};
  manifest["runs"] = runs;
  manifest["status"] = "ok";
  write_manifest(dir, manifest);
  out << dir.string() << "\n";
  return exit_ok;
}

int cmd_backends_list(std::ostream& out) {
  auto sched = std::make_shared<NoiseSchedule>(make_schedule(ScheduleKind::scaled_linear, 1000));
  json arr = json::array();
  for (const std::string& name : registered_backends()) {
    auto be = make_backend(name, json::object(), sched);
    json d = to_json(be->descriptor());
    if (const auto* toy = dynamic_cast<const ToyBackend*>(be.get())) d["params"] = to_json(toy->config());
    arr.push_back(d);
  }
  out << arr.dump(2) << "\n";
  return exit_ok;
}

int cmd_schedule_dump(const std::string& kind, int steps, const std::string& path, std::ostream& out) {
  NoiseSchedule sched;
  try {
    sched = make_schedule(parse_schedule_kind(kind), steps);
  } catch (const Error& e) {
    throw Error(ErrorCode::invalid_config, e.what());
  }
  const std::string csv = schedule_csv(sched);
  if (path.empty()) {
    out << csv;
  } else {
    write_file_atomic(path, csv);
  }
  return exit_ok;
}

int cmd_panel(const std::string& run, const std::vector<std::string>& images, const std::string& path,
              std::ostream& out) {
  std::vector<fs::path> files;
  if (!run.empty()) {
    const fs::path dir = run;
    files = {dir / "source.png", dir / "output.png"};
    std::vector<fs::path> maps;
    if (fs::exists(dir / "heatmaps")) {
      for (const auto& e : fs::directory_iterator(dir / "heatmaps")) maps.push_back(e.path());
    }
    std::sort(maps.begin(), maps.end());
    if (!maps.empty()) files.push_back(maps.back());
  }
  for (const std::string& i : images) files.emplace_back(i);
  if (files.empty()) throw Error(ErrorCode::invalid_config, "panel needs --run or --images");
  std::vector<Image> panels;
  for (const fs::path& f : files) {
    if (!fs::exists(f)) throw Error(ErrorCode::invalid_config, fmt::format("image not found: {}", f.string()));
    panels.push_back(read_png(f));
  }
  const fs::path target = !path.empty() ? fs::path(path) : fs::path(run) / "panel.png";
  write_png(target, hconcat(panels));
  out << target.string() << "\n";
  return exit_ok;
}

int cmd_toy_scene(const std::string& word, std::uint64_t seed, int size, const std::string& path,
                  std::ostream& out) {
  if (size < 4) throw Error(ErrorCode::invalid_config, "--size must be at least 4");
  ToyBackendConfig tc;
  tc.latent_shape = Shape{3, size, size};
  ToyBackend toy(tc, std::make_shared<NoiseSchedule>(make_schedule(ScheduleKind::scaled_linear, 1000)));
  const Latent z = toy_source_latent(toy, word, seed);
  if (fs::path(path).extension() == ".latent") {
    write_latent(path, z);
  } else {
    write_png(path, toy.decode_latent(z));
  }
  out << path << "\n";
  return exit_ok;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Contrastive denoising score editing toolkit", "cds"};
  app.require_subcommand(1);

  EditFlags edit_flags;
  bool resume = false;
  CLI::App* edit = app.add_subcommand("edit", "run one edit");
  edit_flags.attach(edit);
  edit->add_flag("--resume", resume, "continue from checkpoint.state in --out");

  EditFlags ablate_flags;
  std::string axis;
  std::vector<std::string> values;
  std::vector<std::uint64_t> seeds;
  CLI::App* ablate = app.add_subcommand("ablate", "sweep one setting and compare runs");
  ablate_flags.attach(ablate);
  ablate->add_option("--axis", axis, "lambda, patch_size, num_patches or loss_location")->required();
  ablate->add_option("--values", values, "comma-separated sweep values")->delimiter(',')->required();
  ablate->add_option("--seeds", seeds, "comma-separated seeds (default: --seed)")->delimiter(',');

  CLI::App* backends = app.add_subcommand("backends", "backend introspection");
  backends->require_subcommand(1);
  CLI::App* list = backends->add_subcommand("list", "print backend descriptors as JSON");

  std::string kind = "scaled_linear";
  int sched_steps = 1000;
  std::string sched_out;
  CLI::App* schedule = app.add_subcommand("schedule", "noise schedule tools");
  schedule->require_subcommand(1);
  CLI::App* dump = schedule->add_subcommand("dump", "write t,a_t,b_t as CSV");
  dump->add_option("--kind", kind, "scaled_linear, cosine or linear");
  dump->add_option("--steps", sched_steps, "number of timesteps");
  dump->add_option("--out", sched_out, "output file (default stdout)");

  std::string panel_run, panel_out;
  std::vector<std::string> panel_images;
  CLI::App* panel = app.add_subcommand("panel", "compose images side by side");
  panel->add_option("--run", panel_run, "run directory: source, output and last heatmap");
  panel->add_option("--images", panel_images, "explicit image list");
  panel->add_option("--out", panel_out, "output PNG (default <run>/panel.png)");

  std::string word = "cat", scene_out;
  std::uint64_t scene_seed = 0;
  int scene_size = 64;
  CLI::App* scene = app.add_subcommand("toy-scene", "write a structured toy source scene");
  scene->add_option("--word", word, "vocabulary word");
  scene->add_option("--seed", scene_seed, "scene seed");
  scene->add_option("--size", scene_size, "side length");
  scene->add_option("--out", scene_out, "output .png or .latent")->required();

  std::vector<std::string> rev(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
  std::reverse(rev.begin(), rev.end());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? exit_ok : exit_config;
  }

  try {
    if (edit->parsed()) return cmd_edit(edit_flags, resume, out);
    if (ablate->parsed()) return cmd_ablate(ablate_flags, axis, values, seeds, out);
    if (list->parsed()) return cmd_backends_list(out);
    if (dump->parsed()) return cmd_schedule_dump(kind, sched_steps, sched_out, out);
    if (panel->parsed()) return cmd_panel(panel_run, panel_images, panel_out, out);
    if (scene->parsed()) return cmd_toy_scene(word, scene_seed, scene_size, scene_out, out);
  } catch (const std::exception& e) {
    return report(e, err);
  }
  return exit_failure;
}

}  // namespace cds
