#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cds/backend.hpp"
#include "cds/cut.hpp"
#include "cds/generator.hpp"
#include "cds/io.hpp"
#include "cds/schedule.hpp"

namespace cds {

enum class LossLocation { self_attention, score_output, cross_attention_placeholder };
enum class Optimizer { sgd, rmsprop };

std::string to_string(LossLocation loc);
LossLocation parse_loss_location(std::string_view name);
std::string to_string(Optimizer opt);
Optimizer parse_optimizer(std::string_view name);

struct EditConfig {
  GuidanceConfig guidance;
  double lambda_con = 3.0;
  int steps = 200;
  double step_size = 2.0;
  TimestepRange t_range;
  PatchConfig patch;
  std::uint64_t seed = 0;
  int log_every = 50;
  Optimizer optimizer = Optimizer::sgd;
  double rmsprop_decay = 0.9;
  double rmsprop_eps = 1e-8;
  LossLocation loss_location = LossLocation::self_attention;
  // Reuse the step-0 draw (t, eps, patch locations) at every step.
  bool frozen_draw = false;
};

void validate(const EditConfig& cfg, int num_timesteps);
nlohmann::json to_json(const EditConfig& cfg);
EditConfig edit_config_from_json(const nlohmann::json& j, EditConfig base = {});

struct StepLog {
  int step = 0;
  int t = 0;
  double dds_norm = 0.0;  // L2 norm of the DDS direction on z0
  double con_loss = 0.0;  // l_con value (0 when lambda is 0)
  double update_norm = 0.0;
};

struct EditState {
  std::unique_ptr<Generator> generator;
  int step = 0;
  std::vector<StepLog> history;
  std::vector<double> opt_state;  // rmsprop second moments
  std::uint64_t seed = 0;

  EditState() = default;
  EditState(std::unique_ptr<Generator> gen, std::uint64_t seed);
  EditState(const EditState& other);
  EditState& operator=(const EditState& other);
  EditState(EditState&&) noexcept = default;
  EditState& operator=(EditState&&) noexcept = default;
};

struct EditResult {
  Latent final_latent;
  std::vector<Latent> final_views;
  std::vector<StepLog> logs;
  double wall_seconds = 0.0;
  nlohmann::json config;
  std::string method;  // "cds", or "dds" when lambda is 0
  std::vector<std::string> warnings;
};

// Everything one step computed, for observers and tests.
struct StepDetail {
  StepLog log;
  int view = 0;
  Latent eps;
  Latent z0;          // render before the update
  Latent dds;         // DDS direction on z0
  Latent con_grad;    // gradient of l_con on z0 (unweighted)
  Latent total_grad;  // dds + lambda * con_grad
  PatchPlan plan;
};

// Draws for a step: stream 0 feeds (t, eps), stream 1 the patch locations.
Rng step_rng(std::uint64_t seed, int step, int stream);

struct Prompts {
  TextEmbedding tgt;
  TextEmbedding ref;
  TextEmbedding null;
};

Prompts embed_prompts(const Denoiser& backend, std::string_view prompt_ref, std::string_view prompt_tgt);

// One update theta <- theta - step_size * [(dz0/dtheta)^T dds + lambda grad l_con].
// `sources` holds one source latent per generator view; the step edits view
// step mod num_views.
void cds_step(EditState& state, std::span<const Latent> sources, const Prompts& prompts,
              const EditConfig& cfg, const Denoiser& backend, const NoiseSchedule& sched,
              StepDetail* detail = nullptr, std::vector<std::string>* warnings = nullptr);

using StepObserver = std::function<void(const EditState&, const StepDetail&)>;

EditResult run_edit(const Latent& source, std::string_view prompt_ref, std::string_view prompt_tgt,
                    const EditConfig& cfg, const Denoiser& backend, const NoiseSchedule& sched,
                    const StepObserver& observer = {}, EditState* resume = nullptr);

EditResult run_generator_edit(const Generator& gen, std::span<const Latent> source_views,
                              std::string_view prompt_ref, std::string_view prompt_tgt,
                              const EditConfig& cfg, const Denoiser& backend,
                              const NoiseSchedule& sched, const StepObserver& observer = {},
                              EditState* resume = nullptr);

// Checkpoint as a pack container (fields "params", "opt_state"; generator
// description, step, seed and history in meta).
Pack state_to_pack(const EditState& state);
EditState state_from_pack(const Pack& pack);

}  // namespace cds
