#pragma once

#include <span>
#include <string>
#include <vector>

#include "cds/backend.hpp"
#include "cds/schedule.hpp"

namespace cds {

// One guided denoiser evaluation at a perturbed latent.
struct BranchResult {
  Latent z_t;
  Latent eps_guided;
  Latent eps_cond;
  std::vector<FeatureMap> features;  // from the conditional pass
  int t = 0;
  Latent eps_drawn;
};

enum class DistillKind { sds, dds };

struct DistillGrad {
  Latent grad;
  DistillKind kind = DistillKind::sds;
};

struct DdsResult {
  DistillGrad grad;
  BranchResult target;
  BranchResult reference;
};

// z_t = perturb(z0, eps, t); eps_guided = cfg_compose(cond pass, null pass).
// Features are tapped on the conditional pass only.
BranchResult eval_branch(const Denoiser& backend, const Latent& z0, const TextEmbedding& emb,
                         const TextEmbedding& null_emb, int t, const Latent& eps,
                         const GuidanceConfig& g, const NoiseSchedule& sched,
                         std::span<const std::string> taps = {});

// Jacobian-free SDS direction eps_guided - eps.
DistillGrad sds_grad(const Denoiser& backend, const Latent& z0, const TextEmbedding& emb,
                     const TextEmbedding& null_emb, int t, const Latent& eps,
                     const GuidanceConfig& g, const NoiseSchedule& sched);

// DDS direction eps_guided(target) - eps_guided(reference), both branches
// sharing (t, eps). The reference branch is treated as constant.
DdsResult dds_grad(const Denoiser& backend, const Latent& z0_tgt, const Latent& z0_ref,
                   const TextEmbedding& emb_tgt, const TextEmbedding& emb_ref,
                   const TextEmbedding& null_emb, int t, const Latent& eps,
                   const GuidanceConfig& g, const NoiseSchedule& sched,
                   std::span<const std::string> taps = {});

}  // namespace cds
