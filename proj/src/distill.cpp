#include "cds/distill.hpp"

#include "cds/error.hpp"

namespace cds {

BranchResult eval_branch(const Denoiser& backend, const Latent& z0, const TextEmbedding& emb,
                         const TextEmbedding& null_emb, int t, const Latent& eps,
                         const GuidanceConfig& g, const NoiseSchedule& sched,
                         std::span<const std::string> taps) {
  BranchResult r;
  r.t = t;
  r.eps_drawn = eps;
  r.z_t = perturb(z0, eps, t, sched);
  DenoiserOutput cond = backend.predict_noise(r.z_t, emb, t, taps);
  const DenoiserOutput uncond = backend.predict_noise(r.z_t, null_emb, t, {});
  r.eps_guided = cfg_compose(cond.eps_hat, uncond.eps_hat, g);
  r.eps_cond = std::move(cond.eps_hat);
  r.features = std::move(cond.features);
  return r;
}

DistillGrad sds_grad(const Denoiser& backend, const Latent& z0, const TextEmbedding& emb,
                     const TextEmbedding& null_emb, int t, const Latent& eps,
                     const GuidanceConfig& g, const NoiseSchedule& sched) {
  BranchResult r = eval_branch(backend, z0, emb, null_emb, t, eps, g, sched);
  DistillGrad out{std::move(r.eps_guided), DistillKind::sds};
  out.grad -= eps;
  return out;
}

DdsResult dds_grad(const Denoiser& backend, const Latent& z0_tgt, const Latent& z0_ref,
                   const TextEmbedding& emb_tgt, const TextEmbedding& emb_ref,
                   const TextEmbedding& null_emb, int t, const Latent& eps,
                   const GuidanceConfig& g, const NoiseSchedule& sched,
                   std::span<const std::string> taps) {
  require_same_shape(z0_tgt, z0_ref, "dds_grad");
  DdsResult out;
  out.target = eval_branch(backend, z0_tgt, emb_tgt, null_emb, t, eps, g, sched, taps);
  out.reference = eval_branch(backend, z0_ref, emb_ref, null_emb, t, eps, g, sched, taps);
  out.grad.kind = DistillKind::dds;
  out.grad.grad = out.target.eps_guided - out.reference.eps_guided;
  return out;
}

}  // namespace cds
