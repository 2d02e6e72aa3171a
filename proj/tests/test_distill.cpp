#include <doctest.h>

#include <cmath>

#include "cds/distill.hpp"
#include "cds/editor.hpp"
#include "support.hpp"

using namespace cds;

TEST_CASE("eval_branch reproduces the high-precision golden") {
  // tests/oracles/toy_replay.py: 3x8x8 toy, source "cat" scene seed 0, draw of step 0 seed 0
  ToyBackendConfig c;
  c.latent_shape = {3, 8, 8};
  auto sched = test::default_schedule();
  const ToyBackend be(c, sched);
  const Latent src = toy_source_latent(be, "cat", 0);
  Rng rng = step_rng(0, 0, 0);
  const int t = sample_timestep(rng, {50, 950});
  const Latent eps = rng.normal_like(src.shape());
  REQUIRE(t == 182);
  const BranchResult br = eval_branch(be, src, be.embed_prompt("dog"), be.embed_prompt(""), t, eps,
                                      {7.5}, *sched);
  CHECK(std::abs(br.eps_guided[0] - -0.93422440624596888) < 1e-6);
  CHECK(std::abs(br.eps_guided[5] - 0.93641715597352425) < 1e-6);
  CHECK(std::abs(br.eps_guided[100] - -3.4624774207880015) < 1e-6);
  CHECK(std::abs(br.eps_guided[150] - -0.61014013617263798) < 1e-6);
}

TEST_CASE("eval_branch guidance edge cases") {
  auto toy = test::make_toy(8);
  const ToyBackend& be = *toy.backend;
  Rng r(1);
  const Latent z0 = test::random_tensor({3, 8, 8}, r);
  const Latent eps = test::random_tensor({3, 8, 8}, r);
  const auto cat = be.embed_prompt("cat");
  const auto null = be.embed_prompt("");
  const BranchResult b0 = eval_branch(be, z0, cat, null, 400, eps, {0.0}, *toy.sched);
  CHECK(max_abs_diff(b0.eps_guided, b0.eps_cond) == 0.0);
  CHECK(max_abs_diff(b0.eps_guided, be.predict_noise(b0.z_t, cat, 400, {}).eps_hat) == 0.0);

  const BranchResult s1 = eval_branch(be, z0, null, null, 400, eps, {1.0}, *toy.sched);
  const BranchResult s2 = eval_branch(be, z0, null, null, 400, eps, {12.0}, *toy.sched);
  CHECK(max_abs_diff(s1.eps_guided, s2.eps_guided) <= 1e-12);

  const std::vector<std::string> taps{"attn1"};
  const BranchResult bt = eval_branch(be, z0, cat, null, 400, eps, {7.5}, *toy.sched, taps);
  REQUIRE(bt.features.size() == 1);
  CHECK(max_abs_diff(bt.features[0].data, be.feature_taps(bt.z_t, taps)[0].data) == 0.0);
  CHECK(bt.t == 400);
  CHECK(max_abs_diff(bt.eps_drawn, eps) == 0.0);
}

TEST_CASE("sds is zero when the drawn noise equals the guided prediction") {
  // With sigma -> 0, omega = 0 and z0 on the class mean, eps_hat returns the drawn noise.
  auto toy = test::make_toy(8, 1e-9);
  const ToyBackend& be = *toy.backend;
  Rng r(2);
  const Latent eps = test::random_tensor({3, 8, 8}, r);
  const DistillGrad g = sds_grad(be, be.class_mean("pig"), be.embed_prompt("pig"), be.embed_prompt(""), 300,
                                 eps, {0.0}, *toy.sched);
  CHECK(l2_norm(g.grad) < 1e-9);
  CHECK(g.kind == DistillKind::sds);
}

TEST_CASE("sds at the class mean averages to zero without guidance") {
  // Under guidance the null branch keeps mass on the other classes at large t,
  // so the guided residual has a nonzero mean even at mu_y.
  auto toy = test::make_toy(8, 1e-6);
  const ToyBackend& be = *toy.backend;
  const auto emb = be.embed_prompt("owl");
  const auto null = be.embed_prompt("");
  const Latent& mu = be.class_mean("owl");
  Rng r(3);
  std::vector<Latent> dirs;
  for (int i = 0; i < 3; ++i) {
    Latent d = test::random_tensor(mu.shape(), r);
    d *= 1.0 / l2_norm(d);
    dirs.push_back(d);
  }
  const int n = 2000;
  std::vector<double> s(3, 0.0), s2(3, 0.0);
  for (int i = 0; i < n; ++i) {
    const int t = sample_timestep(r, {50, 950});
    const Latent eps = r.normal_like(mu.shape());
    const Latent g = sds_grad(be, mu, emb, null, t, eps, {0.0}, *toy.sched).grad;
    for (int k = 0; k < 3; ++k) {
      const double p = dot(g, dirs[static_cast<std::size_t>(k)]);
      s[static_cast<std::size_t>(k)] += p;
      s2[static_cast<std::size_t>(k)] += p * p;
    }
  }
  for (int k = 0; k < 3; ++k) {
    const double m = s[static_cast<std::size_t>(k)] / n;
    const double var = s2[static_cast<std::size_t>(k)] / n - m * m;
    const double se = std::sqrt(var / n);
    CHECK(std::abs(m) <= 3.0 * se + 1e-12);
  }
}

TEST_CASE("sds points from the class mean toward a displaced latent") {
  auto toy = test::make_toy(8);
  const ToyBackend& be = *toy.backend;
  const auto emb = be.embed_prompt("dog");
  const auto null = be.embed_prompt("");
  const Latent& mu = be.class_mean("dog");
  int hits = 0;
  for (int seed = 0; seed < 100; ++seed) {
    Rng r(static_cast<std::uint64_t>(seed));
    const Latent disp = test::random_tensor(mu.shape(), r, 0.5);
    const Latent z0 = mu + disp;
    Latent mean(mu.shape());
    for (int i = 0; i < 16; ++i) {
      const int t = sample_timestep(r, {50, 950});
      mean += sds_grad(be, z0, emb, null, t, r.normal_like(mu.shape()), {7.5}, *toy.sched).grad;
    }
    if (dot(mean, disp) > 0.0) ++hits;
  }
  CHECK(hits >= 95);
}

TEST_CASE("dds identical branches cancel exactly") {
  auto toy = test::make_toy(8);
  const ToyBackend& be = *toy.backend;
  const auto emb = be.embed_prompt("cat");
  const auto null = be.embed_prompt("");
  Rng r(4);
  for (int i = 0; i < 100; ++i) {
    const Latent z = test::random_tensor({3, 8, 8}, r);
    const int t = sample_timestep(r, {50, 950});
    const Latent eps = r.normal_like(z.shape());
    const DdsResult d = dds_grad(be, z, z, emb, emb, null, t, eps, {7.5}, *toy.sched);
    for (double v : d.grad.grad.values()) REQUIRE(v == 0.0);
    CHECK(d.grad.kind == DistillKind::dds);
  }
}

TEST_CASE("dds equals the difference of two sds residuals") {
  auto toy = test::make_toy(8);
  const ToyBackend& be = *toy.backend;
  const auto dog = be.embed_prompt("dog");
  const auto cat = be.embed_prompt("cat");
  const auto null = be.embed_prompt("");
  Rng r(5);
  for (int i = 0; i < 20; ++i) {
    const Latent z = test::random_tensor({3, 8, 8}, r);
    const Latent zr = test::random_tensor({3, 8, 8}, r);
    const int t = sample_timestep(r, {50, 950});
    const Latent eps = r.normal_like(z.shape());
    const DdsResult d = dds_grad(be, z, zr, dog, cat, null, t, eps, {7.5}, *toy.sched);
    const Latent diff = sds_grad(be, z, dog, null, t, eps, {7.5}, *toy.sched).grad -
                        sds_grad(be, zr, cat, null, t, eps, {7.5}, *toy.sched).grad;
    CHECK(max_abs_diff(d.grad.grad, diff) <= 1e-6);
    CHECK(d.grad.grad.all_finite());
    CHECK(d.target.t == t);
    CHECK(d.reference.t == t);
  }
}

TEST_CASE("dds with omega 0 and one prompt is the difference of conditional predictions") {
  auto toy = test::make_toy(8);
  const ToyBackend& be = *toy.backend;
  const auto fox = be.embed_prompt("fox");
  Rng r(6);
  const Latent z = test::random_tensor({3, 8, 8}, r);
  const Latent zr = test::random_tensor({3, 8, 8}, r);
  const Latent eps = r.normal_like(z.shape());
  const DdsResult d = dds_grad(be, z, zr, fox, fox, be.embed_prompt(""), 222, eps, {0.0}, *toy.sched);
  const Latent expect = be.predict_noise(perturb(z, eps, 222, *toy.sched), fox, 222, {}).eps_hat -
                        be.predict_noise(perturb(zr, eps, 222, *toy.sched), fox, 222, {}).eps_hat;
  CHECK(max_abs_diff(d.grad.grad, expect) == 0.0);
}

TEST_CASE("dds cat to dog descends toward the dog mean") {
  // The update is z <- z - eta * grad, so -grad should align with mu_dog - mu_cat.
  auto toy = test::make_toy(8);
  const ToyBackend& be = *toy.backend;
  const Latent src = toy_source_latent(be, "cat", 1);
  const Latent dir = be.class_mean("dog") - be.class_mean("cat");
  Rng r(7);
  Latent mean(src.shape());
  for (int i = 0; i < 1000; ++i) {
    const int t = sample_timestep(r, {50, 950});
    mean += dds_grad(be, src, src, be.embed_prompt("dog"), be.embed_prompt("cat"), be.embed_prompt(""), t,
                     r.normal_like(src.shape()), {7.5}, *toy.sched)
                .grad.grad;
  }
  CHECK(dot(-1.0 * mean, dir) > 0.0);
}
