#include <cmath>
#include <vector>

#include "doctest.h"
#include "soundstage/common.h"
#include "soundstage/diffusion.h"
#include "soundstage/dit.h"
#include "soundstage/nn.h"
#include "soundstage/rng.h"
#include "soundstage/tensor.h"
#include "test_support.h"

using namespace soundstage;
using namespace soundstage::diffusion;

namespace {

Tensor randn_t(const Shape& s, Rng& rng, double scale = 1.0) {
  Tensor t = Tensor::zeros(s);
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

dit::DitConfig tiny_cfg() {
  dit::DitConfig cfg;
  cfg.num_blocks = 1;
  cfg.hidden_dim = 8;
  cfg.num_heads = 2;
  cfg.patch_size = 2;
  cfg.cond_dim = 4;
  cfg.latent_channels = 2;
  cfg.content_channels = 2;
  return cfg;
}

}  // namespace

TEST_CASE("noise schedule construction and invariants") {
  auto s = NoiseSchedule::linear(1000);
  CHECK(s.T == 1000);
  CHECK(s.betas.front() == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(s.betas.back() == doctest::Approx(0.02).epsilon(1e-12));
  CHECK(s.alpha_bar(0) == 1.0);
  for (int t = 1; t <= s.T; ++t) {
    CHECK(s.betas[static_cast<size_t>(t - 1)] > 0.0);
    CHECK(s.betas[static_cast<size_t>(t - 1)] < 1.0);
    CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
  }
  CHECK_THROWS_AS(s.alpha_bar(1001), InputError);
  CHECK_THROWS_AS(NoiseSchedule::from_betas({0.5, 1.0}), InputError);
  CHECK_THROWS_AS(NoiseSchedule::from_betas({0.0}), InputError);
  CHECK_THROWS_AS(NoiseSchedule::from_betas({}), InputError);
}

TEST_CASE("q_sample closed forms and boundaries") {
  Rng rng(3);
  auto z0 = randn_t({2, 3, 2}, rng);
  auto eps = randn_t({2, 3, 2}, rng);
  SUBCASE("alpha_bar 0.25 mixes half and sqrt3-half") {
    auto s = NoiseSchedule::from_betas({0.5, 0.5});
    REQUIRE(s.alpha_bar(2) == doctest::Approx(0.25).epsilon(1e-15));
    auto zt = q_sample(z0, 2, eps, s);
    for (size_t i = 0; i < zt.data().size(); ++i) {
      double want = 0.5 * z0.data()[i] + 0.5 * std::sqrt(3.0) * eps.data()[i];
      CHECK(zt.data()[i] == doctest::Approx(want).epsilon(1e-14));
    }
  }
  SUBCASE("alpha_bar near one returns z0") {
    auto s = NoiseSchedule::from_betas({1e-12});
    auto zt = q_sample(z0, 1, eps, s);
    for (size_t i = 0; i < zt.data().size(); ++i)
      CHECK(std::abs(zt.data()[i] - z0.data()[i]) < 1e-5);
  }
  SUBCASE("alpha_bar near zero returns eps") {
    auto s = NoiseSchedule::from_betas({1.0 - 1e-12});
    auto zt = q_sample(z0, 1, eps, s);
    for (size_t i = 0; i < zt.data().size(); ++i)
      CHECK(std::abs(zt.data()[i] - eps.data()[i]) < 1e-5);
  }
  SUBCASE("linearity in z0 and eps") {
    auto s = NoiseSchedule::linear(10);
    auto a = q_sample(z0, 5, eps, s);
    auto b = q_sample(scale(z0, 2.0), 5, scale(eps, 2.0), s);
    for (size_t i = 0; i < a.data().size(); ++i)
      CHECK(b.data()[i] == doctest::Approx(2.0 * a.data()[i]).epsilon(1e-12));
  }
  SUBCASE("t range and shape errors") {
    auto s = NoiseSchedule::linear(10);
    CHECK_THROWS_AS(q_sample(z0, 0, eps, s), InputError);
    CHECK_THROWS_AS(q_sample(z0, 11, eps, s), InputError);
    auto bad = randn_t({2, 3, 1}, rng);
    CHECK_THROWS_AS(q_sample(z0, 5, bad, s), InputError);
  }
}

TEST_CASE("guided_score algebra") {
  SUBCASE("worked scalar case gives 26") {
    auto cc = Tensor::scalar(1.0), e0 = Tensor::scalar(2.0), c0 = Tensor::scalar(3.0),
         nn = Tensor::scalar(0.0);
    auto out = guided_score(cc, e0, c0, nn, {5.0, 5.0});
    CHECK(out.item() == 26.0);
  }
  SUBCASE("zero weights degenerate to the conditional prediction") {
    Rng rng(5);
    auto cc = randn_t({2, 2, 2}, rng);
    auto e0 = randn_t({2, 2, 2}, rng);
    auto c0 = randn_t({2, 2, 2}, rng);
    auto nn = randn_t({2, 2, 2}, rng);
    auto out = guided_score(cc, e0, c0, nn, {0.0, 0.0});
    for (size_t i = 0; i < cc.data().size(); ++i) CHECK(out.data()[i] == cc.data()[i]);
  }
  SUBCASE("equal inputs are a fixed point for any weights") {
    Rng rng(6);
    auto s = randn_t({3, 2, 2}, rng);
    auto out = guided_score(s, s, s, s, {7.25, -0.0});
    for (size_t i = 0; i < s.data().size(); ++i) CHECK(out.data()[i] == s.data()[i]);
  }
  SUBCASE("matches the elementwise affine oracle") {
    Rng rng(7);
    auto cc = randn_t({2, 3, 2}, rng);
    auto e0 = randn_t({2, 3, 2}, rng);
    auto c0 = randn_t({2, 3, 2}, rng);
    auto nn = randn_t({2, 3, 2}, rng);
    GuidanceWeights w{1.75, 0.4};
    auto out = guided_score(cc, e0, c0, nn, w);
    for (size_t i = 0; i < cc.data().size(); ++i) {
      double want = cc.data()[i] + w.w_env * (e0.data()[i] - nn.data()[i]) +
                    w.w_cont * (c0.data()[i] - nn.data()[i]);
      CHECK(tsup::rel_err(out.data()[i], want) < 1e-12);
    }
  }
  SUBCASE("shape mismatch") {
    auto a = Tensor::zeros({2, 2, 2});
    auto b = Tensor::zeros({2, 2, 1});
    CHECK_THROWS_AS(guided_score(a, a, b, a, {1.0, 1.0}), InputError);
  }
}

TEST_CASE("diffusion_loss values") {
  Rng rng(9);
  auto s = NoiseSchedule::linear(50);
  ParamStore ps;
  auto cfg = tiny_cfg();
  auto model = make_dit(ps, "dit", cfg, rng);
  auto z0 = randn_t({2, 4, 4}, rng);
  auto eps = randn_t({2, 4, 4}, rng);
  dit::ConditionPair cond;
  cond.env = {randn_t({4}, rng)};
  cond.cont = randn_t({2, 4, 4}, rng);

  SUBCASE("matches an independent mean-of-squares oracle") {
    auto loss = diffusion_loss(model, z0, 7, cond, eps, s);
    NoGradGuard ng;
    auto pred = dit_forward(model, q_sample(z0, 7, eps, s), 7, cond);
    double acc = 0.0;
    for (size_t i = 0; i < eps.data().size(); ++i) {
      double d = eps.data()[i] - pred.data()[i];
      acc += d * d;
    }
    acc /= static_cast<double>(eps.data().size());
    CHECK(tsup::rel_err(loss.item(), acc) < 1e-12);
  }
  SUBCASE("near-zero prediction with unit noise gives about one") {
    // fresh model predicts near zero, so the loss sits at mean(eps^2)
    Tensor ones = Tensor::zeros({2, 4, 4});
    for (double& v : ones.data()) v = 1.0;
    auto loss = diffusion_loss(model, z0, 7, cond, ones, s);
    CHECK(loss.item() == doctest::Approx(1.0).epsilon(0.05));
  }
}

TEST_CASE("dropout_conditions") {
  Rng rng(11);
  dit::ConditionPair cond;
  cond.env = {randn_t({4}, rng), randn_t({4}, rng)};
  cond.cont = randn_t({2, 2, 2}, rng);
  SUBCASE("p=0 leaves both branches intact") {
    auto out = dropout_conditions(cond, 0.0, 0.0, rng);
    CHECK(out.env.size() == 2);
    CHECK(out.cont.defined());
  }
  SUBCASE("p=1 nulls both") {
    auto out = dropout_conditions(cond, 1.0, 1.0, rng);
    CHECK(out.env.empty());
    CHECK_FALSE(out.cont.defined());
  }
  SUBCASE("empirical rates within 3 sigma at p=0.1") {
    int drops_env = 0, drops_cont = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
      auto out = dropout_conditions(cond, 0.1, 0.1, rng);
      drops_env += out.env.empty() ? 1 : 0;
      drops_cont += out.cont.defined() ? 0 : 1;
    }
    double sigma3 = 3.0 * std::sqrt(0.1 * 0.9 / n);
    CHECK(std::abs(drops_env / static_cast<double>(n) - 0.1) <= sigma3);
    CHECK(std::abs(drops_cont / static_cast<double>(n) - 0.1) <= sigma3);
  }
  SUBCASE("reproducible under a fixed seed") {
    Rng a(42), b(42);
    for (int i = 0; i < 50; ++i) {
      auto oa = dropout_conditions(cond, 0.3, 0.7, a);
      auto ob = dropout_conditions(cond, 0.3, 0.7, b);
      CHECK(oa.env.empty() == ob.env.empty());
      CHECK(oa.cont.defined() == ob.cont.defined());
    }
  }
  SUBCASE("probability validation") {
    CHECK_THROWS_AS(dropout_conditions(cond, -0.1, 0.5, rng), InputError);
    CHECK_THROWS_AS(dropout_conditions(cond, 0.5, 1.5, rng), InputError);
  }
}

TEST_CASE("guided_eval skips exactly the zero-weight branches") {
  Rng rng(13);
  // distinct deterministic predictions per null pattern
  auto mk = [&](double v) {
    Tensor t = Tensor::zeros({2, 2, 2});
    for (double& x : t.data()) x = v;
    return t;
  };
  ScoreFn score = [&](const Tensor&, int, bool env_null, bool cont_null) {
    if (!env_null && !cont_null) return mk(1.0);
    if (!env_null && cont_null) return mk(2.0);
    if (env_null && !cont_null) return mk(3.0);
    return mk(0.0);
  };
  auto z = randn_t({2, 2, 2}, rng);

  struct Case {
    GuidanceWeights w;
    int evals;
  };
  for (const auto& c : {Case{{5.0, 5.0}, 4}, Case{{0.0, 5.0}, 3}, Case{{5.0, 0.0}, 3},
                        Case{{0.0, 0.0}, 1}}) {
    int n = 0;
    auto got = guided_eval(score, z, 3, c.w, &n);
    CHECK(n == c.evals);
    auto want = guided_score(mk(1.0), mk(2.0), mk(3.0), mk(0.0), c.w);
    for (size_t i = 0; i < got.data().size(); ++i) CHECK(got.data()[i] == want.data()[i]);
  }
  // the worked case lands on 26 through the eval path too
  auto out = guided_eval(score, z, 3, {5.0, 5.0}, nullptr);
  CHECK(out.data()[0] == 26.0);
}

TEST_CASE("sampler basics") {
  auto s = NoiseSchedule::linear(50);
  ScoreFn zero_score = [](const Tensor& z_t, int, bool, bool) {
    return Tensor::zeros(z_t.shape());
  };
  SUBCASE("steps=0 returns the freshly drawn noise") {
    Rng rng(17);
    auto z = sample(zero_score, {2, 2, 2}, {5.0, 5.0}, s, 0, rng, SampleMode::kDeterministic);
    Rng ref(17);
    for (double v : z.data()) CHECK(v == ref.normal());
  }
  SUBCASE("deterministic mode is bit-reproducible") {
    Rng a(19), b(19);
    auto za = sample(zero_score, {2, 2, 2}, {1.0, 1.0}, s, 10, a, SampleMode::kDeterministic);
    auto zb = sample(zero_score, {2, 2, 2}, {1.0, 1.0}, s, 10, b, SampleMode::kDeterministic);
    for (size_t i = 0; i < za.data().size(); ++i) CHECK(za.data()[i] == zb.data()[i]);
  }
  SUBCASE("ancestral mode reproducible per seed, varying across seeds") {
    Rng a(23), b(23), c(24);
    auto za = sample(zero_score, {2, 2, 2}, {1.0, 1.0}, s, 10, a, SampleMode::kAncestral);
    auto zb = sample(zero_score, {2, 2, 2}, {1.0, 1.0}, s, 10, b, SampleMode::kAncestral);
    auto zc = sample(zero_score, {2, 2, 2}, {1.0, 1.0}, s, 10, c, SampleMode::kAncestral);
    double diff = 0.0;
    for (size_t i = 0; i < za.data().size(); ++i) {
      CHECK(za.data()[i] == zb.data()[i]);
      diff += std::abs(za.data()[i] - zc.data()[i]);
    }
    CHECK(diff > 1e-6);
  }
  SUBCASE("steps beyond T rejected") {
    Rng rng(29);
    CHECK_THROWS_AS(sample(zero_score, {2, 2, 2}, {1.0, 1.0}, s, 51, rng,
                           SampleMode::kDeterministic),
                    InputError);
  }
}

TEST_CASE("deterministic sampler converges under the analytic oracle") {
  auto s = NoiseSchedule::linear(50);
  Rng rng(31);
  auto z_star = randn_t({2, 3, 2}, rng);
  // exact noise oracle for a fixed clean target
  ScoreFn oracle = [&](const Tensor& z_t, int t, bool, bool) {
    double ab = s.alpha_bar(t);
    return scale(sub(z_t, scale(z_star, std::sqrt(ab))), 1.0 / std::sqrt(1.0 - ab));
  };
  auto out = sample(oracle, {2, 3, 2}, {5.0, 5.0}, s, 50, rng, SampleMode::kDeterministic);
  double linf = 0.0;
  for (size_t i = 0; i < out.data().size(); ++i)
    linf = std::max(linf, std::abs(out.data()[i] - z_star.data()[i]));
  CHECK(linf < 1e-3);
}

TEST_CASE("sampling through a real dit model runs in both modes") {
  ParamStore ps;
  Rng rng(37);
  auto cfg = tiny_cfg();
  auto model = make_dit(ps, "dit", cfg, rng);
  dit::ConditionPair cond;
  cond.env = {randn_t({4}, rng)};
  cond.cont = randn_t({2, 4, 4}, rng);
  auto s = NoiseSchedule::linear(20);
  auto fn = dit_score_fn(model, cond);
  auto za = sample(fn, {2, 4, 4}, {5.0, 5.0}, s, 5, rng, SampleMode::kDeterministic);
  auto zb = sample(fn, {2, 4, 4}, {2.0, 0.0}, s, 5, rng, SampleMode::kAncestral);
  CHECK(za.shape() == Shape{2, 4, 4});
  CHECK(zb.shape() == Shape{2, 4, 4});
}

TEST_CASE("smoke train: frozen toy tuples overfit by 10x") {
  ParamStore ps;
  Rng rng(41);
  auto cfg = tiny_cfg();
  auto model = make_dit(ps, "dit", cfg, rng);
  auto s = NoiseSchedule::linear(50);

  struct Tuple {
    Tensor z0, eps, cont;
    std::vector<Tensor> env;
    int t;
  };
  std::vector<Tuple> data;
  for (int k = 0; k < 4; ++k) {
    Tuple d;
    d.z0 = randn_t({2, 4, 4}, rng);
    d.eps = randn_t({2, 4, 4}, rng);
    d.cont = randn_t({2, 4, 4}, rng);
    d.env = {randn_t({4}, rng)};
    d.t = 5 + 10 * k;
    data.push_back(std::move(d));
  }
  auto epoch_loss = [&] {
    double acc = 0.0;
    for (auto& d : data) {
      dit::ConditionPair cond;
      cond.env = d.env;
      cond.cont = d.cont;
      NoGradGuard ng;
      acc += diffusion_loss(model, d.z0, d.t, cond, d.eps, s).item();
    }
    return acc;
  };
  double initial = epoch_loss();
  AdamWConfig ocfg;
  ocfg.lr = 3e-3;
  ocfg.weight_decay = 0.0;
  AdamW opt(ocfg);
  for (int step = 0; step < 500; ++step) {
    auto& d = data[static_cast<size_t>(step % 4)];
    dit::ConditionPair cond;
    cond.env = d.env;
    cond.cont = d.cont;
    ps.zero_grads();
    backward(diffusion_loss(model, d.z0, d.t, cond, d.eps, s));
    opt.step(ps);
  }
  CHECK(epoch_loss() * 10.0 <= initial);
}
