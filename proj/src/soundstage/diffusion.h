#pragma once

#include <functional>
#include <vector>

#include "soundstage/dit.h"
#include "soundstage/rng.h"
#include "soundstage/tensor.h"

namespace soundstage::diffusion {

struct NoiseSchedule {
  int T = 0;
  std::vector<double> betas, alphas, alpha_bars;
  // linear beta ramp; the conventional default when nothing else is pinned
  static NoiseSchedule linear(int T, double beta_start = 1e-4, double beta_end = 0.02);
  static NoiseSchedule from_betas(std::vector<double> betas);
  double alpha_bar(int t) const;  // t in [0, T]; alpha_bar(0) == 1
};

// sqrt(abar_t) z0 + sqrt(1-abar_t) eps, t in [1, T]
Tensor q_sample(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& s);

struct GuidanceWeights {
  double w_env = 5.0;
  double w_cont = 5.0;
};

// eps_cc + w_env (eps_e0 - eps_00) + w_cont (eps_0c - eps_00)
// (subscripts: first = env branch, second = content branch, 0 = null)
Tensor guided_score(const Tensor& eps_cc, const Tensor& eps_e0, const Tensor& eps_0c,
                    const Tensor& eps_00, const GuidanceWeights& w);

// ||eps - model(q_sample(z0,t,eps), t, cond)||^2, mean over elements
Tensor diffusion_loss(const dit::Dit& model, const Tensor& z0, int t,
                      const dit::ConditionPair& cond, const Tensor& eps,
                      const NoiseSchedule& s);

// Independently nulls the env branch w.p. p_env (draw made first) and the
// content branch w.p. p_cont.
dit::ConditionPair dropout_conditions(const dit::ConditionPair& cond, double p_env,
                                      double p_cont, Rng& rng);

enum class SampleMode { kAncestral, kDeterministic };

// One noise prediction with the given null pattern; lets tests substitute
// closed-form oracles for the network.
using ScoreFn = std::function<Tensor(const Tensor& z_t, int t, bool env_null, bool cont_null)>;

ScoreFn dit_score_fn(const dit::Dit& model, const dit::ConditionPair& cond);

// Up-to-four evaluations combined per the guidance formula; branches whose
// weight is zero are skipped (algebraically identical). eval_count, when
// given, reports how many model calls were made.
Tensor guided_eval(const ScoreFn& score, const Tensor& z_t, int t, const GuidanceWeights& w,
                   int* eval_count = nullptr);

// Ancestral (DDPM) or deterministic (DDIM eta=0) sampling over an evenly
// spaced timestep subsequence. steps=0 returns the freshly drawn noise.
Tensor sample(const ScoreFn& score, const Shape& latent_shape, const GuidanceWeights& w,
              const NoiseSchedule& s, int steps, Rng& rng, SampleMode mode);

}  // namespace soundstage::diffusion
