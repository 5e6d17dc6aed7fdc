#include "soundstage/diffusion.h"

#include <cmath>

#include "soundstage/common.h"

namespace soundstage::diffusion {

NoiseSchedule NoiseSchedule::linear(int T, double beta_start, double beta_end) {
  check(T >= 1, "schedule: T >= 1 required");
  std::vector<double> b(static_cast<size_t>(T));
  for (int t = 0; t < T; ++t)
    b[static_cast<size_t>(t)] =
        T == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / (T - 1.0);
  return from_betas(std::move(b));
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  check(!betas.empty(), "schedule: empty betas");
  NoiseSchedule s;
  s.T = static_cast<int>(betas.size());
  s.betas = std::move(betas);
  s.alphas.resize(s.betas.size());
  s.alpha_bars.resize(s.betas.size());
  double prod = 1.0;
  for (size_t t = 0; t < s.betas.size(); ++t) {
    check(s.betas[t] > 0.0 && s.betas[t] < 1.0, "schedule: betas must lie in (0,1)");
    s.alphas[t] = 1.0 - s.betas[t];
    prod *= s.alphas[t];
    s.alpha_bars[t] = prod;
  }
  return s;
}

double NoiseSchedule::alpha_bar(int t) const {
  check(t >= 0 && t <= T, "schedule: t out of range");
  return t == 0 ? 1.0 : alpha_bars[static_cast<size_t>(t - 1)];
}

Tensor q_sample(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& s) {
  check(t >= 1 && t <= s.T, "q_sample: t outside [1, T]");
  check(z0.shape() == eps.shape(), "q_sample: noise shape mismatch");
  double ab = s.alpha_bar(t);
  return add(scale(z0, std::sqrt(ab)), scale(eps, std::sqrt(1.0 - ab)));
}

Tensor guided_score(const Tensor& eps_cc, const Tensor& eps_e0, const Tensor& eps_0c,
                    const Tensor& eps_00, const GuidanceWeights& w) {
  check(eps_cc.shape() == eps_e0.shape() && eps_cc.shape() == eps_0c.shape() &&
            eps_cc.shape() == eps_00.shape(),
        "guided_score: shape mismatch");
  Tensor out = eps_cc;
  if (w.w_env != 0.0) out = add(out, scale(sub(eps_e0, eps_00), w.w_env));
  if (w.w_cont != 0.0) out = add(out, scale(sub(eps_0c, eps_00), w.w_cont));
  return out;
}

Tensor diffusion_loss(const dit::Dit& model, const Tensor& z0, int t,
                      const dit::ConditionPair& cond, const Tensor& eps,
                      const NoiseSchedule& s) {
  Tensor z_t = q_sample(z0, t, eps, s);
  return mse(eps, dit_forward(model, z_t, t, cond));
}

dit::ConditionPair dropout_conditions(const dit::ConditionPair& cond, double p_env,
                                      double p_cont, Rng& rng) {
  check(p_env >= 0.0 && p_env <= 1.0 && p_cont >= 0.0 && p_cont <= 1.0,
        "dropout_conditions: probabilities must lie in [0,1]");
  dit::ConditionPair out = cond;
  if (rng.uniform() < p_env) out.env.clear();
  if (rng.uniform() < p_cont) out.cont = Tensor();
  return out;
}

ScoreFn dit_score_fn(const dit::Dit& model, const dit::ConditionPair& cond) {
  return [&model, cond](const Tensor& z_t, int t, bool env_null, bool cont_null) {
    dit::ConditionPair c;
    if (!env_null) c.env = cond.env;
    if (!cont_null) c.cont = cond.cont;
    c.speaker = cond.speaker;
    return dit_forward(model, z_t, t, c);
  };
}

Tensor guided_eval(const ScoreFn& score, const Tensor& z_t, int t, const GuidanceWeights& w,
                   int* eval_count) {
  int n = 0;
  Tensor cc = score(z_t, t, false, false);
  ++n;
  Tensor e0, c0, nn;
  if (w.w_env != 0.0 || w.w_cont != 0.0) {
    nn = score(z_t, t, true, true);
    ++n;
  }
  if (w.w_env != 0.0) {
    e0 = score(z_t, t, false, true);
    ++n;
  }
  if (w.w_cont != 0.0) {
    c0 = score(z_t, t, true, false);
    ++n;
  }
  if (eval_count) *eval_count = n;
  // unused branches never touch the result; cc stands in for them
  return guided_score(cc, e0.defined() ? e0 : cc, c0.defined() ? c0 : cc,
                      nn.defined() ? nn : cc, w);
}

Tensor sample(const ScoreFn& score, const Shape& latent_shape, const GuidanceWeights& w,
              const NoiseSchedule& s, int steps, Rng& rng, SampleMode mode) {
  check(steps >= 0 && steps <= s.T, "sample: steps must lie in [0, T]");
  NoGradGuard ng;
  Tensor z = Tensor::zeros(latent_shape);
  for (double& v : z.data()) v = rng.normal();
  if (steps == 0) return z;

  for (int i = steps; i >= 1; --i) {
    // evenly spaced subsequence tau_i = round(i*T/steps); tau_0 = 0 (clean)
    int t = static_cast<int>(std::lround(static_cast<double>(i) * s.T / steps));
    int t_prev = static_cast<int>(std::lround(static_cast<double>(i - 1) * s.T / steps));
    t = std::max(t, 1);
    Tensor eps_hat = guided_eval(score, z, t, w);
    double ab_t = s.alpha_bar(t), ab_p = s.alpha_bar(t_prev);

    if (mode == SampleMode::kDeterministic) {
      // DDIM eta=0: reconstruct z0, re-noise deterministically
      Tensor z0_hat = scale(sub(z, scale(eps_hat, std::sqrt(1.0 - ab_t))), 1.0 / std::sqrt(ab_t));
      z = add(scale(z0_hat, std::sqrt(ab_p)), scale(eps_hat, std::sqrt(1.0 - ab_p)));
    } else {
      // DDPM posterior generalized to the subsequence jump
      double a_jump = ab_t / ab_p;
      Tensor meanv = scale(sub(z, scale(eps_hat, (1.0 - a_jump) / std::sqrt(1.0 - ab_t))),
                           1.0 / std::sqrt(a_jump));
      if (t_prev >= 1) {
        double var = (1.0 - ab_p) / (1.0 - ab_t) * (1.0 - a_jump);
        double sigma = std::sqrt(std::max(var, 0.0));
        Tensor xi = Tensor::zeros(latent_shape);
        for (double& v : xi.data()) v = rng.normal();
        meanv = add(meanv, scale(xi, sigma));
      }
      z = meanv;
    }
  }
  return z;
}

}  // namespace soundstage::diffusion
