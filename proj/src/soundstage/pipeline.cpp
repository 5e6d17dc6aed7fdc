#include "soundstage/pipeline.h"

#include <cmath>
#include <cstdio>

#include "soundstage/common.h"

namespace soundstage::pipeline {

void PipelineConfig::validate() const {
  check(text_width >= 1 && text_blocks >= 1 && text_heads >= 1, "config: bad text encoder");
  check(text_width % text_heads == 0, "config: text_width not divisible by heads");
  check(dp_hidden >= 1 && dp_kernel >= 1 && dp_kernel % 2 == 1, "config: bad duration predictor");
  check(mel_bins >= 1, "config: bad mel_bins");
  check(dit_blocks >= 1 && dit_hidden >= 1 && dit_heads >= 1 && dit_patch >= 1,
        "config: bad backbone");
  check(text_mode == "concat" || text_mode == "cross", "config: text_mode must be concat|cross");
  check(speaker_dim >= 0 && mapper_hidden >= 1 && embed_dim >= 1, "config: bad conditioning");
  check(stft_fft >= 2 && stft_hop >= 1 && stft_win >= 2 && stft_win <= stft_fft,
        "config: bad stft settings");
  check(stft_fmin >= 0.0 && stft_fmax > stft_fmin, "config: bad mel band limits");
  check(t_steps >= 1, "config: bad t_steps");
  check(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end, "config: bad betas");
  check(p_drop_env >= 0.0 && p_drop_env <= 1.0 && p_drop_cont >= 0.0 && p_drop_cont <= 1.0,
        "config: bad dropout probabilities");
  check(lr > 0.0 && weight_decay >= 0.0, "config: bad optimizer settings");
  check(codec_steps >= 0 && pretrain_steps >= 0 && finetune_steps >= 0, "config: bad step counts");
}

dit::TextMode PipelineConfig::dit_text_mode() const {
  return text_mode == "cross" ? dit::TextMode::kCrossAttention : dit::TextMode::kConcat;
}

PipelineConfig PipelineConfig::from_config(const io::Config& c) {
  PipelineConfig d;
  d.text_width = c.get_int("text_width", d.text_width);
  d.text_blocks = c.get_int("text_blocks", d.text_blocks);
  d.text_heads = c.get_int("text_heads", d.text_heads);
  d.dp_hidden = c.get_int("dp_hidden", d.dp_hidden);
  d.dp_kernel = c.get_int("dp_kernel", d.dp_kernel);
  d.mel_bins = c.get_int("mel_bins", d.mel_bins);
  d.dit_blocks = c.get_int("dit_blocks", d.dit_blocks);
  d.dit_hidden = c.get_int("dit_hidden", d.dit_hidden);
  d.dit_heads = c.get_int("dit_heads", d.dit_heads);
  d.dit_patch = c.get_int("dit_patch", d.dit_patch);
  d.text_mode = c.get_string("text_mode", d.text_mode);
  d.env_cross_attention = c.get_bool("env_cross_attention", d.env_cross_attention);
  d.speaker_dim = c.get_int("speaker_dim", d.speaker_dim);
  d.mapper_hidden = c.get_int("mapper_hidden", d.mapper_hidden);
  d.embed_dim = c.get_int("embed_dim", d.embed_dim);
  d.stft_fft = c.get_int("stft_fft", d.stft_fft);
  d.stft_hop = c.get_int("stft_hop", d.stft_hop);
  d.stft_win = c.get_int("stft_win", d.stft_win);
  d.stft_fmin = c.get_double("stft_fmin", d.stft_fmin);
  d.stft_fmax = c.get_double("stft_fmax", d.stft_fmax);
  d.provider_seed = c.get_u64("provider_seed", d.provider_seed);
  d.t_steps = c.get_int("t_steps", d.t_steps);
  d.beta_start = c.get_double("beta_start", d.beta_start);
  d.beta_end = c.get_double("beta_end", d.beta_end);
  d.p_drop_env = c.get_double("p_drop_env", d.p_drop_env);
  d.p_drop_cont = c.get_double("p_drop_cont", d.p_drop_cont);
  d.lr = c.get_double("lr", d.lr);
  d.weight_decay = c.get_double("weight_decay", d.weight_decay);
  d.freeze_tts = c.get_bool("freeze_tts", d.freeze_tts);
  d.codec_steps = c.get_int("codec_steps", d.codec_steps);
  d.pretrain_steps = c.get_int("pretrain_steps", d.pretrain_steps);
  d.finetune_steps = c.get_int("finetune_steps", d.finetune_steps);
  d.seed = c.get_u64("seed", d.seed);
  d.validate();
  return d;
}

io::Config PipelineConfig::to_config() const {
  io::Config c;
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  c.set("text_width", std::to_string(text_width));
  c.set("text_blocks", std::to_string(text_blocks));
  c.set("text_heads", std::to_string(text_heads));
  c.set("dp_hidden", std::to_string(dp_hidden));
  c.set("dp_kernel", std::to_string(dp_kernel));
  c.set("mel_bins", std::to_string(mel_bins));
  c.set("dit_blocks", std::to_string(dit_blocks));
  c.set("dit_hidden", std::to_string(dit_hidden));
  c.set("dit_heads", std::to_string(dit_heads));
  c.set("dit_patch", std::to_string(dit_patch));
  c.set("text_mode", text_mode);
  c.set("env_cross_attention", env_cross_attention ? "true" : "false");
  c.set("speaker_dim", std::to_string(speaker_dim));
  c.set("mapper_hidden", std::to_string(mapper_hidden));
  c.set("embed_dim", std::to_string(embed_dim));
  c.set("stft_fft", std::to_string(stft_fft));
  c.set("stft_hop", std::to_string(stft_hop));
  c.set("stft_win", std::to_string(stft_win));
  c.set("stft_fmin", num(stft_fmin));
  c.set("stft_fmax", num(stft_fmax));
  c.set("provider_seed", std::to_string(provider_seed));
  c.set("t_steps", std::to_string(t_steps));
  c.set("beta_start", num(beta_start));
  c.set("beta_end", num(beta_end));
  c.set("p_drop_env", num(p_drop_env));
  c.set("p_drop_cont", num(p_drop_cont));
  c.set("lr", num(lr));
  c.set("weight_decay", num(weight_decay));
  c.set("freeze_tts", freeze_tts ? "true" : "false");
  c.set("codec_steps", std::to_string(codec_steps));
  c.set("pretrain_steps", std::to_string(pretrain_steps));
  c.set("finetune_steps", std::to_string(finetune_steps));
  c.set("seed", std::to_string(seed));
  return c;
}

Pipeline make_pipeline(const PipelineConfig& cfg) {
  cfg.validate();
  Pipeline p;
  p.cfg = cfg;
  Rng rng(cfg.seed);
  p.codec = latent::make_codec(p.ps, "codec", rng);

  tts::TextEncoderConfig tec;
  tec.width = cfg.text_width;
  tec.blocks = cfg.text_blocks;
  tec.heads = cfg.text_heads;
  tec.mel_bins = cfg.mel_bins;
  p.enc = tts::make_text_encoder(p.ps, "tts.enc", tec, rng);

  tts::DurationPredictorConfig dpc;
  dpc.width = cfg.text_width;
  dpc.hidden = cfg.dp_hidden;
  dpc.kernel = cfg.dp_kernel;
  p.dp = tts::make_duration_predictor(p.ps, "tts.dp", dpc, rng);

  p.mapper = latent::make_latent_mapper(p.ps, "mapper", rng, cfg.mapper_hidden);

  dit::DitConfig dc;
  dc.num_blocks = cfg.dit_blocks;
  dc.hidden_dim = cfg.dit_hidden;
  dc.num_heads = cfg.dit_heads;
  dc.patch_size = cfg.dit_patch;
  dc.cond_dim = cfg.embed_dim;
  dc.latent_channels = latent::kLatentChannels;
  dc.content_channels = latent::kLatentChannels;
  dc.speaker_dim = cfg.speaker_dim;
  dc.text_mode = cfg.dit_text_mode();
  dc.env_cross_attention = cfg.env_cross_attention;
  p.model = dit::make_dit(p.ps, "dit", dc, rng);

  p.sched = diffusion::NoiseSchedule::linear(cfg.t_steps, cfg.beta_start, cfg.beta_end);
  return p;
}

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::kCodec: return "codec";
    case Phase::kPretrain: return "pretrain";
    case Phase::kFinetune: return "finetune";
  }
  return "?";
}

ExampleLosses example_losses(const Pipeline& p, const TrainExample& ex, Phase phase,
                             Rng& rng) {
  check(!ex.tokens.empty(), "train example: empty token sequence");
  check(ex.mel.rank() == 2 && ex.mel.dim(1) == p.cfg.mel_bins, "train example: bad mel shape");
  check(ex.env.rank() == 1 && ex.env.dim(0) == p.cfg.embed_dim,
        "train example: bad env embedding");

  ExampleLosses out;
  if (phase == Phase::kCodec) {
    latent::MelPadding pad;
    Tensor z = latent::vae_encode(ex.mel, p.codec, &pad);
    Tensor rec = latent::vae_decode(z, p.codec, pad);
    // The codec is linear, so reconstruction alone leaves the latent scale
    // free. Pin the second moment at 1 so diffusion starts from the prior it
    // was trained against; a rescale costs no reconstruction.
    Tensor second_moment = mse(z, Tensor::zeros(z.shape()));
    Tensor scale_penalty = mse(second_moment, Tensor::scalar(1.0));
    out.total = add(mse(rec, ex.mel), scale(scale_penalty, 0.1));
    out.diff = Tensor::scalar(0.0);
    out.enc = Tensor::scalar(0.0);
    out.dp = Tensor::scalar(0.0);
    return out;
  }

  // The codec is frozen after its own phase, so the target latent is a
  // constant as far as the graph is concerned.
  Tensor z0;
  {
    NoGradGuard ng;
    z0 = latent::vae_encode(ex.mel, p.codec);
  }

  Tensor hidden;
  Tensor mu = tts::encode_text(p.enc, ex.tokens, &hidden);
  tts::Alignment align = tts::mas(mu, ex.mel);
  auto durations = tts::alignment_to_durations(align, static_cast<int>(ex.tokens.size()));
  Tensor y_up = tts::upsample_by_duration(mu, durations);

  out.enc = tts::encoder_loss(y_up, ex.mel);
  out.dp = tts::duration_loss(durations, tts::predict_durations(p.dp, hidden));

  Tensor cont = latent::latent_map(y_up, p.mapper);

  dit::ConditionPair cond;
  cond.env = {ex.env};
  cond.cont = cont;
  if (p.cfg.speaker_dim > 0 && ex.speaker.defined()) cond.speaker = ex.speaker;
  cond = diffusion::dropout_conditions(cond, p.cfg.p_drop_env, p.cfg.p_drop_cont, rng);

  int t = 1 + rng.uniform_int(p.cfg.t_steps);
  Tensor eps = Tensor::zeros(z0.shape());
  rng.fill_normal(eps.data());
  out.diff = diffusion::diffusion_loss(p.model, z0, t, cond, eps, p.sched);

  // In fine-tuning the frozen TTS terms would contribute nothing but graph
  // bloat, so the objective keeps only the diffusion term.
  out.total = phase == Phase::kFinetune ? out.diff : add(add(out.diff, out.enc), out.dp);
  return out;
}

Trainer::Trainer(const PipelineConfig& cfg)
    : p_(make_pipeline(cfg)), opt_(AdamWConfig{}), rng_(Rng::from_stream(cfg.seed, 0x7a11)) {
  opt_.config().lr = cfg.lr;
  opt_.config().weight_decay = cfg.weight_decay;
  apply_phase(current_phase());
}

Trainer::Trainer(const io::Checkpoint& ck)
    : p_(make_pipeline(PipelineConfig::from_config(io::Config::parse_string(ck.config_text)))),
      opt_(AdamWConfig{}),
      rng_(0) {
  opt_.config().lr = p_.cfg.lr;
  opt_.config().weight_decay = p_.cfg.weight_decay;
  io::load_params(ck, p_.ps);
  io::load_optimizer(ck, opt_);
  rng_.set_state(ck.rng_state);
  step_ = ck.step;
  apply_phase(current_phase());
}

Phase Trainer::phase_for(int64_t step) const {
  const auto& c = p_.cfg;
  if (step < c.codec_steps) return Phase::kCodec;
  if (step < c.codec_steps + c.pretrain_steps) return Phase::kPretrain;
  return Phase::kFinetune;
}

int64_t Trainer::total_steps() const {
  const auto& c = p_.cfg;
  return static_cast<int64_t>(c.codec_steps) + c.pretrain_steps + c.finetune_steps;
}

void Trainer::apply_phase(Phase ph) {
  auto& ps = p_.ps;
  switch (ph) {
    case Phase::kCodec:
      ps.set_all_trainable(false);
      ps.set_trainable_prefix("codec.", true);
      opt_.config().lr = p_.cfg.lr;
      break;
    case Phase::kPretrain:
      ps.set_all_trainable(true);
      ps.set_trainable_prefix("codec.", false);
      opt_.config().lr = p_.cfg.lr;
      break;
    case Phase::kFinetune: {
      ps.set_all_trainable(true);
      ps.set_trainable_prefix("codec.", false);
      ps.set_trainable_prefix("tts.", false);
      // Cosine decay to zero across the phase. The last steps decide the
      // weights we sample from, so they should take the smallest steps.
      double u = static_cast<double>(step_ - p_.cfg.codec_steps - p_.cfg.pretrain_steps) /
                 std::max<int64_t>(1, p_.cfg.finetune_steps);
      opt_.config().lr = p_.cfg.lr / 2.0 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * u));
      break;
    }
  }
  if (p_.cfg.freeze_tts) ps.set_trainable_prefix("tts.", false);
}

Trainer::StepLog Trainer::step(const std::vector<TrainExample>& batch) {
  check(!batch.empty(), "trainer: empty batch");
  Phase ph = current_phase();
  apply_phase(ph);

  Tensor total = Tensor::scalar(0.0);
  double diff = 0.0, enc = 0.0, dp = 0.0;
  for (const auto& ex : batch) {
    ExampleLosses l = example_losses(p_, ex, ph, rng_);
    total = add(total, l.total);
    diff += l.diff.item();
    enc += l.enc.item();
    dp += l.dp.item();
  }
  double inv = 1.0 / static_cast<double>(batch.size());
  Tensor loss = scale(total, inv);

  p_.ps.zero_grads();
  backward(loss);
  opt_.step(p_.ps);
  ++step_;

  StepLog log;
  log.step = step_;
  log.phase = ph;
  log.total = loss.item();
  log.diff = diff * inv;
  log.enc = enc * inv;
  log.dp = dp * inv;
  return log;
}

io::Checkpoint Trainer::make_checkpoint() const {
  io::Checkpoint ck;
  ck.config_text = p_.cfg.to_config().serialize();
  ck.step = step_;
  ck.phase = static_cast<int32_t>(current_phase());
  ck.rng_state = rng_.state();
  io::store_params(p_.ps, ck);
  io::store_optimizer(opt_, ck);
  return ck;
}

std::string format_step_log(const Trainer::StepLog& log) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "step=%lld phase=%s total=%.9g diff=%.9g enc=%.9g dp=%.9g",
                static_cast<long long>(log.step), phase_name(log.phase), log.total, log.diff,
                log.enc, log.dp);
  return buf;
}

SampleResult synthesize(const Pipeline& p, const SampleRequest& req) {
  check(!req.tokens.empty(), "synthesize: empty token sequence");
  check(req.steps >= 1 && req.steps <= p.cfg.t_steps, "synthesize: steps must lie in [1, T]");
  if (req.env.defined())
    check(req.env.rank() == 1 && req.env.dim(0) == p.cfg.embed_dim,
          "synthesize: bad env embedding");

  NoGradGuard ng;
  Tensor hidden;
  Tensor mu = tts::encode_text(p.enc, req.tokens, &hidden);

  SampleResult out;
  out.durations =
      req.durations ? *req.durations : tts::round_durations(tts::predict_durations(p.dp, hidden));
  Tensor y_up = tts::upsample_by_duration(mu, out.durations);

  latent::MelPadding pad;
  Tensor cont = latent::latent_map(y_up, p.mapper, &pad);

  dit::ConditionPair cond;
  if (req.env.defined()) cond.env = {req.env};
  cond.cont = cont;
  if (p.cfg.speaker_dim > 0 && req.speaker.defined()) cond.speaker = req.speaker;

  Rng rng(req.seed);
  out.latent = diffusion::sample(diffusion::dit_score_fn(p.model, cond), cont.shape(), req.w,
                                 p.sched, req.steps, rng, req.mode);
  out.mel = latent::vae_decode(out.latent, p.codec, pad);
  return out;
}

}  // namespace soundstage::pipeline
