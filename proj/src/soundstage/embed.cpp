#include "soundstage/embed.h"

#include <cmath>
#include <sstream>

#include "soundstage/common.h"
#include "soundstage/datagen.h"

namespace soundstage::embed {

namespace {

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

Tensor project_and_normalize(const std::vector<double>& feat, int dim, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> out(static_cast<size_t>(dim), 0.0);
  double s = 1.0 / std::sqrt(static_cast<double>(feat.size()));
  // fixed projection drawn row-major so results never depend on call order
  for (int i = 0; i < dim; ++i)
    for (size_t j = 0; j < feat.size(); ++j)
      out[static_cast<size_t>(i)] += s * rng.normal() * feat[j];
  double n2 = 0.0;
  for (double v : out) n2 += v * v;
  if (n2 < 1e-24) {
    out.assign(static_cast<size_t>(dim), 0.0);
    out[0] = 1.0;
  } else {
    double inv = 1.0 / std::sqrt(n2);
    for (double& v : out) v *= inv;
  }
  return Tensor::from_data({dim}, std::move(out));
}

}  // namespace

CondEmbedding toy_audio_embed(const dsp::Waveform& w, const ProviderConfig& cfg) {
  check(cfg.dim >= 1, "toy_audio_embed: positive dim required");
  dsp::StftConfig scfg;
  scfg.fft_size = 256;
  scfg.window_length = 256;
  scfg.hop_length = 64;
  scfg.mel_bins = 16;
  scfg.fmax_hz = std::min(8000.0, w.sample_rate_hz / 2.0);
  dsp::Waveform padded = w;
  if (static_cast<int>(padded.samples.size()) < scfg.window_length)
    padded.samples.resize(static_cast<size_t>(scfg.window_length), 0.0);
  auto m = dsp::mel_spectrogram(padded, scfg);
  std::vector<double> feat(static_cast<size_t>(2 * m.mel_bins), 0.0);
  for (int b = 0; b < m.mel_bins; ++b) {
    double mean = 0.0;
    for (int f = 0; f < m.frames; ++f) mean += m.at(f, b);
    mean /= static_cast<double>(m.frames);
    double var = 0.0;
    for (int f = 0; f < m.frames; ++f) {
      double d = m.at(f, b) - mean;
      var += d * d;
    }
    feat[static_cast<size_t>(b)] = mean;
    feat[static_cast<size_t>(m.mel_bins + b)] = std::sqrt(var / m.frames);
  }
  return {project_and_normalize(feat, cfg.dim, cfg.seed ^ 0xa0d10ull), Modality::kAudio};
}

CondEmbedding toy_text_embed(const std::string& caption, const ProviderConfig& cfg) {
  check(cfg.dim >= 1, "toy_text_embed: positive dim required");
  std::istringstream ss(datagen::normalize_text(caption));
  std::vector<double> buckets(static_cast<size_t>(cfg.dim), 0.0);
  std::string word;
  int words = 0;
  while (ss >> word) {
    buckets[static_cast<size_t>(fnv1a(word) % static_cast<uint64_t>(cfg.dim))] += 1.0;
    ++words;
  }
  check(words > 0, "toy_text_embed: empty caption");
  return {project_and_normalize(buckets, cfg.dim, cfg.seed ^ 0x7e47ull), Modality::kText};
}

CondEmbedding toy_image_embed(const std::string& tag, const ProviderConfig& cfg) {
  check(cfg.dim >= 1, "toy_image_embed: positive dim required");
  check(!tag.empty(), "toy_image_embed: empty tag");
  Rng rng(cfg.seed ^ fnv1a(tag));
  std::vector<double> v(static_cast<size_t>(cfg.dim));
  double n2 = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    n2 += x * x;
  }
  double inv = 1.0 / std::sqrt(std::max(n2, 1e-24));
  for (auto& x : v) x *= inv;
  return {Tensor::from_data({cfg.dim}, std::move(v)), Modality::kImage};
}

Translator make_translator(ParamStore& ps, const std::string& prefix,
                           const TranslatorConfig& cfg, Rng& rng) {
  check(cfg.dim >= 1 && cfg.hidden >= 2 && cfg.blocks >= 1 && cfg.heads >= 1,
        "translator: positive sizes required");
  check(cfg.hidden % cfg.heads == 0, "translator: hidden not divisible by heads");
  Translator tr;
  tr.cfg = cfg;
  tr.zp = make_linear(ps, prefix + ".zp", cfg.dim, cfg.hidden, rng);
  tr.yp = make_linear(ps, prefix + ".yp", cfg.dim, cfg.hidden, rng);
  tr.token = ps.create_randn(prefix + ".token", {cfg.hidden}, 0.5, rng);
  for (int b = 0; b < cfg.blocks; ++b)
    tr.blocks.push_back(
        make_attn_block(ps, prefix + ".block" + std::to_string(b), cfg.hidden, cfg.heads, 2, rng));
  tr.head = make_linear(ps, prefix + ".head", cfg.hidden, cfg.dim, rng);
  return tr;
}

Tensor i2a_predict(const Translator& tr, int t, const Tensor& z_t, const Tensor& y) {
  const auto& cfg = tr.cfg;
  check(z_t.rank() == 1 && z_t.dim(0) == cfg.dim, "i2a_predict: z_t dim mismatch");
  check(y.rank() == 1 && y.dim(0) == cfg.dim, "i2a_predict: y dim mismatch");
  Tensor t_row = reshape(timestep_embedding(t, cfg.hidden), {cfg.hidden});
  Tensor z_row = reshape(linear(tr.zp, reshape(z_t, {1, cfg.dim})), {cfg.hidden});
  Tensor y_row = reshape(linear(tr.yp, reshape(y, {1, cfg.dim})), {cfg.hidden});
  Tensor x = stack_rows({t_row, z_row, y_row, tr.token});
  x = add(x, positions_1d(4, cfg.hidden));
  for (const auto& blk : tr.blocks) x = attn_block_forward(blk, x);
  x = layer_norm(x);
  return reshape(linear(tr.head, gather_rows(x, {3})), {cfg.dim});
}

Tensor i2a_loss_from_pred(const Tensor& z0, const Tensor& pred, bool l1) {
  check(z0.shape() == pred.shape(), "i2a_loss: shape mismatch");
  Tensor d = sub(z0, pred);
  return l1 ? l1_norm(d) : l2_norm(d);
}

Tensor i2a_loss(const Translator& tr, const Tensor& z0, const Tensor& y, int t,
                const Tensor& z_t) {
  return i2a_loss_from_pred(z0, i2a_predict(tr, t, z_t, y), tr.cfg.l1);
}

CondEmbedding translate_image(const Translator& tr, const Tensor& y,
                              const diffusion::NoiseSchedule& s, int steps, Rng& rng) {
  check(steps >= 1 && steps <= s.T, "translate_image: steps must lie in [1, T]");
  NoGradGuard ng;
  Tensor z = Tensor::zeros({tr.cfg.dim});
  for (double& v : z.data()) v = rng.normal();
  for (int i = steps; i >= 1; --i) {
    int t = std::max(1, static_cast<int>(std::lround(static_cast<double>(i) * s.T / steps)));
    int t_prev = static_cast<int>(std::lround(static_cast<double>(i - 1) * s.T / steps));
    Tensor pred = i2a_predict(tr, t, z, y);
    if (t_prev >= 1) {
      Tensor eps = Tensor::zeros({tr.cfg.dim});
      for (double& v : eps.data()) v = rng.normal();
      z = diffusion::q_sample(pred, t_prev, eps, s);
    } else {
      z = pred;
    }
  }
  return {z, Modality::kTranslated};
}

}  // namespace soundstage::embed
