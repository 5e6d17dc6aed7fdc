#include "soundstage/tts.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "soundstage/common.h"

namespace soundstage::tts {

std::vector<int> tokenize(const std::string& text) {
  check(!text.empty(), "tokenize: empty text");
  std::vector<int> out;
  out.reserve(text.size());
  for (unsigned char c : text) {
    check(c >= 32 && c <= 126, "tokenize: non-printable character in text");
    out.push_back(static_cast<int>(c) - 32);
  }
  return out;
}

TextEncoder make_text_encoder(ParamStore& ps, const std::string& prefix,
                              const TextEncoderConfig& cfg, Rng& rng) {
  TextEncoder enc;
  enc.cfg = cfg;
  enc.embedding = ps.create_randn(prefix + ".embed", {kVocabSize, cfg.width}, 1.0, rng);
  for (int b = 0; b < cfg.blocks; ++b)
    enc.blocks.push_back(make_attn_block(ps, prefix + ".block" + std::to_string(b),
                                         cfg.width, cfg.heads, 2, rng));
  enc.head = make_linear(ps, prefix + ".head", cfg.width, cfg.mel_bins, rng);
  // acoustic means start near the mel floor so early alignments see sane scale
  std::fill(enc.head.b.data().begin(), enc.head.b.data().end(), std::log(1e-5));
  return enc;
}

Tensor encode_text(const TextEncoder& enc, const std::vector<int>& tokens, Tensor* hidden_out) {
  check(!tokens.empty(), "encode_text: empty token sequence");
  for (int t : tokens)
    check(t >= 0 && t < kVocabSize, "encode_text: token id out of vocabulary");
  int L = static_cast<int>(tokens.size());
  Tensor x = add(gather_rows(enc.embedding, tokens), positions_1d(L, enc.cfg.width));
  for (const auto& blk : enc.blocks) x = attn_block_forward(blk, x);
  x = layer_norm(x);
  if (hidden_out) *hidden_out = x;
  return linear(enc.head, x);
}

double alignment_score(const Tensor& mu, const Tensor& y, const Alignment& a) {
  int L = mu.dim(0), M = mu.dim(1), N = y.dim(0);
  check(static_cast<int>(a.frame_to_token.size()) == N, "alignment_score: length mismatch");
  const double c = -0.5 * M * std::log(2.0 * M_PI);
  double score = 0.0;
  for (int j = 0; j < N; ++j) {
    int i = a.frame_to_token[static_cast<size_t>(j)];
    check(i >= 0 && i < L, "alignment_score: token index out of range");
    double d2 = 0.0;
    for (int m = 0; m < M; ++m) {
      double d = y.data()[static_cast<size_t>(j) * M + m] - mu.data()[static_cast<size_t>(i) * M + m];
      d2 += d * d;
    }
    score += c - 0.5 * d2;
  }
  return score;
}

Alignment mas(const Tensor& mu, const Tensor& y) {
  check(mu.rank() == 2 && y.rank() == 2, "mas: rank-2 inputs required");
  check(mu.dim(1) == y.dim(1), "mas: feature width mismatch");
  int L = mu.dim(0), N = y.dim(0), M = mu.dim(1);
  check(N >= L, "mas: fewer frames than tokens, no feasible alignment");

  const double neg_inf = -std::numeric_limits<double>::infinity();
  const double c = -0.5 * M * std::log(2.0 * M_PI);
  // log-likelihood of frame j under token i
  auto ll = [&](int i, int j) {
    double d2 = 0.0;
    for (int m = 0; m < M; ++m) {
      double d = y.data()[static_cast<size_t>(j) * M + m] - mu.data()[static_cast<size_t>(i) * M + m];
      d2 += d * d;
    }
    return c - 0.5 * d2;
  };

  // Q[i][j]: best score with frame j assigned to token i
  std::vector<std::vector<double>> Q(static_cast<size_t>(L),
                                     std::vector<double>(static_cast<size_t>(N), neg_inf));
  Q[0][0] = ll(0, 0);
  for (int j = 1; j < N; ++j) {
    // feasibility: i <= j and L-1-i <= N-1-j
    int imax = std::min(L - 1, j);
    for (int i = 0; i <= imax; ++i) {
      if (L - 1 - i > N - 1 - j) continue;
      double stay = Q[static_cast<size_t>(i)][static_cast<size_t>(j - 1)];
      double advance = i > 0 ? Q[static_cast<size_t>(i - 1)][static_cast<size_t>(j - 1)] : neg_inf;
      double best = std::max(stay, advance);
      if (best == neg_inf) continue;
      Q[static_cast<size_t>(i)][static_cast<size_t>(j)] = best + ll(i, j);
    }
  }

  Alignment a;
  a.frame_to_token.assign(static_cast<size_t>(N), 0);
  int i = L - 1;
  for (int j = N - 1; j >= 1; --j) {
    a.frame_to_token[static_cast<size_t>(j)] = i;
    if (i == 0) continue;
    double stay = Q[static_cast<size_t>(i)][static_cast<size_t>(j - 1)];
    double advance = Q[static_cast<size_t>(i - 1)][static_cast<size_t>(j - 1)];
    if (advance > stay) --i;  // ties prefer staying on the current token
  }
  a.frame_to_token[0] = 0;
  check(i == 0, "mas: backtrack did not reach the first token");
  return a;
}

std::vector<int> alignment_to_durations(const Alignment& a, int num_tokens) {
  check(num_tokens >= 1, "durations: need at least one token");
  std::vector<int> d(static_cast<size_t>(num_tokens), 0);
  for (int t : a.frame_to_token) {
    check(t >= 0 && t < num_tokens, "durations: token index out of range");
    d[static_cast<size_t>(t)]++;
  }
  return d;
}

Tensor upsample_by_duration(const Tensor& mu, const std::vector<int>& d) {
  check(mu.rank() == 2, "upsample: rank-2 mu required");
  check(static_cast<int>(d.size()) == mu.dim(0), "upsample: duration count != token count");
  std::vector<int> idx;
  for (size_t i = 0; i < d.size(); ++i) {
    check(d[i] >= 1, "upsample: durations must be >= 1");
    for (int k = 0; k < d[i]; ++k) idx.push_back(static_cast<int>(i));
  }
  return gather_rows(mu, idx);
}

Tensor encoder_loss(const Tensor& mu_aligned, const Tensor& y) {
  check(mu_aligned.shape() == y.shape(), "encoder_loss: shape mismatch");
  return scale(mse(mu_aligned, y), 0.5);
}

Tensor duration_loss(const std::vector<int>& d, const Tensor& d_hat) {
  check(d_hat.rank() == 1, "duration_loss: rank-1 predictions required");
  check(static_cast<int>(d.size()) == d_hat.dim(0), "duration_loss: length mismatch");
  std::vector<double> logd(d.size());
  for (size_t i = 0; i < d.size(); ++i) {
    check(d[i] >= 1, "duration_loss: reference durations must be positive");
    check(d_hat.data()[i] > 0.0, "duration_loss: predictions must be positive");
    logd[i] = std::log(static_cast<double>(d[i]));
  }
  Tensor diff = sub(soundstage::log(d_hat), Tensor::from_data({static_cast<int>(d.size())}, std::move(logd)));
  return sum(mul(diff, diff));
}

DurationPredictor make_duration_predictor(ParamStore& ps, const std::string& prefix,
                                          const DurationPredictorConfig& cfg, Rng& rng) {
  DurationPredictor dp;
  dp.cfg = cfg;
  double s1 = 1.0 / std::sqrt(static_cast<double>(cfg.width * cfg.kernel));
  double s2 = 1.0 / std::sqrt(static_cast<double>(cfg.hidden * cfg.kernel));
  dp.w1 = ps.create_randn(prefix + ".conv1.w", {cfg.hidden, cfg.width, cfg.kernel}, s1, rng);
  dp.b1 = ps.create(prefix + ".conv1.b", {cfg.hidden});
  dp.w2 = ps.create_randn(prefix + ".conv2.w", {cfg.hidden, cfg.hidden, cfg.kernel}, s2, rng);
  dp.b2 = ps.create(prefix + ".conv2.b", {cfg.hidden});
  dp.head = make_linear(ps, prefix + ".head", cfg.hidden, 1, rng);
  return dp;
}

Tensor predict_durations(const DurationPredictor& dp, const Tensor& encoded) {
  check(encoded.rank() == 2 && encoded.dim(1) == dp.cfg.width,
        "predict_durations: encoder width mismatch");
  int L = encoded.dim(0);
  int pad = dp.cfg.kernel / 2;
  // stop-gradient input: the predictor must not steer the encoder
  Tensor x = transpose(encoded.detach());            // [width, L]
  x = gelu(conv1d(x, dp.w1, dp.b1, pad));            // [hidden, L]
  x = gelu(conv1d(x, dp.w2, dp.b2, pad));
  Tensor logd = linear(dp.head, transpose(x));       // [L, 1]
  return soundstage::exp(reshape(logd, {L}));
}

std::vector<int> round_durations(const Tensor& d_hat) {
  std::vector<int> out(d_hat.numel());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = std::max(1, static_cast<int>(std::floor(d_hat.data()[i] + 0.5)));
  return out;
}

Tensor mel_to_tensor(const dsp::MelSpectrogram& m) {
  return Tensor::from_data({m.frames, m.mel_bins}, m.values);
}

}  // namespace soundstage::tts
