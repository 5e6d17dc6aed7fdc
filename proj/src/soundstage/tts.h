#pragma once

#include <string>
#include <vector>

#include "soundstage/dsp.h"
#include "soundstage/nn.h"
#include "soundstage/tensor.h"

namespace soundstage::tts {

// Character-level tokenizer over printable ASCII 32..126.
inline constexpr int kVocabSize = 95;
std::vector<int> tokenize(const std::string& text);

struct TextEncoderConfig {
  int width = 64;      // model dim
  int blocks = 2;      // pre-norm self-attention blocks
  int heads = 4;
  int mel_bins = 16;   // output dim M
};

// Token embedding + sinusoidal positions + self-attention blocks + linear
// head to per-token acoustic means.
struct TextEncoder {
  TextEncoderConfig cfg;
  Tensor embedding;  // [vocab, width]
  std::vector<AttnBlock> blocks;
  Linear head;       // width -> mel_bins
};

TextEncoder make_text_encoder(ParamStore& ps, const std::string& prefix,
                              const TextEncoderConfig& cfg, Rng& rng);
// [L] token ids -> [L, M] acoustic means; optionally exposes the [L, width]
// hidden states that feed the duration predictor.
Tensor encode_text(const TextEncoder& enc, const std::vector<int>& tokens,
                   Tensor* hidden_out = nullptr);

struct Alignment {
  std::vector<int> frame_to_token;  // length N, monotone, steps in {0,1}
};

// Maximum-likelihood monotone alignment of N frames onto L tokens under
// per-token unit-variance Gaussians: maximizes sum_j logN(y_j; mu_{A(j)}, I).
// Ties prefer staying on the current token. O(L*N).
Alignment mas(const Tensor& mu, const Tensor& y);
// The DP objective value of a given alignment (shared by tests and oracles).
double alignment_score(const Tensor& mu, const Tensor& y, const Alignment& a);

std::vector<int> alignment_to_durations(const Alignment& a, int num_tokens);

// [L, M] + durations summing to N -> [N, M]; keeps gradients flowing to mu.
Tensor upsample_by_duration(const Tensor& mu, const std::vector<int>& d);

// (1/(N*M)) * sum 0.5*(y - mu_aligned)^2
Tensor encoder_loss(const Tensor& mu_aligned, const Tensor& y);
// sum_i (log d_i - log d_hat_i)^2; d_hat entries must be positive
Tensor duration_loss(const std::vector<int>& d, const Tensor& d_hat);

struct DurationPredictorConfig {
  int width = 64;    // encoder width (input channels)
  int hidden = 64;
  int kernel = 3;
};

// Two 1-D convolutions + projection predicting log-durations from encoder
// outputs (gradients are stopped at the input, Glow-TTS style).
struct DurationPredictor {
  DurationPredictorConfig cfg;
  Tensor w1, b1, w2, b2;  // conv stacks
  Linear head;            // hidden -> 1
};

DurationPredictor make_duration_predictor(ParamStore& ps, const std::string& prefix,
                                          const DurationPredictorConfig& cfg, Rng& rng);
// [L, width] encoder output -> [L] positive real durations
Tensor predict_durations(const DurationPredictor& dp, const Tensor& encoded);

// Round-half-up with a floor of 1 frame per token.
std::vector<int> round_durations(const Tensor& d_hat);

// log-mel target as a tensor [N, M]
Tensor mel_to_tensor(const dsp::MelSpectrogram& m);

}  // namespace soundstage::tts
