#pragma once

#include <string>
#include <vector>

#include "soundstage/diffusion.h"
#include "soundstage/dsp.h"
#include "soundstage/nn.h"
#include "soundstage/tensor.h"

namespace soundstage::embed {

enum class Modality { kAudio, kText, kImage, kTranslated };

struct CondEmbedding {
  Tensor v;  // [E], unit L2 norm for provider outputs
  Modality modality = Modality::kAudio;
};

// Deterministic stand-in featurizers. The seed fixes the random projection,
// so outputs are bit-identical across calls and processes.
struct ProviderConfig {
  int dim = 32;
  uint64_t seed = 0x5eed;
};

// Per-band log-mel mean/std statistics under a fixed projection.
CondEmbedding toy_audio_embed(const dsp::Waveform& w, const ProviderConfig& cfg = {});
// Bag-of-words hashed into dim buckets, then projected.
CondEmbedding toy_text_embed(const std::string& caption, const ProviderConfig& cfg = {});
// Named-image stand-in: the tag seeds a unit vector.
CondEmbedding toy_image_embed(const std::string& tag, const ProviderConfig& cfg = {});

struct TranslatorConfig {
  int dim = 32;     // E
  int hidden = 64;
  int blocks = 2;
  int heads = 4;
  int t_steps = 50;
  bool l1 = false;  // loss norm; L2 by default
};

// Transformer over the 4-row sequence [t embedding, z_t, y, learnable token];
// the prediction is read at the learnable-token position.
struct Translator {
  TranslatorConfig cfg;
  Linear zp, yp;    // E -> hidden
  Tensor token;     // [hidden]
  std::vector<AttnBlock> blocks;
  Linear head;      // hidden -> E
};

Translator make_translator(ParamStore& ps, const std::string& prefix,
                           const TranslatorConfig& cfg, Rng& rng);

// x0 prediction of the clean audio embedding z0.
Tensor i2a_predict(const Translator& tr, int t, const Tensor& z_t, const Tensor& y);

// ||z0 - pred|| (L2, or L1 when l1 is set)
Tensor i2a_loss_from_pred(const Tensor& z0, const Tensor& pred, bool l1 = false);
Tensor i2a_loss(const Translator& tr, const Tensor& z0, const Tensor& y, int t,
                const Tensor& z_t);

// x0-prediction ancestral resampling from pure noise; steps=1 is a single
// forward prediction.
CondEmbedding translate_image(const Translator& tr, const Tensor& y,
                              const diffusion::NoiseSchedule& s, int steps, Rng& rng);

}  // namespace soundstage::embed
