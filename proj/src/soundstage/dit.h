#pragma once

#include <string>
#include <vector>

#include "soundstage/nn.h"
#include "soundstage/tensor.h"

namespace soundstage::dit {

// How the content latent reaches the backbone: channel-concatenated with the
// noisy latent before patchify, or as cross-attention memory tokens.
enum class TextMode { kConcat, kCrossAttention };

struct DitConfig {
  int num_blocks = 2;
  int hidden_dim = 64;
  int num_heads = 4;
  int patch_size = 2;
  int cond_dim = 32;        // E
  int latent_channels = 8;
  int content_channels = 8;
  int speaker_dim = 0;      // 0 disables the speaker pathway
  TextMode text_mode = TextMode::kConcat;
  bool env_cross_attention = true;  // adaLN env conditioning is always on
  void validate() const;
};

// c_env: zero or more E-dim vectors (empty = null condition, a learned
// embedding). c_cont: [C,H,W] latent or undefined for the null fill.
struct ConditionPair {
  std::vector<Tensor> env;
  Tensor cont;
  Tensor speaker;  // optional [S]
};

struct DitBlock {
  Linear ada;              // hidden -> 6*hidden, zero-init (adaLN-Zero)
  Linear wq, wk, wv, wo;   // self-attention
  Linear cq, ck, cv, co;   // cross-attention, co zero-init
  Linear fc1, fc2;         // feed-forward
};

struct Dit {
  DitConfig cfg;
  Linear in_proj;      // C_in*p^2 -> hidden
  Linear t_mlp1, t_mlp2;
  Linear env_proj;     // E -> hidden, adaLN pathway (mean-pooled vectors)
  Linear ca_env_proj;  // E -> hidden, cross-attention memory rows
  Linear cont_proj;    // content patch dim -> hidden (kCrossAttention only)
  Linear spk_proj;     // S -> hidden (optional)
  std::vector<DitBlock> blocks;
  Linear final_ada;    // hidden -> 2*hidden, zero-init
  Linear out_proj;     // hidden -> latent_channels*p^2, small init
  Tensor null_env;     // [E]
  Tensor null_cont;    // [content_channels], expanded per call
};

Dit make_dit(ParamStore& ps, const std::string& prefix, const DitConfig& cfg, Rng& rng);

// Learned null embeddings, expanded to match the working latent geometry.
struct NullConditions {
  Tensor env;   // [E]
  Tensor cont;  // [C,H,W]
};
NullConditions null_conditions(const Dit& model, int h, int w);

struct PatchInfo {
  int channels = 0;
  int h = 0, w = 0;          // padded geometry
  int pad_h = 0, pad_w = 0;  // rows/cols appended to reach divisibility
};

// [C,H,W] -> [(H'/p)(W'/p), C*p^2] tokens, zero-padding H,W up to multiples
// of p. Pure rearrangement; positional encodings are added by dit_forward.
Tensor patchify(const Tensor& z, int p, PatchInfo* info = nullptr);
Tensor unpatchify(const Tensor& tokens, int p, const PatchInfo& info);

// Predicted noise, same shape as z_t. Null conditions substitute learned
// embeddings; c_cont must match z_t's geometry when present.
Tensor dit_forward(const Dit& model, const Tensor& z_t, int t, const ConditionPair& cond);

}  // namespace soundstage::dit
