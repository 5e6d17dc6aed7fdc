#pragma once

#include <cmath>
#include <string>

#include "soundstage/nn.h"
#include "soundstage/tensor.h"

namespace soundstage::latent {

// Mel <-> latent codec: space-to-depth by 4 plus learned 1x1 channel
// projections. Encoding is bias-free so the whole codec stays exactly linear
// in the mel; the decoder carries the single bias.
inline constexpr int kFactor = 4;
inline constexpr int kDepthChannels = kFactor * kFactor;  // 1 input channel
inline constexpr int kLatentChannels = 8;

// Trailing rows/bins appended to reach divisibility by the factor.
struct MelPadding {
  int frames = 0;
  int bins = 0;
};

struct Codec {
  Tensor enc_w;  // [kLatentChannels, kDepthChannels]
  Tensor dec_w;  // [kDepthChannels, kLatentChannels]
  Tensor dec_b;  // [kDepthChannels]
};

Codec make_codec(ParamStore& ps, const std::string& prefix, Rng& rng);

inline double default_pad_value() { return std::log(1e-5); }

// [N, M] log-mel -> [8, ceil(N/4), ceil(M/4)]. Depth layout for one input
// channel: depth channel fy*4+fx holds mel[4*by+fy][4*bx+fx].
Tensor vae_encode(const Tensor& mel, const Codec& p, MelPadding* pad = nullptr,
                  double pad_value = default_pad_value());
// Inverse projection + depth-to-space, dropping recorded padding.
Tensor vae_decode(const Tensor& z, const Codec& p, const MelPadding& pad = {});

// Two strided 3x3 convolutions compressing upsampled text features [N, M]
// into the same geometry vae_encode produces.
struct LatentMapper {
  Tensor w1, b1;  // [hidden, 1, 3, 3]
  Tensor w2, b2;  // [kLatentChannels, hidden, 3, 3]
};

LatentMapper make_latent_mapper(ParamStore& ps, const std::string& prefix, Rng& rng,
                                int hidden = 32);
Tensor latent_map(const Tensor& mu_up, const LatentMapper& mp, MelPadding* pad = nullptr,
                  double pad_value = default_pad_value());

}  // namespace soundstage::latent
