#include "soundstage/latent.h"

#include <cmath>

#include "soundstage/common.h"

namespace soundstage::latent {

Codec make_codec(ParamStore& ps, const std::string& prefix, Rng& rng) {
  Codec c;
  double s = 1.0 / std::sqrt(static_cast<double>(kDepthChannels));
  c.enc_w = ps.create_randn(prefix + ".enc.w", {kLatentChannels, kDepthChannels}, s, rng);
  c.dec_w = ps.create_randn(prefix + ".dec.w", {kDepthChannels, kLatentChannels},
                            1.0 / std::sqrt(static_cast<double>(kLatentChannels)), rng);
  c.dec_b = ps.create(prefix + ".dec.b", {kDepthChannels});
  return c;
}

namespace {

Tensor pad_to_factor(const Tensor& mel, MelPadding* pad, double pad_value) {
  check(mel.rank() == 2, "codec: rank-2 mel required");
  int n = mel.dim(0), m = mel.dim(1);
  int pn = (kFactor - n % kFactor) % kFactor;
  int pm = (kFactor - m % kFactor) % kFactor;
  if (pad) *pad = MelPadding{pn, pm};
  return (pn || pm) ? pad2d(mel, pn, pm, pad_value) : mel;
}

}  // namespace

Tensor vae_encode(const Tensor& mel, const Codec& p, MelPadding* pad, double pad_value) {
  Tensor x = pad_to_factor(mel, pad, pad_value);
  int n = x.dim(0), m = x.dim(1);
  Tensor d = space_to_depth(reshape(x, {1, n, m}), kFactor);  // [16, n/4, m/4]
  int h = d.dim(1), w = d.dim(2);
  Tensor z = matmul(p.enc_w, reshape(d, {kDepthChannels, h * w}));
  return reshape(z, {kLatentChannels, h, w});
}

Tensor vae_decode(const Tensor& z, const Codec& p, const MelPadding& pad) {
  check(z.rank() == 3, "vae_decode: rank-3 latent required");
  check(z.dim(0) == kLatentChannels, "vae_decode: latent channel mismatch");
  int h = z.dim(1), w = z.dim(2);
  Tensor d = matmul(p.dec_w, reshape(z, {kLatentChannels, h * w}));
  d = add(reshape(d, {kDepthChannels, h, w}), expand_channels(p.dec_b, h, w));
  Tensor mel = reshape(depth_to_space(d, kFactor), {h * kFactor, w * kFactor});
  if (pad.frames || pad.bins)
    mel = crop2d(mel, h * kFactor - pad.frames, w * kFactor - pad.bins);
  return mel;
}

LatentMapper make_latent_mapper(ParamStore& ps, const std::string& prefix, Rng& rng,
                                int hidden) {
  LatentMapper mp;
  mp.w1 = ps.create_randn(prefix + ".conv1.w", {hidden, 1, 3, 3}, 1.0 / 3.0, rng);
  mp.b1 = ps.create(prefix + ".conv1.b", {hidden});
  mp.w2 = ps.create_randn(prefix + ".conv2.w", {kLatentChannels, hidden, 3, 3},
                          1.0 / (3.0 * std::sqrt(static_cast<double>(hidden))), rng);
  mp.b2 = ps.create(prefix + ".conv2.b", {kLatentChannels});
  return mp;
}

Tensor latent_map(const Tensor& mu_up, const LatentMapper& mp, MelPadding* pad,
                  double pad_value) {
  Tensor x = pad_to_factor(mu_up, pad, pad_value);
  int n = x.dim(0), m = x.dim(1);
  Tensor h = gelu(conv2d(reshape(x, {1, n, m}), mp.w1, mp.b1, 2, 1));
  return conv2d(h, mp.w2, mp.b2, 2, 1);
}

}  // namespace soundstage::latent
