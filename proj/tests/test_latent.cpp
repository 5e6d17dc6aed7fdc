#include <cmath>
#include <vector>

#include "doctest.h"
#include "soundstage/common.h"
#include "soundstage/dsp.h"
#include "soundstage/latent.h"
#include "soundstage/nn.h"
#include "soundstage/rng.h"
#include "soundstage/tensor.h"
#include "test_support.h"

using namespace soundstage;
using namespace soundstage::latent;

namespace {

Tensor randn_mat(int r, int c, Rng& rng, double scale = 1.0) {
  std::vector<double> v(static_cast<size_t>(r) * c);
  for (auto& x : v) x = scale * rng.normal();
  return Tensor::from_data({r, c}, std::move(v));
}

double recon_mse(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.data().size(); ++i) {
    double d = a.data()[i] - b.data()[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.data().size());
}

}  // namespace

TEST_CASE("vae_encode shape contract") {
  ParamStore ps;
  Rng rng(2);
  auto codec = make_codec(ps, "codec", rng);
  auto mel = randn_mat(32, 16, rng);
  MelPadding pad;
  auto z = vae_encode(mel, codec, &pad);
  CHECK(z.shape() == Shape{8, 8, 4});
  CHECK(pad.frames == 0);
  CHECK(pad.bins == 0);
  // element count halves
  CHECK(z.numel() * 2 == mel.numel());
}

TEST_CASE("shape contract property across divisible-by-4 geometry") {
  ParamStore ps;
  Rng rng(4);
  auto codec = make_codec(ps, "codec", rng);
  auto mapper = make_latent_mapper(ps, "mapper", rng, 6);
  for (int n : {4, 16, 36, 64}) {
    for (int m : {4, 8, 20}) {
      auto mel = randn_mat(n, m, rng);
      auto z = vae_encode(mel, codec);
      auto zm = latent_map(mel, mapper);
      CHECK(z.shape() == Shape{8, n / 4, m / 4});
      CHECK(zm.shape() == z.shape());
      CHECK(2 * z.numel() == n * m);
    }
  }
}

TEST_CASE("identity projection exposes depth channels") {
  ParamStore ps;
  Rng rng(5);
  auto codec = make_codec(ps, "codec", rng);
  // identity on the first 8 depth channels
  std::fill(codec.enc_w.data().begin(), codec.enc_w.data().end(), 0.0);
  for (int c = 0; c < 8; ++c) codec.enc_w.data()[static_cast<size_t>(c) * 16 + c] = 1.0;
  auto mel = randn_mat(4, 4, rng);
  auto z = vae_encode(mel, codec);
  REQUIRE(z.shape() == Shape{8, 1, 1});
  // depth channel fy*4+fx holds mel[fy][fx] for the single 4x4 block
  for (int c = 0; c < 8; ++c) {
    int fy = c / 4, fx = c % 4;
    CHECK(z.data()[static_cast<size_t>(c)] == mel.data()[static_cast<size_t>(fy) * 4 + fx]);
  }
}

TEST_CASE("decode round-trips shape, with and without padding") {
  ParamStore ps;
  Rng rng(6);
  auto codec = make_codec(ps, "codec", rng);
  SUBCASE("divisible") {
    auto mel = randn_mat(8, 8, rng);
    MelPadding pad;
    auto z = vae_encode(mel, codec, &pad);
    CHECK(vae_decode(z, codec, pad).shape() == mel.shape());
  }
  SUBCASE("padded") {
    auto mel = randn_mat(5, 6, rng);
    MelPadding pad;
    auto z = vae_encode(mel, codec, &pad);
    CHECK(pad.frames == 3);
    CHECK(pad.bins == 2);
    CHECK(z.shape() == Shape{8, 2, 2});
    CHECK(vae_decode(z, codec, pad).shape() == Shape{5, 6});
  }
  SUBCASE("channel mismatch rejected") {
    auto bad = Tensor::zeros({4, 2, 2});
    CHECK_THROWS_AS(vae_decode(bad, codec), InputError);
  }
}

TEST_CASE("zero latent with zero-bias decoder gives zero mel") {
  ParamStore ps;
  Rng rng(7);
  auto codec = make_codec(ps, "codec", rng);
  auto mel = vae_decode(Tensor::zeros({8, 2, 2}), codec);
  for (double v : mel.data()) CHECK(v == 0.0);
}

TEST_CASE("codec is exactly linear in the mel") {
  ParamStore ps;
  Rng rng(8);
  auto codec = make_codec(ps, "codec", rng);
  for (double& v : codec.dec_b.data()) v = rng.normal();  // nonzero bias
  auto a = randn_mat(8, 8, rng);
  auto b = randn_mat(8, 8, rng);
  auto za = vae_encode(a, codec);
  auto zb = vae_encode(b, codec);
  auto lhs = vae_decode(add(za, zb), codec);
  auto rhs = vae_decode(vae_encode(add(a, b), codec), codec);
  for (size_t i = 0; i < lhs.data().size(); ++i)
    CHECK(std::abs(lhs.data()[i] - rhs.data()[i]) < 1e-10);
}

TEST_CASE("codec overfits a single mel to tiny reconstruction error") {
  ParamStore ps;
  Rng rng(9);
  auto codec = make_codec(ps, "codec", rng);
  auto mel = randn_mat(8, 8, rng);
  AdamWConfig cfg;
  cfg.lr = 0.02;
  cfg.weight_decay = 0.0;
  AdamW opt(cfg);
  double last = 1e9;
  for (int step = 0; step < 200; ++step) {
    ps.zero_grads();
    auto loss = mse(vae_decode(vae_encode(mel, codec), codec), mel);
    backward(loss);
    opt.step(ps);
    last = loss.item();
  }
  CHECK(last < 1e-3);
}

TEST_CASE("codec generalizes across a toy tone corpus") {
  // tones share spectral structure, so held-out reconstructions stay close
  dsp::StftConfig scfg;
  scfg.fft_size = 256;
  scfg.window_length = 256;
  scfg.hop_length = 64;
  scfg.mel_bins = 16;
  scfg.fmax_hz = 8000;
  auto tone_mel = [&](double freq) {
    dsp::Waveform w;
    w.sample_rate_hz = 16000;
    w.samples.resize(2240);
    for (size_t i = 0; i < w.samples.size(); ++i)
      w.samples[i] = 0.5 * std::sin(2.0 * M_PI * freq * static_cast<double>(i) / 16000.0);
    auto m = dsp::mel_spectrogram(w, scfg);
    return Tensor::from_data({m.frames, m.mel_bins}, m.values);
  };
  std::vector<Tensor> train, held;
  for (double f : {300.0, 600.0, 900.0, 1200.0, 1500.0, 1800.0}) train.push_back(tone_mel(f));
  for (double f : {450.0, 1050.0}) held.push_back(tone_mel(f));

  ParamStore ps;
  Rng rng(10);
  auto codec = make_codec(ps, "codec", rng);
  AdamWConfig cfg;
  cfg.lr = 0.02;
  cfg.weight_decay = 0.0;
  AdamW opt(cfg);
  for (int step = 0; step < 400; ++step) {
    ps.zero_grads();
    Tensor loss = Tensor::scalar(0.0);
    for (const auto& m : train)
      loss = add(loss, mse(vae_decode(vae_encode(m, codec), codec), m));
    backward(loss);
    opt.step(ps);
  }
  NoGradGuard ng;
  double acc = 0.0;
  for (const auto& m : held) acc += recon_mse(vae_decode(vae_encode(m, codec), codec), m);
  CHECK(acc / static_cast<double>(held.size()) < 0.05);
}

TEST_CASE("latent_map shape, linearity at zero, and sensitivity") {
  ParamStore ps;
  Rng rng(11);
  auto mapper = make_latent_mapper(ps, "mapper", rng);
  SUBCASE("shape 32x16 -> 8x8x4") {
    auto x = randn_mat(32, 16, rng);
    CHECK(latent_map(x, mapper).shape() == Shape{8, 8, 4});
  }
  SUBCASE("padding rule matches the codec") {
    auto x = randn_mat(5, 6, rng);
    MelPadding pad;
    auto z = latent_map(x, mapper, &pad);
    CHECK(pad.frames == 3);
    CHECK(pad.bins == 2);
    CHECK(z.shape() == Shape{8, 2, 2});
  }
  SUBCASE("zero input with zero biases maps to zero") {
    auto z = latent_map(Tensor::zeros({8, 8}), mapper);
    for (double v : z.data()) CHECK(v == 0.0);
  }
  SUBCASE("single-frame change moves the output") {
    auto x = randn_mat(8, 8, rng);
    auto z1 = latent_map(x, mapper);
    x.data()[3] += 1.0;
    auto z2 = latent_map(x, mapper);
    double d = 0.0;
    for (size_t i = 0; i < z1.data().size(); ++i) d += std::abs(z1.data()[i] - z2.data()[i]);
    CHECK(d > 1e-8);
  }
}

TEST_CASE("gradcheck: codec and mapper") {
  ParamStore ps;
  Rng rng(12);
  auto codec = make_codec(ps, "codec", rng);
  auto mapper = make_latent_mapper(ps, "mapper", rng, 3);
  auto mel = randn_mat(5, 6, rng);  // exercises pad/crop in the graph
  auto target = randn_mat(5, 6, rng);
  tsup::gradcheck({codec.enc_w, codec.dec_w, codec.dec_b, mel}, [&] {
    MelPadding pad;
    auto z = vae_encode(mel, codec, &pad);
    return mse(vae_decode(z, codec, pad), target);
  });
  tsup::gradcheck({mapper.w1, mapper.b1, mapper.w2, mapper.b2}, [&] {
    return mean(mul(latent_map(mel, mapper), latent_map(mel, mapper)));
  });
}
