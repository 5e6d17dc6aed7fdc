#include "soundstage/dsp.h"

#include <Eigen/Dense>
#include <algorithm>

#include "soundstage/common.h"

namespace soundstage::dsp {

namespace {

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

std::vector<double> hann(int n) {
  std::vector<double> w(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    w[static_cast<size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / n);
  return w;
}

// Magnitude spectra of all frames: [N][fft/2+1].
std::vector<std::vector<double>> stft_mag(const std::vector<double>& x, const StftConfig& cfg) {
  int win = cfg.window_length, hop = cfg.hop_length, nfft = cfg.fft_size;
  int n_frames = 1 + static_cast<int>((x.size() - static_cast<size_t>(win)) / static_cast<size_t>(hop));
  int bins = nfft / 2 + 1;
  auto w = hann(win);
  std::vector<std::vector<double>> out(static_cast<size_t>(n_frames));
  std::vector<std::complex<double>> buf(static_cast<size_t>(nfft));
  for (int f = 0; f < n_frames; ++f) {
    std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
    size_t start = static_cast<size_t>(f) * hop;
    for (int i = 0; i < win; ++i)
      buf[static_cast<size_t>(i)] = x[start + static_cast<size_t>(i)] * w[static_cast<size_t>(i)];
    fft_inplace(buf, false);
    auto& mags = out[static_cast<size_t>(f)];
    mags.resize(static_cast<size_t>(bins));
    for (int k = 0; k < bins; ++k) mags[static_cast<size_t>(k)] = std::abs(buf[static_cast<size_t>(k)]);
  }
  return out;
}

}  // namespace

void StftConfig::validate(int sample_rate_hz) const {
  check(sample_rate_hz > 0, "stft: sample rate must be positive");
  check(fft_size > 0 && hop_length > 0 && window_length > 0, "stft: sizes must be positive");
  check(is_pow2(fft_size), "stft: fft_size must be a power of two");
  check(hop_length <= window_length, "stft: hop_length must not exceed window_length");
  check(window_length <= fft_size, "stft: window_length must not exceed fft_size");
  check(mel_bins >= 1, "stft: mel_bins must be positive");
  check(fmin_hz >= 0.0 && fmin_hz < fmax_hz, "stft: need 0 <= fmin < fmax");
  check(fmax_hz <= sample_rate_hz / 2.0, "stft: fmax above Nyquist");
}

double rms(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return std::sqrt(acc / static_cast<double>(x.size()));
}

void fft_inplace(std::vector<std::complex<double>>& a, bool inverse) {
  size_t n = a.size();
  check(is_pow2(static_cast<int>(n)), "fft: size must be a power of two");
  // bit-reversal permutation
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = 2.0 * M_PI / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t j = 0; j < len / 2; ++j) {
        std::complex<double> u = a[i + j];
        std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse)
    for (auto& v : a) v /= static_cast<double>(n);
}

std::vector<double> mel_band_centers_hz(const StftConfig& cfg) {
  double lo = hz_to_mel(cfg.fmin_hz), hi = hz_to_mel(cfg.fmax_hz);
  std::vector<double> centers(static_cast<size_t>(cfg.mel_bins));
  for (int m = 1; m <= cfg.mel_bins; ++m)
    centers[static_cast<size_t>(m - 1)] =
        mel_to_hz(lo + (hi - lo) * m / (cfg.mel_bins + 1));
  return centers;
}

std::vector<std::vector<double>> mel_filterbank(const StftConfig& cfg, int sample_rate_hz) {
  cfg.validate(sample_rate_hz);
  int bins = cfg.fft_size / 2 + 1;
  double lo = hz_to_mel(cfg.fmin_hz), hi = hz_to_mel(cfg.fmax_hz);
  // M + 2 edge points, filters are triangles between consecutive triples
  std::vector<double> edges(static_cast<size_t>(cfg.mel_bins) + 2);
  for (int i = 0; i < cfg.mel_bins + 2; ++i)
    edges[static_cast<size_t>(i)] = mel_to_hz(lo + (hi - lo) * i / (cfg.mel_bins + 1));
  std::vector<std::vector<double>> fb(static_cast<size_t>(cfg.mel_bins),
                                      std::vector<double>(static_cast<size_t>(bins), 0.0));
  for (int m = 0; m < cfg.mel_bins; ++m) {
    double fl = edges[static_cast<size_t>(m)], fc = edges[static_cast<size_t>(m) + 1],
           fr = edges[static_cast<size_t>(m) + 2];
    for (int k = 0; k < bins; ++k) {
      double f = static_cast<double>(k) * sample_rate_hz / cfg.fft_size;
      double v = 0.0;
      if (f > fl && f < fc)
        v = (f - fl) / (fc - fl);
      else if (f >= fc && f < fr)
        v = (fr - f) / (fr - fc);
      fb[static_cast<size_t>(m)][static_cast<size_t>(k)] = v;
    }
  }
  return fb;
}

MelSpectrogram mel_spectrogram(const Waveform& w, const StftConfig& cfg) {
  cfg.validate(w.sample_rate_hz);
  check(!w.samples.empty(), "mel: empty waveform");
  for (double v : w.samples) check(std::isfinite(v), "mel: non-finite sample");
  check(static_cast<int>(w.samples.size()) >= cfg.window_length,
        "mel: waveform shorter than the analysis window");
  auto fb = mel_filterbank(cfg, w.sample_rate_hz);
  auto mags = stft_mag(w.samples, cfg);
  MelSpectrogram out;
  out.frames = static_cast<int>(mags.size());
  out.mel_bins = cfg.mel_bins;
  out.values.resize(static_cast<size_t>(out.frames) * out.mel_bins);
  double floor_amp = std::exp(cfg.log_floor);
  for (int f = 0; f < out.frames; ++f)
    for (int m = 0; m < cfg.mel_bins; ++m) {
      double e = 0.0;
      const auto& row = fb[static_cast<size_t>(m)];
      const auto& mag = mags[static_cast<size_t>(f)];
      for (size_t k = 0; k < row.size(); ++k) e += row[k] * mag[k];
      out.at(f, m) = std::log(std::max(e, floor_amp));
    }
  return out;
}

Waveform griffin_lim(const MelSpectrogram& m, const StftConfig& cfg, int sample_rate_hz,
                     int iters, std::vector<double>* errors) {
  cfg.validate(sample_rate_hz);
  check(iters >= 1, "griffin_lim: iters must be >= 1");
  check(m.mel_bins == cfg.mel_bins, "griffin_lim: mel_bins mismatch");
  check(m.frames >= 1, "griffin_lim: empty mel");
  int bins = cfg.fft_size / 2 + 1;
  int win = cfg.window_length, hop = cfg.hop_length, nfft = cfg.fft_size;
  int n_frames = m.frames;
  int out_len = win + (n_frames - 1) * hop;

  // least-norm linear magnitude from the mel magnitudes: s = FB^T (FB FB^T)^-1 e
  auto fbv = mel_filterbank(cfg, sample_rate_hz);
  Eigen::MatrixXd FB(cfg.mel_bins, bins);
  for (int i = 0; i < cfg.mel_bins; ++i)
    for (int k = 0; k < bins; ++k) FB(i, k) = fbv[static_cast<size_t>(i)][static_cast<size_t>(k)];
  Eigen::MatrixXd gram = FB * FB.transpose();
  gram.diagonal().array() += 1e-10;
  Eigen::MatrixXd pinv = FB.transpose() * gram.ldlt().solve(
                             Eigen::MatrixXd::Identity(cfg.mel_bins, cfg.mel_bins));

  // target magnitudes per frame
  std::vector<std::vector<double>> target(static_cast<size_t>(n_frames));
  double target_norm2 = 0.0;
  for (int f = 0; f < n_frames; ++f) {
    Eigen::VectorXd e(cfg.mel_bins);
    for (int i = 0; i < cfg.mel_bins; ++i) e(i) = std::exp(m.at(f, i));
    Eigen::VectorXd s = pinv * e;
    auto& tf = target[static_cast<size_t>(f)];
    tf.resize(static_cast<size_t>(bins));
    for (int k = 0; k < bins; ++k) {
      tf[static_cast<size_t>(k)] = std::max(s(k), 0.0);
      target_norm2 += tf[static_cast<size_t>(k)] * tf[static_cast<size_t>(k)];
    }
  }
  double target_norm = std::sqrt(std::max(target_norm2, 1e-300));

  auto w = hann(win);
  // deterministic linear-phase init: centers each frame's energy under the
  // synthesis window peak (zero phase would park it at the edges where the
  // Hann window vanishes); iterations then re-estimate phase from the signal
  std::vector<std::vector<std::complex<double>>> spec(static_cast<size_t>(n_frames));
  for (int f = 0; f < n_frames; ++f) {
    spec[static_cast<size_t>(f)].assign(static_cast<size_t>(bins), {0.0, 0.0});
    for (int k = 0; k < bins; ++k) {
      double ph = -2.0 * M_PI * k * (win / 2.0) / nfft;
      spec[static_cast<size_t>(f)][static_cast<size_t>(k)] =
          std::polar(target[static_cast<size_t>(f)][static_cast<size_t>(k)], ph);
    }
  }

  std::vector<double> x(static_cast<size_t>(out_len), 0.0);
  std::vector<std::complex<double>> buf(static_cast<size_t>(nfft));
  std::vector<double> wsum(static_cast<size_t>(out_len), 0.0);
  for (int f = 0; f < n_frames; ++f)
    for (int i = 0; i < win; ++i)
      wsum[static_cast<size_t>(f) * hop + static_cast<size_t>(i)] +=
          w[static_cast<size_t>(i)] * w[static_cast<size_t>(i)];
  // bound the overlap-add gain: raw wsum tends to zero at the clip edges and
  // dividing by it there turns windowed near-zeros into huge spikes
  double wsum_floor = 1e-2 * *std::max_element(wsum.begin(), wsum.end());
  for (double& v : wsum) v = std::max(v, wsum_floor);

  auto istft = [&] {
    std::fill(x.begin(), x.end(), 0.0);
    for (int f = 0; f < n_frames; ++f) {
      // rebuild the full hermitian spectrum
      for (int k = 0; k < bins; ++k) buf[static_cast<size_t>(k)] = spec[static_cast<size_t>(f)][static_cast<size_t>(k)];
      for (int k = bins; k < nfft; ++k)
        buf[static_cast<size_t>(k)] = std::conj(spec[static_cast<size_t>(f)][static_cast<size_t>(nfft - k)]);
      fft_inplace(buf, true);
      for (int i = 0; i < win; ++i)
        x[static_cast<size_t>(f) * hop + static_cast<size_t>(i)] +=
            buf[static_cast<size_t>(i)].real() * w[static_cast<size_t>(i)];
    }
    for (size_t i = 0; i < x.size(); ++i) x[i] /= wsum[i];
  };

  for (int it = 0; it < iters; ++it) {
    istft();
    auto mags = stft_mag(x, cfg);
    double err2 = 0.0;
    for (int f = 0; f < n_frames; ++f) {
      // re-analysis gives the phase; magnitude snaps back to the target
      std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
      size_t start = static_cast<size_t>(f) * hop;
      for (int i = 0; i < win; ++i)
        buf[static_cast<size_t>(i)] = x[start + static_cast<size_t>(i)] * w[static_cast<size_t>(i)];
      fft_inplace(buf, false);
      for (int k = 0; k < bins; ++k) {
        double mag = mags[static_cast<size_t>(f)][static_cast<size_t>(k)];
        double tgt = target[static_cast<size_t>(f)][static_cast<size_t>(k)];
        double d = mag - tgt;
        err2 += d * d;
        std::complex<double> c = buf[static_cast<size_t>(k)];
        spec[static_cast<size_t>(f)][static_cast<size_t>(k)] =
            mag > 1e-300 ? c * (tgt / mag) : std::complex<double>(tgt, 0.0);
      }
    }
    if (errors) errors->push_back(std::sqrt(err2) / target_norm);
  }
  istft();

  Waveform out;
  out.sample_rate_hz = sample_rate_hz;
  out.samples = std::move(x);
  double peak = 0.0;
  for (double v : out.samples) peak = std::max(peak, std::abs(v));
  if (peak > 1.0)
    for (double& v : out.samples) v /= peak;
  return out;
}

Waveform mix_at_snr(const Waveform& clean, const Waveform& noise, double snr_db, MixInfo* info) {
  check(clean.sample_rate_hz == noise.sample_rate_hz, "mix: sample-rate mismatch");
  check(!clean.samples.empty() && !noise.samples.empty(), "mix: empty input");
  double rc = rms(clean.samples);
  check(rc > 0.0, "mix: silent clean signal, SNR undefined");

  // tile or trim the noise to the clean length before measuring its level
  std::vector<double> n(clean.samples.size());
  for (size_t i = 0; i < n.size(); ++i) n[i] = noise.samples[i % noise.samples.size()];
  double rn = rms(n);
  check(rn > 0.0, "mix: silent noise signal, SNR undefined");

  double g = rc / (rn * std::pow(10.0, snr_db / 20.0));
  Waveform out;
  out.sample_rate_hz = clean.sample_rate_hz;
  out.samples.resize(n.size());
  double peak = 0.0;
  for (size_t i = 0; i < n.size(); ++i) {
    out.samples[i] = clean.samples[i] + g * n[i];
    peak = std::max(peak, std::abs(out.samples[i]));
  }
  double rescale = 1.0;
  if (peak > 1.0) {
    rescale = 1.0 / peak;
    for (double& v : out.samples) v *= rescale;
  }
  if (info) {
    info->noise_gain = g;
    info->rescale = rescale;
  }
  return out;
}

Waveform apply_rir(const Waveform& w, const Waveform& rir) {
  check(w.sample_rate_hz == rir.sample_rate_hz, "rir: sample-rate mismatch");
  check(!rir.samples.empty(), "rir: empty impulse response");
  check(!w.samples.empty(), "rir: empty waveform");
  size_t n = w.samples.size(), k = rir.samples.size();
  Waveform out;
  out.sample_rate_hz = w.sample_rate_hz;
  out.samples.assign(n, 0.0);
  for (size_t t = 0; t < n; ++t) {
    double acc = 0.0;
    size_t kmax = std::min(k - 1, t);
    for (size_t j = 0; j <= kmax; ++j) acc += rir.samples[j] * w.samples[t - j];
    out.samples[t] = acc;
  }
  double target = rms(w.samples), got = rms(out.samples);
  if (got > 0.0) {
    double s = target / got;
    for (double& v : out.samples) v *= s;
  }
  return out;
}

}  // namespace soundstage::dsp
