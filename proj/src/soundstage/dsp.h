#pragma once

#include <cmath>
#include <complex>
#include <vector>

namespace soundstage::dsp {

struct Waveform {
  std::vector<double> samples;  // amplitudes in [-1, 1]
  int sample_rate_hz = 16000;

  double duration_sec() const {
    return static_cast<double>(samples.size()) / sample_rate_hz;
  }
};

struct StftConfig {
  int fft_size = 1024;
  int hop_length = 256;
  int window_length = 1024;
  int mel_bins = 80;
  double fmin_hz = 0.0;
  double fmax_hz = 8000.0;
  double log_floor = std::log(1e-5);

  // Throws InputError on any violated constraint. fft_size must be a power
  // of two (the FFT here is radix-2 only).
  void validate(int sample_rate_hz) const;
};

struct MelSpectrogram {
  int frames = 0;    // N
  int mel_bins = 0;  // M
  std::vector<double> values;  // N x M row-major, log-magnitude, floored

  double& at(int n, int m) { return values[static_cast<size_t>(n) * mel_bins + m]; }
  double at(int n, int m) const { return values[static_cast<size_t>(n) * mel_bins + m]; }
};

double rms(const std::vector<double>& x);

// In-place radix-2 complex FFT; size must be a power of two. The inverse
// includes the 1/n factor.
void fft_inplace(std::vector<std::complex<double>>& a, bool inverse);

// Triangular HTK-mel filterbank, rows [mel_bins] x cols [fft_size/2 + 1].
std::vector<std::vector<double>> mel_filterbank(const StftConfig& cfg, int sample_rate_hz);
// Center frequency (Hz) of each triangular filter.
std::vector<double> mel_band_centers_hz(const StftConfig& cfg);

// Hann-window STFT magnitudes through the mel filterbank, log with floor.
// Frame count N = 1 + floor((len - window_length) / hop_length); no centering.
MelSpectrogram mel_spectrogram(const Waveform& w, const StftConfig& cfg);

// Inversion path standing in for a neural vocoder: mel -> linear magnitude
// via the filterbank's least-norm pseudo-inverse, then Griffin-Lim phase
// recovery starting from zero phase (fully deterministic). If `errors` is
// given it receives the spectral-convergence error after each iteration.
Waveform griffin_lim(const MelSpectrogram& m, const StftConfig& cfg, int sample_rate_hz,
                     int iters, std::vector<double>* errors = nullptr);

struct MixInfo {
  double noise_gain = 0.0;  // g applied to the tiled noise
  double rescale = 1.0;     // whole-mix factor, 1 unless peak would clip
};

// clean + g * noise with g = rms(clean) / (rms(noise) * 10^(snr_db/20)),
// noise tiled or trimmed to clean's length first. If the mix would leave
// [-1, 1] the whole mix is rescaled (never clipped), preserving the SNR.
Waveform mix_at_snr(const Waveform& clean, const Waveform& noise, double snr_db,
                    MixInfo* info = nullptr);

// Full convolution truncated to len(w), then energy-normalized so the output
// RMS equals the input RMS.
Waveform apply_rir(const Waveform& w, const Waveform& rir);

}  // namespace soundstage::dsp
