#include "soundstage/rng.h"

#include <cmath>

namespace soundstage {

namespace {

constexpr uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

uint64_t mix64(uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ULL;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return z;
}

}  // namespace

Rng::Rng(uint64_t seed) : state_(mix64(seed + kGamma)) {}

Rng Rng::from_stream(uint64_t seed, uint64_t stream) {
  Rng r(0);
  r.state_ = mix64(mix64(seed + kGamma) ^ (stream * 0xD1B54A32D192ED03ULL + kGamma));
  return r;
}

uint64_t Rng::next_u64() {
  state_ += kGamma;
  return mix64(state_);
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

int Rng::uniform_int(int n) {
  // n is small everywhere we use this; modulo bias is negligible at 2^64.
  return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
}

double Rng::normal() {
  double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

void Rng::fill_normal(std::vector<double>& out) {
  for (double& v : out) v = normal();
}

}  // namespace soundstage
