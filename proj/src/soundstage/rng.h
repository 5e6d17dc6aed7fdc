#pragma once

#include <cstdint>
#include <vector>

namespace soundstage {

// Counter-style splitmix64 generator. The whole state is one u64, which makes
// checkpointing and per-entry stream splitting trivial, and the output is
// identical on every platform (no libstdc++ distribution quirks).
class Rng {
 public:
  explicit Rng(uint64_t seed = 0);

  // Derives an independent stream from (seed, stream_index). Used to split
  // per-entry generators so parallel and serial corpus runs agree.
  static Rng from_stream(uint64_t seed, uint64_t stream);

  uint64_t next_u64();
  // [0, 1)
  double uniform();
  double uniform(double lo, double hi);
  // [0, n)
  int uniform_int(int n);
  // standard normal via Box-Muller (two uniforms per draw, no cached state)
  double normal();
  void fill_normal(std::vector<double>& out);

  uint64_t state() const { return state_; }
  void set_state(uint64_t s) { state_ = s; }

 private:
  uint64_t state_;
};

}  // namespace soundstage
