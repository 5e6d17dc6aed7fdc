#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "soundstage/nn.h"
#include "soundstage/tensor.h"

namespace soundstage::io {

// Binary tensor container. Layout, all little-endian:
//   magic "VDT1" | u8 dtype (1 = f32, 2 = f64) | u8 rank | rank x u32 dims |
//   row-major payload (4 or 8 bytes per element)
// f32 is the interchange dtype for embedding files; checkpoints use f64 so
// training state survives a save/load round trip bit-exactly.
constexpr int kDtypeF32 = 1;
constexpr int kDtypeF64 = 2;

struct TensorData {
  Shape shape;
  std::vector<double> data;
};

void write_tensor_block(std::ostream& os, const Shape& shape,
                        const std::vector<double>& data, int dtype);
TensorData read_tensor_block(std::istream& is);

void write_tensor_file(const std::string& path, const Shape& shape,
                       const std::vector<double>& data, int dtype = kDtypeF32);
TensorData read_tensor_file(const std::string& path);

// Sidecar index for an [n, E] embedding file: one "<id> <row>" line per row.
void write_embedding_index(const std::string& path, const std::vector<std::string>& ids);
std::map<std::string, int> read_embedding_index(const std::string& path);

// Flat key/value text config: one "key = value" per line, '#' comments.
// Values keep their raw text; typed getters parse on demand.
class Config {
 public:
  static Config parse_string(const std::string& text);
  static Config parse_file(const std::string& path);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& def) const;
  int get_int(const std::string& key, int def) const;
  double get_double(const std::string& key, double def) const;
  bool get_bool(const std::string& key, bool def) const;
  uint64_t get_u64(const std::string& key, uint64_t def) const;

  void set(const std::string& key, const std::string& value);
  // Canonical text form: sorted "key = value" lines. Parsing it back gives
  // an equal config, so embedded copies are stable.
  std::string serialize() const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

// Everything a deterministic training run needs to continue: parameters,
// optimizer moments with per-parameter step counts, the RNG counter, and the
// config it was launched with. Parameters are loadable subset-wise.
struct Checkpoint {
  uint32_t version = 1;
  std::string config_text;
  int64_t step = 0;
  int32_t phase = 0;
  uint64_t rng_state = 0;

  std::map<std::string, TensorData> params;

  struct Moments {
    std::vector<double> m, v;
    int64_t t = 0;
  };
  std::map<std::string, Moments> opt;
};

void write_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint read_checkpoint(const std::string& path);

// ParamStore and optimizer bridges. load_params copies every checkpoint
// tensor whose name starts with `prefix` into an existing parameter of the
// same name and returns how many were copied; missing names are skipped,
// shape mismatches throw.
void store_params(const ParamStore& ps, Checkpoint& c);
int load_params(const Checkpoint& c, ParamStore& ps, const std::string& prefix = "");
void store_optimizer(const AdamW& opt, Checkpoint& c);
void load_optimizer(const Checkpoint& c, AdamW& opt);

}  // namespace soundstage::io
