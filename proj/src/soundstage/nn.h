#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "soundstage/rng.h"
#include "soundstage/tensor.h"

namespace soundstage {

// Named parameter registry. Names use dotted prefixes ("dit.block0.attn.wq")
// so whole submodels can be frozen or checkpointed by prefix. Iteration is
// always in sorted name order, which keeps optimizer updates and serialized
// files deterministic.
class ParamStore {
 public:
  Tensor create(const std::string& name, const Shape& shape, double fill = 0.0);
  Tensor create_randn(const std::string& name, const Shape& shape, double stddev, Rng& rng);

  Tensor get(const std::string& name) const;
  bool has(const std::string& name) const;
  std::vector<std::string> names() const;
  size_t size() const { return params_.size(); }

  void zero_grads();

  // Freezing by prefix: frozen params keep requires_grad off so the graph
  // skips them entirely, and the optimizer leaves their state untouched.
  void set_trainable_prefix(const std::string& prefix, bool trainable);
  void set_all_trainable(bool trainable);
  bool trainable(const std::string& name) const;

  std::map<std::string, Tensor>& raw() { return params_; }
  const std::map<std::string, Tensor>& raw() const { return params_; }

 private:
  std::map<std::string, Tensor> params_;
  std::map<std::string, bool> trainable_;
};

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled weight decay Adam. Moments and step counts are tracked per
// parameter name so that phase changes (freeze/unfreeze, lr change) never
// disturb bias correction for the others.
class AdamW {
 public:
  struct State {
    std::vector<double> m, v;
    int64_t t = 0;
  };

  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  void step(ParamStore& params);

  AdamWConfig& config() { return cfg_; }
  const AdamWConfig& config() const { return cfg_; }
  std::map<std::string, State>& states() { return states_; }
  const std::map<std::string, State>& states() const { return states_; }

 private:
  AdamWConfig cfg_;
  std::map<std::string, State> states_;
};

// ---- layers ----

struct Linear {
  Tensor w;  // [in, out]
  Tensor b;  // [out]; undefined => no bias
};

// Weights ~ N(0, stddev^2) with stddev = 1/sqrt(in) unless overridden; bias 0.
Linear make_linear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng,
                   bool bias = true, double stddev = -1.0);
// All-zero weights (and bias): used for gates and output projections that
// must start as identity-preserving no-ops.
Linear make_linear_zero(ParamStore& ps, const std::string& name, int in, int out,
                        bool bias = true);
Tensor linear(const Linear& l, const Tensor& x);  // [n,in] -> [n,out]

// Pre-norm transformer block: x += O(attn(LN(x))); x += MLP(LN(x)).
struct AttnBlock {
  Linear wq, wk, wv, wo;
  Linear fc1, fc2;
  int heads = 1;
};

AttnBlock make_attn_block(ParamStore& ps, const std::string& name, int dim, int heads,
                          int mlp_mult, Rng& rng);
Tensor attn_block_forward(const AttnBlock& blk, const Tensor& x);

// ---- fixed (non-learned) embeddings ----

// Half-split sin/cos layout: [sin(p*f_0..), cos(p*f_0..)], f_i = 10000^{-i/(dim/2)}.
std::vector<double> sinusoid(double pos, int dim);

Tensor timestep_embedding(int t, int dim);        // [1, dim]
Tensor positions_1d(int n, int dim);              // [n, dim]
// Row/column split: first dim/2 encodes y, second dim/2 encodes x.
Tensor positions_2d(int h, int w, int dim);       // [h*w, dim]

}  // namespace soundstage
