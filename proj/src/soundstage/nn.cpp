#include "soundstage/nn.h"

#include <cmath>

#include "soundstage/common.h"

namespace soundstage {

Tensor ParamStore::create(const std::string& name, const Shape& shape, double fill) {
  check(!params_.count(name), "ParamStore: duplicate parameter " + name);
  Tensor t = fill == 0.0 ? Tensor::zeros(shape) : Tensor::full(shape, fill);
  t.set_requires_grad(true);
  params_.emplace(name, t);
  trainable_[name] = true;
  return t;
}

Tensor ParamStore::create_randn(const std::string& name, const Shape& shape,
                                double stddev, Rng& rng) {
  Tensor t = create(name, shape);
  for (double& v : t.data()) v = rng.normal() * stddev;
  return t;
}

Tensor ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  check(it != params_.end(), "ParamStore: unknown parameter " + name);
  return it->second;
}

bool ParamStore::has(const std::string& name) const { return params_.count(name) > 0; }

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [k, v] : params_) out.push_back(k);
  return out;
}

void ParamStore::zero_grads() {
  for (auto& [k, v] : params_) v.zero_grad();
}

void ParamStore::set_trainable_prefix(const std::string& prefix, bool trainable) {
  for (auto& [k, v] : params_) {
    if (k.rfind(prefix, 0) == 0) {
      trainable_[k] = trainable;
      v.set_requires_grad(trainable);
    }
  }
}

void ParamStore::set_all_trainable(bool trainable) { set_trainable_prefix("", trainable); }

bool ParamStore::trainable(const std::string& name) const {
  auto it = trainable_.find(name);
  check(it != trainable_.end(), "ParamStore: unknown parameter " + name);
  return it->second;
}

void AdamW::step(ParamStore& params) {
  for (auto& [name, p] : params.raw()) {
    if (!params.trainable(name) || !p.has_grad()) continue;
    State& s = states_[name];
    if (s.m.empty()) {
      s.m.assign(p.numel(), 0.0);
      s.v.assign(p.numel(), 0.0);
    }
    s.t += 1;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t));
    const auto& g = p.grad();
    auto& w = p.data();
    for (size_t i = 0; i < w.size(); ++i) {
      s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g[i];
      s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      double mhat = s.m[i] / bc1;
      double vhat = s.v[i] / bc2;
      w[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[i]);
    }
  }
}

Linear make_linear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng,
                   bool bias, double stddev) {
  check(in >= 1 && out >= 1, "make_linear: bad dims for " + name);
  if (stddev < 0.0) stddev = 1.0 / std::sqrt(static_cast<double>(in));
  Linear l;
  l.w = ps.create_randn(name + ".w", {in, out}, stddev, rng);
  if (bias) l.b = ps.create(name + ".b", {out});
  return l;
}

Linear make_linear_zero(ParamStore& ps, const std::string& name, int in, int out, bool bias) {
  Linear l;
  l.w = ps.create(name + ".w", {in, out});
  if (bias) l.b = ps.create(name + ".b", {out});
  return l;
}

Tensor linear(const Linear& l, const Tensor& x) {
  Tensor y = matmul(x, l.w);
  if (l.b.defined()) y = add_rows(y, l.b);
  return y;
}

AttnBlock make_attn_block(ParamStore& ps, const std::string& name, int dim, int heads,
                          int mlp_mult, Rng& rng) {
  check(dim % heads == 0, "make_attn_block: dim not divisible by heads");
  AttnBlock b;
  b.heads = heads;
  b.wq = make_linear(ps, name + ".wq", dim, dim, rng);
  b.wk = make_linear(ps, name + ".wk", dim, dim, rng);
  b.wv = make_linear(ps, name + ".wv", dim, dim, rng);
  b.wo = make_linear(ps, name + ".wo", dim, dim, rng);
  b.fc1 = make_linear(ps, name + ".fc1", dim, dim * mlp_mult, rng);
  b.fc2 = make_linear(ps, name + ".fc2", dim * mlp_mult, dim, rng);
  return b;
}

Tensor attn_block_forward(const AttnBlock& blk, const Tensor& x) {
  Tensor h = layer_norm(x);
  Tensor att = attention(linear(blk.wq, h), linear(blk.wk, h), linear(blk.wv, h), blk.heads);
  Tensor y = add(x, linear(blk.wo, att));
  Tensor h2 = layer_norm(y);
  return add(y, linear(blk.fc2, gelu(linear(blk.fc1, h2))));
}

std::vector<double> sinusoid(double pos, int dim) {
  check(dim >= 2 && dim % 2 == 0, "sinusoid: dim must be even and >= 2");
  int half = dim / 2;
  std::vector<double> out(static_cast<size_t>(dim));
  for (int i = 0; i < half; ++i) {
    double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
    out[static_cast<size_t>(i)] = std::sin(pos * freq);
    out[static_cast<size_t>(half + i)] = std::cos(pos * freq);
  }
  return out;
}

Tensor timestep_embedding(int t, int dim) {
  return Tensor::from_data({1, dim}, sinusoid(static_cast<double>(t), dim));
}

Tensor positions_1d(int n, int dim) {
  std::vector<double> data;
  data.reserve(static_cast<size_t>(n) * dim);
  for (int p = 0; p < n; ++p) {
    auto row = sinusoid(static_cast<double>(p), dim);
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor::from_data({n, dim}, std::move(data));
}

Tensor positions_2d(int h, int w, int dim) {
  check(dim % 2 == 0, "positions_2d: dim must be even");
  int half = dim / 2;
  std::vector<double> data;
  data.reserve(static_cast<size_t>(h) * w * dim);
  for (int y = 0; y < h; ++y) {
    auto ye = sinusoid(static_cast<double>(y), half);
    for (int x = 0; x < w; ++x) {
      auto xe = sinusoid(static_cast<double>(x), half);
      data.insert(data.end(), ye.begin(), ye.end());
      data.insert(data.end(), xe.begin(), xe.end());
    }
  }
  return Tensor::from_data({h * w, dim}, std::move(data));
}

}  // namespace soundstage
