#include "soundstage/dit.h"

#include <cmath>

#include "soundstage/common.h"

namespace soundstage::dit {

void DitConfig::validate() const {
  check(num_blocks >= 1 && hidden_dim >= 2 && num_heads >= 1 && patch_size >= 1,
        "dit config: positive sizes required");
  check(hidden_dim % num_heads == 0, "dit config: hidden_dim not divisible by heads");
  check(cond_dim >= 1 && latent_channels >= 1 && content_channels >= 1,
        "dit config: positive channel counts required");
}

Dit make_dit(ParamStore& ps, const std::string& prefix, const DitConfig& cfg, Rng& rng) {
  cfg.validate();
  Dit m;
  m.cfg = cfg;
  int h = cfg.hidden_dim;
  int p2 = cfg.patch_size * cfg.patch_size;
  int c_in = cfg.text_mode == TextMode::kConcat ? cfg.latent_channels + cfg.content_channels
                                                : cfg.latent_channels;
  m.in_proj = make_linear(ps, prefix + ".in", c_in * p2, h, rng);
  m.t_mlp1 = make_linear(ps, prefix + ".tmlp1", h, h, rng);
  m.t_mlp2 = make_linear(ps, prefix + ".tmlp2", h, h, rng);
  m.env_proj = make_linear(ps, prefix + ".envp", cfg.cond_dim, h, rng);
  m.ca_env_proj = make_linear(ps, prefix + ".caenvp", cfg.cond_dim, h, rng);
  if (cfg.text_mode == TextMode::kCrossAttention)
    m.cont_proj = make_linear(ps, prefix + ".contp", cfg.content_channels * p2, h, rng);
  if (cfg.speaker_dim > 0)
    m.spk_proj = make_linear(ps, prefix + ".spkp", cfg.speaker_dim, h, rng);
  for (int b = 0; b < cfg.num_blocks; ++b) {
    std::string bp = prefix + ".block" + std::to_string(b);
    DitBlock blk;
    blk.ada = make_linear_zero(ps, bp + ".ada", h, 6 * h);
    blk.wq = make_linear(ps, bp + ".wq", h, h, rng);
    blk.wk = make_linear(ps, bp + ".wk", h, h, rng);
    blk.wv = make_linear(ps, bp + ".wv", h, h, rng);
    blk.wo = make_linear(ps, bp + ".wo", h, h, rng);
    blk.cq = make_linear(ps, bp + ".cq", h, h, rng);
    blk.ck = make_linear(ps, bp + ".ck", h, h, rng);
    blk.cv = make_linear(ps, bp + ".cv", h, h, rng);
    blk.co = make_linear_zero(ps, bp + ".co", h, h);
    blk.fc1 = make_linear(ps, bp + ".fc1", h, 2 * h, rng);
    blk.fc2 = make_linear(ps, bp + ".fc2", 2 * h, h, rng);
    m.blocks.push_back(std::move(blk));
  }
  m.final_ada = make_linear_zero(ps, prefix + ".fada", h, 2 * h);
  m.out_proj = make_linear(ps, prefix + ".out", h, cfg.latent_channels * p2, rng, true, 0.01);
  m.null_env = ps.create_randn(prefix + ".null_env", {cfg.cond_dim}, 0.5, rng);
  m.null_cont = ps.create_randn(prefix + ".null_cont", {cfg.content_channels}, 0.5, rng);
  return m;
}

NullConditions null_conditions(const Dit& model, int h, int w) {
  check(h >= 1 && w >= 1, "null_conditions: positive geometry required");
  return {model.null_env, expand_channels(model.null_cont, h, w)};
}

Tensor patchify(const Tensor& z, int p, PatchInfo* info) {
  check(z.rank() == 3, "patchify: rank-3 latent required");
  check(p >= 1, "patchify: positive patch size required");
  int c = z.dim(0), h = z.dim(1), w = z.dim(2);
  int ph = (p - h % p) % p, pw = (p - w % p) % p;
  Tensor x = z;
  if (ph || pw) {
    // pad each channel's plane on the bottom/right with zeros
    std::vector<Tensor> planes;
    for (int ci = 0; ci < c; ++ci) {
      Tensor plane = reshape(slice_channels(x, ci, 1), {h, w});
      planes.push_back(reshape(pad2d(plane, ph, pw, 0.0), {1, h + ph, w + pw}));
    }
    Tensor acc = planes[0];
    for (size_t i = 1; i < planes.size(); ++i) acc = concat_channels(acc, planes[i]);
    x = acc;
  }
  if (info) *info = PatchInfo{c, h + ph, w + pw, ph, pw};
  return patchify_tokens(x, p);
}

Tensor unpatchify(const Tensor& tokens, int p, const PatchInfo& info) {
  Tensor z = unpatchify_tokens(tokens, info.channels, info.h, info.w, p);
  if (!info.pad_h && !info.pad_w) return z;
  std::vector<Tensor> planes;
  for (int ci = 0; ci < info.channels; ++ci) {
    Tensor plane = reshape(slice_channels(z, ci, 1), {info.h, info.w});
    plane = crop2d(plane, info.h - info.pad_h, info.w - info.pad_w);
    planes.push_back(reshape(plane, {1, info.h - info.pad_h, info.w - info.pad_w}));
  }
  Tensor acc = planes[0];
  for (size_t i = 1; i < planes.size(); ++i) acc = concat_channels(acc, planes[i]);
  return acc;
}

namespace {

// row i of ada(silu(c)), as a broadcastable [h] vector
Tensor ada_chunk(const Tensor& mod, int i, int h) {
  return reshape(slice_cols(mod, i * h, h), {h});
}

Tensor modulate(const Tensor& x, const Tensor& shift, const Tensor& scale) {
  return add_rows(mul_rows(x, add_scalar(scale, 1.0)), shift);
}

}  // namespace

Tensor dit_forward(const Dit& model, const Tensor& z_t, int t, const ConditionPair& cond) {
  const DitConfig& cfg = model.cfg;
  check(z_t.rank() == 3 && z_t.dim(0) == cfg.latent_channels,
        "dit_forward: latent channel mismatch");
  int lh = z_t.dim(1), lw = z_t.dim(2);

  Tensor cont = cond.cont;
  if (!cont.defined()) cont = expand_channels(model.null_cont, lh, lw);
  check(cont.rank() == 3 && cont.dim(0) == cfg.content_channels && cont.dim(1) == lh &&
            cont.dim(2) == lw,
        "dit_forward: content latent geometry must match z_t");

  // conditioning vector: timestep MLP + pooled env (+ speaker)
  Tensor temb = timestep_embedding(t, cfg.hidden_dim);
  Tensor c = linear(model.t_mlp2, silu(linear(model.t_mlp1, temb)));
  Tensor env_pooled;
  if (cond.env.empty()) {
    env_pooled = reshape(model.null_env, {1, cfg.cond_dim});
  } else {
    for (const auto& v : cond.env)
      check(v.rank() == 1 && v.dim(0) == cfg.cond_dim, "dit_forward: env vector dim mismatch");
    env_pooled = cond.env.size() == 1 ? reshape(cond.env[0], {1, cfg.cond_dim})
                                      : reshape(mean_rows(stack_rows(cond.env)), {1, cfg.cond_dim});
  }
  c = add(c, linear(model.env_proj, env_pooled));
  if (cond.speaker.defined()) {
    check(cfg.speaker_dim > 0 && cond.speaker.rank() == 1 &&
              cond.speaker.dim(0) == cfg.speaker_dim,
          "dit_forward: speaker vector dim mismatch");
    c = add(c, linear(model.spk_proj, reshape(cond.speaker, {1, cfg.speaker_dim})));
  }

  // token stream
  PatchInfo info;
  Tensor tokens;
  if (cfg.text_mode == TextMode::kConcat) {
    tokens = patchify(concat_channels(z_t, cont), cfg.patch_size, &info);
  } else {
    tokens = patchify(z_t, cfg.patch_size, &info);
  }
  int hp = info.h / cfg.patch_size, wp = info.w / cfg.patch_size;
  tokens = add(tokens, positions_2d(hp, wp, tokens.dim(1)));
  Tensor x = linear(model.in_proj, tokens);

  // cross-attention memory
  std::vector<Tensor> mem_rows;
  if (cfg.env_cross_attention) {
    if (cond.env.empty()) {
      mem_rows.push_back(linear(model.ca_env_proj, reshape(model.null_env, {1, cfg.cond_dim})));
    } else {
      for (const auto& v : cond.env)
        mem_rows.push_back(linear(model.ca_env_proj, reshape(v, {1, cfg.cond_dim})));
    }
  }
  if (cfg.text_mode == TextMode::kCrossAttention) {
    PatchInfo cinfo;
    Tensor ctok = patchify(cont, cfg.patch_size, &cinfo);
    ctok = add(ctok, positions_2d(cinfo.h / cfg.patch_size, cinfo.w / cfg.patch_size, ctok.dim(1)));
    mem_rows.push_back(linear(model.cont_proj, ctok));
  }
  Tensor mem;
  if (!mem_rows.empty()) {
    mem = mem_rows[0];
    for (size_t i = 1; i < mem_rows.size(); ++i) {
      // concatenate along the sequence axis via channel concat on [n,1,h]
      Tensor cat = concat_channels(reshape(mem, {mem.dim(0), 1, mem.dim(1)}),
                                   reshape(mem_rows[i], {mem_rows[i].dim(0), 1, mem.dim(1)}));
      mem = reshape(cat, {cat.dim(0), mem.dim(1)});
    }
  }

  for (const auto& blk : model.blocks) {
    Tensor mod = linear(blk.ada, silu(c));  // [1, 6h]
    int hd = cfg.hidden_dim;
    Tensor sa_shift = ada_chunk(mod, 0, hd), sa_scale = ada_chunk(mod, 1, hd),
           sa_gate = ada_chunk(mod, 2, hd);
    Tensor ff_shift = ada_chunk(mod, 3, hd), ff_scale = ada_chunk(mod, 4, hd),
           ff_gate = ada_chunk(mod, 5, hd);

    Tensor xm = modulate(layer_norm(x), sa_shift, sa_scale);
    Tensor sa = linear(blk.wo, attention(linear(blk.wq, xm), linear(blk.wk, xm),
                                         linear(blk.wv, xm), cfg.num_heads));
    x = add(x, mul_rows(sa, sa_gate));

    if (mem.defined()) {
      Tensor xq = layer_norm(x);
      Tensor ca = linear(blk.co, attention(linear(blk.cq, xq), linear(blk.ck, mem),
                                           linear(blk.cv, mem), cfg.num_heads));
      x = add(x, ca);  // co is zero-init, the block starts inert
    }

    Tensor xf = modulate(layer_norm(x), ff_shift, ff_scale);
    Tensor ff = linear(blk.fc2, gelu(linear(blk.fc1, xf)));
    x = add(x, mul_rows(ff, ff_gate));
  }

  Tensor fmod = linear(model.final_ada, silu(c));  // [1, 2h]
  Tensor out = modulate(layer_norm(x), ada_chunk(fmod, 0, cfg.hidden_dim),
                        ada_chunk(fmod, 1, cfg.hidden_dim));
  out = linear(model.out_proj, out);  // [T, C*p^2]
  PatchInfo out_info{cfg.latent_channels, info.h, info.w, info.pad_h, info.pad_w};
  return unpatchify(out, cfg.patch_size, out_info);
}

}  // namespace soundstage::dit
