#pragma once

// Student/teacher ViT: shared encoder trunk, a reconstructor decoder and a
// loss-predictor decoder. The student sees only visible patches and fills the
// gaps with mask tokens; the teacher always runs the full sequence.

#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "hpm/masking.hpp"
#include "hpm/patch.hpp"
#include "hpm/rng.hpp"
#include "hpm/tensor.hpp"

namespace hpm {

struct ModelConfig {
  i64 img_h = 32, img_w = 32, channels = 1, patch = 4;
  i64 enc_depth = 4, enc_dim = 64, enc_heads = 4;
  i64 dec_depth = 2, dec_dim = 32, dec_heads = 4;  // both decoders
  i64 mlp_ratio = 4;
  i64 recon_dim = 16;  // patch_dim() for pixel targets, enc_dim for feature targets

  i64 grid_h() const { return img_h / patch; }
  i64 grid_w() const { return img_w / patch; }
  i64 n_patches() const { return grid_h() * grid_w(); }
  i64 patch_dim() const { return patch * patch * channels; }

  void validate() const {
    if (patch <= 0 || img_h <= 0 || img_w <= 0 || channels <= 0)
      throw std::invalid_argument("model config: non-positive geometry");
    if (img_h % patch != 0 || img_w % patch != 0)
      throw std::invalid_argument("model config: image size not divisible by patch");
    if (enc_depth < 1 || dec_depth < 1) throw std::invalid_argument("model config: depth < 1");
    if (enc_heads < 1 || enc_dim % enc_heads != 0)
      throw std::invalid_argument("model config: enc_dim must divide into enc_heads");
    if (dec_heads < 1 || dec_dim % dec_heads != 0)
      throw std::invalid_argument("model config: dec_dim must divide into dec_heads");
    if (mlp_ratio < 1) throw std::invalid_argument("model config: mlp_ratio < 1");
    if (recon_dim < 1) throw std::invalid_argument("model config: recon_dim < 1");
  }
};

inline constexpr double kLayerNormEps = 1e-6;

// Fixed 2D sine-cosine table over the patch grid, row-major [gh*gw, dim].
// The vertical axis takes the larger half when dim is not a multiple of 4.
template <typename T>
std::vector<T> sincos_pos_table(i64 gh, i64 gw, i64 dim) {
  if (dim % 2 != 0) throw std::invalid_argument("pos table: dim must be even");
  const i64 x_dim = 2 * (dim / 4);
  const i64 y_dim = dim - x_dim;
  if ((gw > 1 && x_dim == 0) || (gh > 1 && y_dim == 0))
    throw std::invalid_argument("pos table: dim too small to encode the grid");
  auto axis = [](i64 pos, i64 d, i64 i) {
    // first d/2 entries sin, second d/2 cos, frequency 10000^{-2i/d}
    const i64 half = d / 2;
    const double omega = std::pow(10000.0, -static_cast<double>(i % half) / half);
    const double v = static_cast<double>(pos) * omega;
    return (i < half) ? std::sin(v) : std::cos(v);
  };
  std::vector<T> out(static_cast<std::size_t>(gh * gw * dim));
  for (i64 y = 0; y < gh; ++y)
    for (i64 x = 0; x < gw; ++x) {
      T* row = out.data() + (y * gw + x) * dim;
      for (i64 i = 0; i < y_dim; ++i) row[i] = static_cast<T>(axis(y, y_dim, i));
      for (i64 i = 0; i < x_dim; ++i) row[y_dim + i] = static_cast<T>(axis(x, x_dim, i));
    }
  return out;
}

template <typename T>
struct AttnBlockParams {
  Tensor<T> ln1_g, ln1_b;
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<T> ln2_g, ln2_b;
  Tensor<T> w1, b1, w2, b2;
};

template <typename T>
struct DecoderParams {
  Tensor<T> embed_w, embed_b;  // enc_dim -> dec_dim
  Tensor<T> mask_token;        // [dec_dim]
  std::vector<AttnBlockParams<T>> blocks;
  Tensor<T> ln_g, ln_b;
  Tensor<T> head_w, head_b;  // dec_dim -> output dim
};

template <typename T>
struct HpmModel {
  ModelConfig cfg;
  Tensor<T> patch_w, patch_b;  // patch_dim -> enc_dim
  std::vector<AttnBlockParams<T>> enc_blocks;
  Tensor<T> enc_ln_g, enc_ln_b;
  DecoderParams<T> rec;   // reconstructor, head -> recon_dim
  DecoderParams<T> pred;  // loss predictor, head -> 1
  Tensor<T> pos_enc;      // [N, enc_dim], constant
  Tensor<T> pos_dec;      // [N, dec_dim], constant

  // Canonical enumeration; parameter initialization draws in this order.
  template <typename F>
  void for_each_param(F&& fn) {
    fn("patch_embed.w", patch_w);
    fn("patch_embed.b", patch_b);
    auto walk_block = [&](const std::string& prefix, AttnBlockParams<T>& b) {
      fn(prefix + ".ln1.g", b.ln1_g);
      fn(prefix + ".ln1.b", b.ln1_b);
      fn(prefix + ".attn.wq", b.wq);
      fn(prefix + ".attn.bq", b.bq);
      fn(prefix + ".attn.wk", b.wk);
      fn(prefix + ".attn.bk", b.bk);
      fn(prefix + ".attn.wv", b.wv);
      fn(prefix + ".attn.bv", b.bv);
      fn(prefix + ".attn.wo", b.wo);
      fn(prefix + ".attn.bo", b.bo);
      fn(prefix + ".ln2.g", b.ln2_g);
      fn(prefix + ".ln2.b", b.ln2_b);
      fn(prefix + ".mlp.w1", b.w1);
      fn(prefix + ".mlp.b1", b.b1);
      fn(prefix + ".mlp.w2", b.w2);
      fn(prefix + ".mlp.b2", b.b2);
    };
    for (std::size_t i = 0; i < enc_blocks.size(); ++i)
      walk_block("enc." + std::to_string(i), enc_blocks[i]);
    fn("enc_ln.g", enc_ln_g);
    fn("enc_ln.b", enc_ln_b);
    auto walk_decoder = [&](const std::string& prefix, DecoderParams<T>& d) {
      fn(prefix + ".embed.w", d.embed_w);
      fn(prefix + ".embed.b", d.embed_b);
      fn(prefix + ".mask_token", d.mask_token);
      for (std::size_t i = 0; i < d.blocks.size(); ++i)
        walk_block(prefix + "." + std::to_string(i), d.blocks[i]);
      fn(prefix + ".ln.g", d.ln_g);
      fn(prefix + ".ln.b", d.ln_b);
      fn(prefix + ".head.w", d.head_w);
      fn(prefix + ".head.b", d.head_b);
    };
    walk_decoder("rec", rec);
    walk_decoder("pred", pred);
  }
};

namespace detail {

template <typename T>
Tensor<T> trunc_normal_param(Rng& rng, Shape shape, bool rg, double stddev = 0.02) {
  std::vector<T> v(static_cast<std::size_t>(numel_of(shape)));
  for (auto& x : v) x = static_cast<T>(rng.truncated_normal(stddev));
  return Tensor<T>::from_vector(std::move(shape), std::move(v), rg);
}

template <typename T>
AttnBlockParams<T> init_block(i64 dim, i64 mlp_ratio, Rng& rng, bool rg) {
  AttnBlockParams<T> b;
  b.ln1_g = Tensor<T>::filled({dim}, T(1), rg);
  b.ln1_b = Tensor<T>::zeros({dim}, rg);
  b.wq = trunc_normal_param<T>(rng, {dim, dim}, rg);
  b.bq = Tensor<T>::zeros({dim}, rg);
  b.wk = trunc_normal_param<T>(rng, {dim, dim}, rg);
  b.bk = Tensor<T>::zeros({dim}, rg);
  b.wv = trunc_normal_param<T>(rng, {dim, dim}, rg);
  b.bv = Tensor<T>::zeros({dim}, rg);
  b.wo = trunc_normal_param<T>(rng, {dim, dim}, rg);
  b.bo = Tensor<T>::zeros({dim}, rg);
  b.ln2_g = Tensor<T>::filled({dim}, T(1), rg);
  b.ln2_b = Tensor<T>::zeros({dim}, rg);
  b.w1 = trunc_normal_param<T>(rng, {dim, dim * mlp_ratio}, rg);
  b.b1 = Tensor<T>::zeros({dim * mlp_ratio}, rg);
  b.w2 = trunc_normal_param<T>(rng, {dim * mlp_ratio, dim}, rg);
  b.b2 = Tensor<T>::zeros({dim}, rg);
  return b;
}

template <typename T>
DecoderParams<T> init_decoder(const ModelConfig& cfg, i64 out_dim, Rng& rng, bool rg) {
  DecoderParams<T> d;
  d.embed_w = trunc_normal_param<T>(rng, {cfg.enc_dim, cfg.dec_dim}, rg);
  d.embed_b = Tensor<T>::zeros({cfg.dec_dim}, rg);
  d.mask_token = trunc_normal_param<T>(rng, {cfg.dec_dim}, rg);
  for (i64 i = 0; i < cfg.dec_depth; ++i)
    d.blocks.push_back(init_block<T>(cfg.dec_dim, cfg.mlp_ratio, rng, rg));
  d.ln_g = Tensor<T>::filled({cfg.dec_dim}, T(1), rg);
  d.ln_b = Tensor<T>::zeros({cfg.dec_dim}, rg);
  d.head_w = trunc_normal_param<T>(rng, {cfg.dec_dim, out_dim}, rg);
  d.head_b = Tensor<T>::zeros({out_dim}, rg);
  return d;
}

}  // namespace detail

template <typename T>
HpmModel<T> init_model(const ModelConfig& cfg, Rng& rng, bool requires_grad = true) {
  cfg.validate();
  HpmModel<T> m;
  m.cfg = cfg;
  const bool rg = requires_grad;
  m.patch_w = detail::trunc_normal_param<T>(rng, {cfg.patch_dim(), cfg.enc_dim}, rg);
  m.patch_b = Tensor<T>::zeros({cfg.enc_dim}, rg);
  for (i64 i = 0; i < cfg.enc_depth; ++i)
    m.enc_blocks.push_back(detail::init_block<T>(cfg.enc_dim, cfg.mlp_ratio, rng, rg));
  m.enc_ln_g = Tensor<T>::filled({cfg.enc_dim}, T(1), rg);
  m.enc_ln_b = Tensor<T>::zeros({cfg.enc_dim}, rg);
  m.rec = detail::init_decoder<T>(cfg, cfg.recon_dim, rng, rg);
  m.pred = detail::init_decoder<T>(cfg, 1, rng, rg);
  m.pos_enc = Tensor<T>::from_vector({cfg.n_patches(), cfg.enc_dim},
                                     sincos_pos_table<T>(cfg.grid_h(), cfg.grid_w(), cfg.enc_dim));
  m.pos_dec = Tensor<T>::from_vector({cfg.n_patches(), cfg.dec_dim},
                                     sincos_pos_table<T>(cfg.grid_h(), cfg.grid_w(), cfg.dec_dim));
  return m;
}

template <typename T>
struct ForwardOutput {
  Tensor<T> recon;     // [B, N, recon_dim]; left empty by teacher_forward
  Tensor<T> pred;      // [B, N] predicted per-patch loss
  Tensor<T> features;  // encoder output: [B, V, enc_dim] student, [B, N, enc_dim] teacher
};

namespace detail {

template <typename T>
Tensor<T> attn_block_forward(const Tensor<T>& x, const AttnBlockParams<T>& p, i64 heads) {
  const i64 B = x.shape()[0], R = x.shape()[1], D = x.shape()[2];
  const i64 dh = D / heads;
  auto h = reshape(layer_norm_lastaxis(x, p.ln1_g, p.ln1_b, static_cast<T>(kLayerNormEps)),
                   {B * R, D});
  auto q = split_heads(reshape(add_bias(matmul(h, p.wq), p.bq), {B, R, D}), heads);
  auto k = split_heads(reshape(add_bias(matmul(h, p.wk), p.bk), {B, R, D}), heads);
  auto v = split_heads(reshape(add_bias(matmul(h, p.wv), p.bv), {B, R, D}), heads);
  auto scores = mul_scalar(bmm_nt(q, k), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
  auto ctx = merge_heads(bmm_nn(softmax_lastaxis(scores), v), heads);
  auto x1 = add(x, reshape(add_bias(matmul(reshape(ctx, {B * R, D}), p.wo), p.bo), {B, R, D}));
  auto m = reshape(layer_norm_lastaxis(x1, p.ln2_g, p.ln2_b, static_cast<T>(kLayerNormEps)),
                   {B * R, D});
  auto mm = add_bias(matmul(gelu(add_bias(matmul(m, p.w1), p.b1)), p.w2), p.b2);
  return add(x1, reshape(mm, {B, R, D}));
}

// Patch pixels -> embedded tokens with positions, [B, N, enc_dim].
template <typename T>
Tensor<T> embed_tokens(const HpmModel<T>& m, const PatchBatch& pb) {
  if (pb.n != m.cfg.n_patches() || pb.d != m.cfg.patch_dim())
    throw std::invalid_argument("forward: patch batch geometry does not match the model");
  std::vector<T> vals(pb.vals.begin(), pb.vals.end());
  auto x = Tensor<T>::from_vector({pb.b * pb.n, pb.d}, std::move(vals));
  auto tok = reshape(add_bias(matmul(x, m.patch_w), m.patch_b), {pb.b, pb.n, m.cfg.enc_dim});
  return add_rowtable(tok, m.pos_enc);
}

template <typename T>
Tensor<T> encoder_trunk(const HpmModel<T>& m, Tensor<T> x) {
  for (const auto& b : m.enc_blocks) x = attn_block_forward(x, b, m.cfg.enc_heads);
  return layer_norm_lastaxis(x, m.enc_ln_g, m.enc_ln_b, static_cast<T>(kLayerNormEps));
}

// Decoder over the full restored sequence. vis_of_batch empty means the input
// already covers all N positions in order (teacher path, no mask tokens).
template <typename T>
Tensor<T> decoder_forward(const HpmModel<T>& m, const DecoderParams<T>& d, const Tensor<T>& feats,
                          const std::vector<PatchMask>* masks, i64 out_dim) {
  const i64 B = feats.shape()[0], R = feats.shape()[1];
  const i64 N = m.cfg.n_patches(), dd = m.cfg.dec_dim;
  auto emb = reshape(add_bias(matmul(reshape(feats, {B * R, m.cfg.enc_dim}), d.embed_w), d.embed_b),
                     {B, R, dd});
  Tensor<T> seq;
  if (masks) {
    const i64 V = R, K = N - V;
    auto mt = reshape(expand_token(d.mask_token, B * K), {B, K, dd});
    auto cat = concat_rows(emb, mt);  // [B, V+K, dd], visible first
    auto restore = std::make_shared<std::vector<i32>>(static_cast<std::size_t>(B * N));
    for (i64 b = 0; b < B; ++b) {
      const PatchMask& pm = (*masks)[static_cast<std::size_t>(b)];
      i32* row = restore->data() + b * N;
      for (std::size_t j = 0; j < pm.vis_idx.size(); ++j)
        row[pm.vis_idx[j]] = static_cast<i32>(j);
      for (std::size_t j = 0; j < pm.mask_idx.size(); ++j)
        row[pm.mask_idx[j]] = static_cast<i32>(V + static_cast<i64>(j));
    }
    seq = gather_rows(cat, restore, N);
  } else {
    if (R != N) throw std::invalid_argument("decoder: full sequence expected");
    seq = emb;
  }
  seq = add_rowtable(seq, m.pos_dec);
  for (const auto& b : d.blocks) seq = detail::attn_block_forward(seq, b, m.cfg.dec_heads);
  seq = layer_norm_lastaxis(seq, d.ln_g, d.ln_b, static_cast<T>(kLayerNormEps));
  return reshape(add_bias(matmul(reshape(seq, {B * N, dd}), d.head_w), d.head_b), {B, N, out_dim});
}

}  // namespace detail

// Masked forward: encoder runs on visible patches only, decoders reconstruct
// the full sequence with mask tokens. Every mask must leave at least one
// patch on each side and the visible count must agree across the batch.
template <typename T>
ForwardOutput<T> student_forward(const HpmModel<T>& m, const PatchBatch& pb,
                                 const std::vector<PatchMask>& masks) {
  const i64 B = pb.b, N = m.cfg.n_patches();
  if (static_cast<i64>(masks.size()) != B)
    throw std::invalid_argument("student_forward: one mask per image required");
  const i64 V = static_cast<i64>(masks.empty() ? 0 : masks[0].vis_idx.size());
  for (const auto& pm : masks) {
    if (pm.n() != N) throw std::invalid_argument("student_forward: mask length mismatch");
    if (pm.vis_idx.empty()) throw std::invalid_argument("student_forward: no visible patches");
    if (pm.mask_idx.empty()) throw std::invalid_argument("student_forward: no masked patches");
    if (static_cast<i64>(pm.vis_idx.size()) != V)
      throw std::invalid_argument("student_forward: visible counts differ across batch");
  }
  auto tok = detail::embed_tokens(m, pb);
  auto vis = std::make_shared<std::vector<i32>>();
  vis->reserve(static_cast<std::size_t>(B * V));
  for (const auto& pm : masks) vis->insert(vis->end(), pm.vis_idx.begin(), pm.vis_idx.end());
  auto feats = detail::encoder_trunk(m, gather_rows(tok, vis, V));
  ForwardOutput<T> out;
  out.features = feats;
  out.recon = detail::decoder_forward(m, m.rec, feats, &masks, m.cfg.recon_dim);
  out.pred = reshape(detail::decoder_forward(m, m.pred, feats, &masks, 1), {B, N});
  return out;
}

// Full-sequence forward used for the teacher: no mask tokens, reconstructor
// skipped because only features and the loss prediction are consumed.
template <typename T>
ForwardOutput<T> teacher_forward(const HpmModel<T>& m, const PatchBatch& pb) {
  auto feats = detail::encoder_trunk(m, detail::embed_tokens(m, pb));
  ForwardOutput<T> out;
  out.features = feats;
  out.pred = reshape(detail::decoder_forward(m, m.pred, feats, nullptr, 1), {pb.b, pb.n});
  return out;
}

// Encoder output on the full sequence, [B, N, enc_dim]; probe features.
template <typename T>
Tensor<T> encoder_features(const HpmModel<T>& m, const PatchBatch& pb) {
  return detail::encoder_trunk(m, detail::embed_tokens(m, pb));
}

}  // namespace hpm
