#include "mwp/vit.hpp"

#include <cmath>

#include "mwp/errors.hpp"
#include "mwp/rng.hpp"

namespace mwp {

void ViTConfig::validate() const {
  if (image_side <= 0 || patch_side <= 0 || embed_dim <= 0 || layers < 0 || heads <= 0)
    throw ConfigError("visual encoder dimensions must be positive");
  if (image_side % patch_side != 0)
    throw ConfigError("image side " + std::to_string(image_side) +
                      " not divisible by patch side " + std::to_string(patch_side));
  if (embed_dim % heads != 0)
    throw ConfigError("embed dim " + std::to_string(embed_dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
  if (mlp_ratio <= 0.0) throw ConfigError("mlp_ratio must be positive");
  if (dropout_p < 0.0 || dropout_p >= 1.0) throw ConfigError("dropout_p must be in [0, 1)");
}

ViTParams ViTParams::init(const ViTConfig& cfg, Rng& rng, ParamStore& store,
                          const std::string& prefix) {
  cfg.validate();
  ViTParams p;
  p.cfg = cfg;
  auto sz = [](int n) { return static_cast<std::size_t>(n); };
  const std::size_t pd = sz(cfg.patch_dim()), d = sz(cfg.embed_dim);
  const std::size_t seq = sz(cfg.seq_len()), mlp = sz(cfg.mlp_dim());

  p.patch_proj = store.add(prefix + "patch_proj", xavier_uniform({pd, d}, pd, d, rng),
                           ParamGroup::kBackbone);
  p.class_token =
      store.add(prefix + "class_token", normal_init({1, d}, 0.02, rng), ParamGroup::kBackbone);
  p.pos_embed =
      store.add(prefix + "pos_embed", normal_init({seq, d}, 0.02, rng), ParamGroup::kBackbone);

  for (int l = 0; l < cfg.layers; ++l) {
    std::string lp = prefix + "layer" + std::to_string(l) + ".";
    ViTLayerParams layer;
    layer.ln1_gamma = store.add(lp + "ln1_gamma", Tensor::full({d}, 1.0), ParamGroup::kBackbone);
    layer.ln1_beta = store.add(lp + "ln1_beta", Tensor::zeros({d}), ParamGroup::kBackbone);
    layer.wq = store.add(lp + "wq", xavier_uniform({d, d}, d, d, rng), ParamGroup::kBackbone);
    layer.wk = store.add(lp + "wk", xavier_uniform({d, d}, d, d, rng), ParamGroup::kBackbone);
    layer.wv = store.add(lp + "wv", xavier_uniform({d, d}, d, d, rng), ParamGroup::kBackbone);
    layer.wo = store.add(lp + "wo", xavier_uniform({d, d}, d, d, rng), ParamGroup::kBackbone);
    layer.ln2_gamma = store.add(lp + "ln2_gamma", Tensor::full({d}, 1.0), ParamGroup::kBackbone);
    layer.ln2_beta = store.add(lp + "ln2_beta", Tensor::zeros({d}), ParamGroup::kBackbone);
    layer.ffn_w1 =
        store.add(lp + "ffn_w1", xavier_uniform({d, mlp}, d, mlp, rng), ParamGroup::kBackbone);
    layer.ffn_b1 = store.add(lp + "ffn_b1", Tensor::zeros({1, mlp}), ParamGroup::kBackbone);
    layer.ffn_w2 =
        store.add(lp + "ffn_w2", xavier_uniform({mlp, d}, mlp, d, rng), ParamGroup::kBackbone);
    layer.ffn_b2 = store.add(lp + "ffn_b2", Tensor::zeros({1, d}), ParamGroup::kBackbone);
    p.layers.push_back(layer);
  }

  p.final_gamma = store.add(prefix + "final_gamma", Tensor::full({d}, 1.0), ParamGroup::kBackbone);
  p.final_beta = store.add(prefix + "final_beta", Tensor::zeros({d}), ParamGroup::kBackbone);
  return p;
}

Tensor image_to_patches(const Image& img, const ViTConfig& cfg) {
  if (img.side != cfg.image_side)
    throw DimensionError("image side " + std::to_string(img.side) +
                         " does not match configured side " + std::to_string(cfg.image_side));
  const int per_side = cfg.patches_per_side();
  const int ps = cfg.patch_side;
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(cfg.patch_count()) *
               static_cast<std::size_t>(cfg.patch_dim()));
  for (int py = 0; py < per_side; ++py) {
    for (int px = 0; px < per_side; ++px) {
      for (int y = 0; y < ps; ++y)
        for (int x = 0; x < ps; ++x)
          for (int c = 0; c < 3; ++c) data.push_back(img.at(py * ps + y, px * ps + x, c));
    }
  }
  return Tensor::from_vector({static_cast<std::size_t>(cfg.patch_count()),
                              static_cast<std::size_t>(cfg.patch_dim())},
                             std::move(data));
}

Tensor patch_embed(const Image& img, const ViTParams& params) {
  Tensor patches = image_to_patches(img, params.cfg);
  Tensor projected = matmul(patches, params.patch_proj);
  Tensor seq = concat_rows({params.class_token, projected});
  return add(seq, params.pos_embed);
}

namespace {

// softmax(Q Kᵀ / sqrt(head_dim)) V per head, heads concatenated.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                            AttnProbe* probe) {
  const std::size_t dim = q.cols();
  const std::size_t hd = dim / static_cast<std::size_t>(heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<Tensor> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, static_cast<std::size_t>(h) * hd, hd);
    Tensor kh = slice_cols(k, static_cast<std::size_t>(h) * hd, hd);
    Tensor vh = slice_cols(v, static_cast<std::size_t>(h) * hd, hd);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    Tensor attn = softmax_lastdim(scores);
    if (probe) probe->rows.push_back(attn);
    outs.push_back(matmul(attn, vh));
  }
  return concat_cols(outs);
}

}  // namespace

Tensor encoder_block(const Tensor& z, const ViTLayerParams& layer, const ViTConfig& cfg,
                     bool training, Rng* rng, AttnProbe* probe) {
  Tensor x = layer_norm(z, layer.ln1_gamma, layer.ln1_beta);
  Tensor q = matmul(x, layer.wq);
  Tensor k = matmul(x, layer.wk);
  Tensor v = matmul(x, layer.wv);
  Tensor attn = multi_head_attention(q, k, v, cfg.heads, probe);
  Tensor msa = dropout(matmul(attn, layer.wo), cfg.dropout_p, training, rng);
  Tensor z1 = add(z, msa);

  Tensor y = layer_norm(z1, layer.ln2_gamma, layer.ln2_beta);
  Tensor hidden = gelu(add(matmul(y, layer.ffn_w1), layer.ffn_b1));
  Tensor out = dropout(add(matmul(hidden, layer.ffn_w2), layer.ffn_b2), cfg.dropout_p, training,
                       rng);
  return add(z1, out);
}

Tensor encode(const Image& img, const ViTParams& params, bool training, Rng* rng,
              AttnProbe* probe, Tensor* tokens_out) {
  Tensor z = patch_embed(img, params);
  for (const ViTLayerParams& layer : params.layers)
    z = encoder_block(z, layer, params.cfg, training, rng, probe);
  Tensor normed = layer_norm(z, params.final_gamma, params.final_beta);
  if (tokens_out) *tokens_out = normed;
  return select_row(normed, 0);
}

}  // namespace mwp
