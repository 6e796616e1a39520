#pragma once

#include <string>
#include <vector>

#include "mwp/image.hpp"
#include "mwp/params.hpp"
#include "mwp/tensor.hpp"

namespace mwp {

struct ViTConfig {
  int image_side = 32;
  int patch_side = 8;
  int embed_dim = 64;
  int layers = 2;
  int heads = 4;
  double mlp_ratio = 4.0;
  double dropout_p = 0.0;

  void validate() const;
  int patches_per_side() const { return image_side / patch_side; }
  int patch_count() const { return patches_per_side() * patches_per_side(); }
  int seq_len() const { return patch_count() + 1; }
  int patch_dim() const { return patch_side * patch_side * 3; }
  int head_dim() const { return embed_dim / heads; }
  int mlp_dim() const { return static_cast<int>(embed_dim * mlp_ratio); }
};

struct ViTLayerParams {
  Tensor ln1_gamma, ln1_beta;
  Tensor wq, wk, wv, wo;
  Tensor ln2_gamma, ln2_beta;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

struct ViTParams {
  ViTConfig cfg;
  Tensor patch_proj;   // patch_dim x D
  Tensor class_token;  // 1 x D
  Tensor pos_embed;    // (N+1) x D
  std::vector<ViTLayerParams> layers;
  Tensor final_gamma, final_beta;

  static ViTParams init(const ViTConfig& cfg, Rng& rng, ParamStore& store,
                        const std::string& prefix = "vit.");
};

// Optional capture of every per-head attention distribution in forward order.
struct AttnProbe {
  std::vector<Tensor> rows;
};

// Row-major patch extraction; each row is one flattened patch (y, x, channel).
Tensor image_to_patches(const Image& img, const ViTConfig& cfg);

// [class_token; patch-projections] + positional embeddings.
Tensor patch_embed(const Image& img, const ViTParams& params);

Tensor encoder_block(const Tensor& z, const ViTLayerParams& layer, const ViTConfig& cfg,
                     bool training = false, Rng* rng = nullptr, AttnProbe* probe = nullptr);

// Final-LN class-token row, shape 1 x D.
Tensor encode(const Image& img, const ViTParams& params, bool training = false,
              Rng* rng = nullptr, AttnProbe* probe = nullptr,
              Tensor* tokens_out = nullptr);

}  // namespace mwp
