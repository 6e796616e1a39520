#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mwp/params.hpp"
#include "mwp/tensor.hpp"
#include "mwp/vit.hpp"

namespace mwp {

class Rng;

enum class FusionMode { kMutual, kOneWayV2M, kOneWayM2V, kConcat };

FusionMode fusion_mode_from_string(const std::string& s);
std::string to_string(FusionMode mode);

struct FusionConfig {
  FusionMode mode = FusionMode::kMutual;
  int heads = 4;
  int stages = 2;
  int attn_dim = 128;
  int fused_dim = 256;
  double dropout_p = 0.1;
  // When set, the metadata query attends over the visual token sequence
  // instead of the pooled descriptor.
  bool token_kv = false;

  void validate() const;
};

// One attention direction: query projection from dim_q, key/value projections
// from dim_kv, output projection and LN in the shared attention space.
struct CrossBlockParams {
  Tensor wq, wk, wv, wo;
  Tensor ln_gamma, ln_beta;
};

// Bidirectional cross-attention plus the residual-fusion MLP; also usable in
// self mode with both sides fed the same vector.
struct MutualBlockParams {
  CrossBlockParams ab;  // a queries b
  CrossBlockParams ba;  // b queries a
  Tensor proj_a_w, proj_a_b;  // residual projection of a
  Tensor proj_b_w, proj_b_b;  // residual projection of b
  Tensor mlp_w1, mlp_b1;      // 4*attn_dim -> fused_dim
  Tensor mlp_w2, mlp_b2;      // fused_dim -> fused_dim
  Tensor ln_gamma, ln_beta;   // fused_dim

  static MutualBlockParams init(int dim_a, int dim_b, const FusionConfig& cfg, Rng& rng,
                                ParamStore& store, const std::string& prefix);
};

struct FusionParams {
  FusionConfig cfg;
  MutualBlockParams main;                      // (visual D, 256)
  std::vector<MutualBlockParams> refinements;  // stages - 1 self blocks

  static FusionParams init(int visual_dim, int meta_dim, const FusionConfig& cfg, Rng& rng,
                           ParamStore& store, const std::string& prefix = "fusion.");
};

// Multi-head attention of q_src over kv_src followed by LN(OutProj(.)).
// With a single key the softmax is exactly 1, so the result reduces to
// LN(OutProj(VProj(kv_src))).
Tensor cross_attend(const Tensor& q_src, const Tensor& kv_src, const CrossBlockParams& params,
                    int heads, AttnProbe* probe = nullptr);

// Full fusion: mode-dependent cross attention, residual concat, two-layer
// MLP, then (stages-1) self-refinement blocks (skipped in concat mode, which
// has no attention path at all).
Tensor fuse(const Tensor& h_v, const Tensor& h_m, const FusionParams& params, bool training,
            Rng* rng, const Tensor* visual_tokens = nullptr, AttnProbe* probe = nullptr);

std::pair<double, double> modality_norms(const Tensor& h_v, const Tensor& h_m);

}  // namespace mwp
