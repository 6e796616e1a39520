#include "mwp/fusion.hpp"

#include <cmath>

#include "mwp/errors.hpp"
#include "mwp/rng.hpp"

namespace mwp {

FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "mutual") return FusionMode::kMutual;
  if (s == "v2m") return FusionMode::kOneWayV2M;
  if (s == "m2v") return FusionMode::kOneWayM2V;
  if (s == "concat") return FusionMode::kConcat;
  throw ConfigError("unknown fusion mode '" + s + "' (expected mutual|v2m|m2v|concat)");
}

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::kMutual: return "mutual";
    case FusionMode::kOneWayV2M: return "v2m";
    case FusionMode::kOneWayM2V: return "m2v";
    case FusionMode::kConcat: return "concat";
  }
  throw ConfigError("unknown fusion mode value");
}

void FusionConfig::validate() const {
  if (heads <= 0) throw ConfigError("fusion heads must be positive");
  if (attn_dim <= 0 || attn_dim % heads != 0)
    throw ConfigError("attention dim " + std::to_string(attn_dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
  if (stages < 1) throw ConfigError("fusion stages must be >= 1");
  if (fused_dim <= 0) throw ConfigError("fused dim must be positive");
  if (dropout_p < 0.0 || dropout_p >= 1.0) throw ConfigError("dropout_p must be in [0, 1)");
}

namespace {

CrossBlockParams init_cross(int dim_q, int dim_kv, int attn_dim, Rng& rng, ParamStore& store,
                            const std::string& prefix) {
  auto sq = static_cast<std::size_t>(dim_q);
  auto skv = static_cast<std::size_t>(dim_kv);
  auto sa = static_cast<std::size_t>(attn_dim);
  CrossBlockParams p;
  p.wq = store.add(prefix + "wq", xavier_uniform({sq, sa}, sq, sa, rng),
                   ParamGroup::kFusionHead);
  p.wk = store.add(prefix + "wk", xavier_uniform({skv, sa}, skv, sa, rng),
                   ParamGroup::kFusionHead);
  p.wv = store.add(prefix + "wv", xavier_uniform({skv, sa}, skv, sa, rng),
                   ParamGroup::kFusionHead);
  p.wo = store.add(prefix + "wo", xavier_uniform({sa, sa}, sa, sa, rng),
                   ParamGroup::kFusionHead);
  p.ln_gamma = store.add(prefix + "ln_gamma", Tensor::full({sa}, 1.0), ParamGroup::kFusionHead);
  p.ln_beta = store.add(prefix + "ln_beta", Tensor::zeros({sa}), ParamGroup::kFusionHead);
  return p;
}

}  // namespace

MutualBlockParams MutualBlockParams::init(int dim_a, int dim_b, const FusionConfig& cfg,
                                          Rng& rng, ParamStore& store,
                                          const std::string& prefix) {
  auto sa = static_cast<std::size_t>(dim_a);
  auto sb = static_cast<std::size_t>(dim_b);
  auto sd = static_cast<std::size_t>(cfg.attn_dim);
  auto sf = static_cast<std::size_t>(cfg.fused_dim);
  MutualBlockParams p;
  p.ab = init_cross(dim_a, dim_b, cfg.attn_dim, rng, store, prefix + "ab.");
  p.ba = init_cross(dim_b, dim_a, cfg.attn_dim, rng, store, prefix + "ba.");
  p.proj_a_w = store.add(prefix + "proj_a_w", xavier_uniform({sa, sd}, sa, sd, rng),
                         ParamGroup::kFusionHead);
  p.proj_a_b = store.add(prefix + "proj_a_b", Tensor::zeros({1, sd}), ParamGroup::kFusionHead);
  p.proj_b_w = store.add(prefix + "proj_b_w", xavier_uniform({sb, sd}, sb, sd, rng),
                         ParamGroup::kFusionHead);
  p.proj_b_b = store.add(prefix + "proj_b_b", Tensor::zeros({1, sd}), ParamGroup::kFusionHead);
  p.mlp_w1 = store.add(prefix + "mlp_w1", xavier_uniform({4 * sd, sf}, 4 * sd, sf, rng),
                       ParamGroup::kFusionHead);
  p.mlp_b1 = store.add(prefix + "mlp_b1", Tensor::zeros({1, sf}), ParamGroup::kFusionHead);
  p.mlp_w2 = store.add(prefix + "mlp_w2", xavier_uniform({sf, sf}, sf, sf, rng),
                       ParamGroup::kFusionHead);
  p.mlp_b2 = store.add(prefix + "mlp_b2", Tensor::zeros({1, sf}), ParamGroup::kFusionHead);
  p.ln_gamma = store.add(prefix + "ln_gamma", Tensor::full({sf}, 1.0), ParamGroup::kFusionHead);
  p.ln_beta = store.add(prefix + "ln_beta", Tensor::zeros({sf}), ParamGroup::kFusionHead);
  return p;
}

FusionParams FusionParams::init(int visual_dim, int meta_dim, const FusionConfig& cfg, Rng& rng,
                                ParamStore& store, const std::string& prefix) {
  cfg.validate();
  FusionParams p;
  p.cfg = cfg;
  p.main = MutualBlockParams::init(visual_dim, meta_dim, cfg, rng, store, prefix + "stage0.");
  for (int s = 1; s < cfg.stages; ++s)
    p.refinements.push_back(MutualBlockParams::init(
        cfg.fused_dim, cfg.fused_dim, cfg, rng, store, prefix + "stage" + std::to_string(s) + "."));
  return p;
}

Tensor cross_attend(const Tensor& q_src, const Tensor& kv_src, const CrossBlockParams& params,
                    int heads, AttnProbe* probe) {
  const std::size_t attn_dim = params.wq.cols();
  if (heads <= 0 || attn_dim % static_cast<std::size_t>(heads) != 0)
    throw ConfigError("attention dim " + std::to_string(attn_dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
  Tensor q = matmul(q_src, params.wq);
  Tensor k = matmul(kv_src, params.wk);
  Tensor v = matmul(kv_src, params.wv);
  const std::size_t hd = attn_dim / static_cast<std::size_t>(heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<Tensor> outs;
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, static_cast<std::size_t>(h) * hd, hd);
    Tensor kh = slice_cols(k, static_cast<std::size_t>(h) * hd, hd);
    Tensor vh = slice_cols(v, static_cast<std::size_t>(h) * hd, hd);
    Tensor attn = softmax_lastdim(scale(matmul(qh, transpose(kh)), inv_sqrt));
    if (probe) probe->rows.push_back(attn);
    outs.push_back(matmul(attn, vh));
  }
  Tensor merged = matmul(concat_cols(outs), params.wo);
  return layer_norm(merged, params.ln_gamma, params.ln_beta);
}

namespace {

// One mutual block. use_ab/use_ba sever a direction; a severed side falls
// back to the residual projection of its value source so z_cat keeps the
// same width in every mode.
Tensor mutual_block(const Tensor& a, const Tensor& b, const MutualBlockParams& p,
                    const FusionConfig& cfg, bool use_ab, bool use_ba, bool training, Rng* rng,
                    const Tensor* kv_tokens_for_ba, AttnProbe* probe) {
  Tensor proj_a = add(matmul(a, p.proj_a_w), p.proj_a_b);
  Tensor proj_b = add(matmul(b, p.proj_b_w), p.proj_b_b);
  Tensor z_ab = use_ab ? cross_attend(a, b, p.ab, cfg.heads, probe) : proj_b;
  Tensor z_ba = use_ba ? cross_attend(b, kv_tokens_for_ba ? *kv_tokens_for_ba : a, p.ba,
                                      cfg.heads, probe)
                       : proj_a;
  Tensor z_cat = concat_cols({z_ab, z_ba, proj_a, proj_b});
  Tensor fused = relu(add(matmul(z_cat, p.mlp_w1), p.mlp_b1));
  fused = dropout(fused, cfg.dropout_p, training, rng);
  fused = relu(add(matmul(fused, p.mlp_w2), p.mlp_b2));
  return layer_norm(fused, p.ln_gamma, p.ln_beta);
}

}  // namespace

Tensor fuse(const Tensor& h_v, const Tensor& h_m, const FusionParams& params, bool training,
            Rng* rng, const Tensor* visual_tokens, AttnProbe* probe) {
  const FusionConfig& cfg = params.cfg;
  cfg.validate();
  bool use_ab = cfg.mode == FusionMode::kMutual || cfg.mode == FusionMode::kOneWayV2M;
  bool use_ba = cfg.mode == FusionMode::kMutual || cfg.mode == FusionMode::kOneWayM2V;
  const Tensor* ba_tokens = cfg.token_kv && visual_tokens ? visual_tokens : nullptr;
  Tensor z = mutual_block(h_v, h_m, params.main, cfg, use_ab, use_ba, training, rng, ba_tokens,
                          probe);
  // The concat baseline is attention-free, so the self-refinement stages
  // (which are attention blocks) do not apply.
  if (cfg.mode == FusionMode::kConcat) return z;
  for (const MutualBlockParams& block : params.refinements)
    z = mutual_block(z, z, block, cfg, true, true, training, rng, nullptr, probe);
  return z;
}

std::pair<double, double> modality_norms(const Tensor& h_v, const Tensor& h_m) {
  auto norm = [](const Tensor& t) {
    double s = 0.0;
    const double* p = t.data();
    for (std::size_t i = 0; i < t.numel(); ++i) s += p[i] * p[i];
    return std::sqrt(s);
  };
  return {norm(h_v), norm(h_m)};
}

}  // namespace mwp
