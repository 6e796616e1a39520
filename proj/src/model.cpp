#include "mwp/model.hpp"

#include <cmath>

#include "mwp/errors.hpp"
#include "mwp/rng.hpp"

namespace mwp {

void ModelConfig::validate() const {
  vit.validate();
  fusion.validate();
  if (categories <= 0) throw ConfigError("category count must be positive");
  if (head_dropout < 0.0 || head_dropout >= 1.0)
    throw ConfigError("head dropout must be in [0, 1)");
}

MwpModel MwpModel::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  MwpModel m;
  m.cfg = cfg;
  Rng rng(mix_seed(seed, 0x4D4F44454Cull));  // independent init stream
  m.vit = ViTParams::init(cfg.vit, rng, m.store);
  m.meta = MetaEncoderParams::init(cfg.categories, rng, m.store);
  m.fusion = FusionParams::init(cfg.vit.embed_dim, kMetaOutputDim, cfg.fusion, rng, m.store);
  m.head = HeadParams::init(cfg.fusion.fused_dim, rng, m.store);
  m.head.dropout_p = cfg.head_dropout;
  return m;
}

Tensor MwpModel::forward(const Image& img, const FeatureVector& f, bool training, Rng* rng,
                         Trace* trace) const {
  Image normalized = normalize_imagenet(img);
  Tensor tokens;
  Tensor h_v = encode(normalized, vit, training, rng, nullptr,
                      cfg.fusion.token_kv ? &tokens : nullptr);
  Tensor h_m = encode_meta(f, meta);
  Tensor fused = fuse(h_v, h_m, fusion, training, rng,
                      cfg.fusion.token_kv ? &tokens : nullptr);
  Tensor out = predict_head(fused, head, training, rng);
  if (trace) {
    trace->h_v = h_v;
    trace->h_m = h_m;
    trace->fused = fused;
    trace->output = out;
    auto norms = modality_norms(h_v, h_m);
    trace->norm_v = norms.first;
    trace->norm_m = norms.second;
  }
  return out;
}

Tensor MwpModel::encode_visual(const Image& img, Tensor* tokens_out) const {
  Image normalized = normalize_imagenet(img);
  return encode(normalized, vit, false, nullptr, nullptr,
                cfg.fusion.token_kv ? tokens_out : nullptr);
}

Tensor MwpModel::forward_with_visual(const Tensor& h_v, const Tensor* tokens,
                                     const FeatureVector& f, Trace* trace) const {
  Tensor h_m = encode_meta(f, meta);
  Tensor fused = fuse(h_v, h_m, fusion, false, nullptr, cfg.fusion.token_kv ? tokens : nullptr);
  Tensor out = predict_head(fused, head, false, nullptr);
  if (trace) {
    trace->h_v = h_v;
    trace->h_m = h_m;
    trace->fused = fused;
    trace->output = out;
    auto norms = modality_norms(h_v, h_m);
    trace->norm_v = norms.first;
    trace->norm_m = norms.second;
  }
  return out;
}

double MwpModel::predict_weight(const Image& img, const FeatureVector& f) const {
  double out = forward(img, f).item();
  if (!std::isfinite(out)) throw NumericError("model produced a non-finite prediction");
  return cfg.log_target ? target_log_inverse(out) : out;
}

}  // namespace mwp
