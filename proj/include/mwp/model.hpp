#pragma once

#include <cstdint>

#include "mwp/features.hpp"
#include "mwp/fusion.hpp"
#include "mwp/head.hpp"
#include "mwp/image.hpp"
#include "mwp/meta_encoder.hpp"
#include "mwp/params.hpp"
#include "mwp/vit.hpp"

namespace mwp {

struct ModelConfig {
  ViTConfig vit;
  FusionConfig fusion;
  int categories = 11;
  double head_dropout = 0.1;
  // Regress ln(1+y) instead of the physical weight; predictions are mapped
  // back with expm1. Training losses are still computed in weight space, so
  // this only reparameterizes the output surface: adaptive steps of ~1e-4
  // per coordinate can reach hundred-kg magnitudes through the exponential,
  // which a raw-kg head cannot do in a short run.
  bool log_target = true;

  void validate() const;
};

// Visual encoder + metadata encoder + mutual fusion + regression head over a
// single named parameter registry.
struct MwpModel {
  ModelConfig cfg;
  ParamStore store;
  ViTParams vit;
  MetaEncoderParams meta;
  FusionParams fusion;
  HeadParams head;

  static MwpModel init(const ModelConfig& cfg, std::uint64_t seed);

  struct Trace {
    Tensor h_v, h_m, fused, output;
    double norm_v = 0.0, norm_m = 0.0;
  };

  // Raw [0,1] image in, channel normalization applied internally. Returns the
  // 1x1 model output (weight, or its log when log_target is set).
  Tensor forward(const Image& img, const FeatureVector& f, bool training = false,
                 Rng* rng = nullptr, Trace* trace = nullptr) const;

  // Visual encoding of a normalized image; tokens filled only when the
  // fusion config routes attention over the token sequence.
  Tensor encode_visual(const Image& img, Tensor* tokens_out = nullptr) const;

  // Eval-mode forward from a precomputed visual descriptor; lets attribution
  // sweeps vary the metadata without re-encoding the image.
  Tensor forward_with_visual(const Tensor& h_v, const Tensor* tokens, const FeatureVector& f,
                             Trace* trace = nullptr) const;

  // Eval-mode weight in kg (applies the inverse target transform if needed).
  double predict_weight(const Image& img, const FeatureVector& f) const;
};

}  // namespace mwp
