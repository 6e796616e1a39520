#pragma once

#include <string>

#include "mwp/features.hpp"
#include "mwp/params.hpp"
#include "mwp/tensor.hpp"

namespace mwp {

inline constexpr int kCategoryEmbedDim = 32;
inline constexpr int kMetaOutputDim = 256;

// Category lookup table plus a GELU bottleneck over the nine standardized
// physics features; the two branches are joined by one ReLU fusion map.
struct MetaEncoderParams {
  Tensor table;           // C x 32
  Tensor w1, b1;          // 9 -> 128
  Tensor w2, b2;          // 128 -> 64
  Tensor w3, b3;          // 64 -> 32
  Tensor wf, bf;          // 64 -> 256
  int category_count = 0;

  static MetaEncoderParams init(int category_count, Rng& rng, ParamStore& store,
                                const std::string& prefix = "meta.");
};

struct MetaTrace {
  Tensor e_c;  // 1 x 32
  Tensor e_n;  // 1 x 32
};

// h_m = ReLU(W_f [e_c; e_n] + b_f), length 256, entries >= 0.
Tensor encode_meta(const FeatureVector& f, const MetaEncoderParams& params,
                   MetaTrace* trace = nullptr);

// Same computation on an already-built feature row (used by the Shapley
// sweep, which perturbs standardized features directly).
Tensor encode_meta_row(const Tensor& features_1x9, int category_index,
                       const MetaEncoderParams& params, MetaTrace* trace = nullptr);

}  // namespace mwp
