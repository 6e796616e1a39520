#include "mwp/meta_encoder.hpp"

#include <cmath>

#include "mwp/errors.hpp"
#include "mwp/rng.hpp"

namespace mwp {

MetaEncoderParams MetaEncoderParams::init(int category_count, Rng& rng, ParamStore& store,
                                          const std::string& prefix) {
  if (category_count <= 0) throw ConfigError("category count must be positive");
  MetaEncoderParams p;
  p.category_count = category_count;
  const std::size_t c = static_cast<std::size_t>(category_count);
  p.table = store.add(prefix + "table", normal_init({c, 32}, 0.02, rng), ParamGroup::kFusionHead);
  p.w1 = store.add(prefix + "w1", xavier_uniform({9, 128}, 9, 128, rng), ParamGroup::kFusionHead);
  p.b1 = store.add(prefix + "b1", Tensor::zeros({1, 128}), ParamGroup::kFusionHead);
  p.w2 =
      store.add(prefix + "w2", xavier_uniform({128, 64}, 128, 64, rng), ParamGroup::kFusionHead);
  p.b2 = store.add(prefix + "b2", Tensor::zeros({1, 64}), ParamGroup::kFusionHead);
  p.w3 = store.add(prefix + "w3", xavier_uniform({64, 32}, 64, 32, rng), ParamGroup::kFusionHead);
  p.b3 = store.add(prefix + "b3", Tensor::zeros({1, 32}), ParamGroup::kFusionHead);
  p.wf =
      store.add(prefix + "wf", xavier_uniform({64, 256}, 64, 256, rng), ParamGroup::kFusionHead);
  p.bf = store.add(prefix + "bf", Tensor::zeros({1, 256}), ParamGroup::kFusionHead);
  return p;
}

Tensor encode_meta_row(const Tensor& features_1x9, int category_index,
                       const MetaEncoderParams& params, MetaTrace* trace) {
  if (features_1x9.ndim() != 2 || features_1x9.rows() != 1 || features_1x9.cols() != 9)
    throw DimensionError("metadata encoder expects a 1x9 feature row, got " +
                         shape_str(features_1x9.shape()));
  if (category_index < 0 || category_index >= params.category_count)
    throw ValidationError("category index " + std::to_string(category_index) +
                          " outside [0, " + std::to_string(params.category_count) + ")");

  Tensor e_c = select_row(params.table, static_cast<std::size_t>(category_index));
  Tensor h = gelu(add(matmul(features_1x9, params.w1), params.b1));
  h = gelu(add(matmul(h, params.w2), params.b2));
  Tensor e_n = gelu(add(matmul(h, params.w3), params.b3));
  if (trace) {
    trace->e_c = e_c;
    trace->e_n = e_n;
  }
  Tensor joint = concat_cols({e_c, e_n});
  return relu(add(matmul(joint, params.wf), params.bf));
}

Tensor encode_meta(const FeatureVector& f, const MetaEncoderParams& params, MetaTrace* trace) {
  std::vector<double> vals(f.values.begin(), f.values.end());
  for (double v : vals)
    if (!std::isfinite(v)) throw ValidationError("metadata encoder requires finite features");
  Tensor row = Tensor::from_vector({1, 9}, std::move(vals));
  return encode_meta_row(row, f.category_index, params, trace);
}

}  // namespace mwp
