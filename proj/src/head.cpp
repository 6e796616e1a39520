#include "mwp/head.hpp"

#include "mwp/errors.hpp"
#include "mwp/rng.hpp"

namespace mwp {

HeadParams HeadParams::init(int fused_dim, Rng& rng, ParamStore& store,
                            const std::string& prefix) {
  if (fused_dim <= 0) throw ConfigError("head input dim must be positive");
  auto sf = static_cast<std::size_t>(fused_dim);
  HeadParams p;
  p.w1 = store.add(prefix + "w1", xavier_uniform({sf, 128}, sf, 128, rng),
                   ParamGroup::kFusionHead);
  p.b1 = store.add(prefix + "b1", Tensor::zeros({1, 128}), ParamGroup::kFusionHead);
  p.w2 = store.add(prefix + "w2", xavier_uniform({128, 64}, 128, 64, rng),
                   ParamGroup::kFusionHead);
  p.b2 = store.add(prefix + "b2", Tensor::zeros({1, 64}), ParamGroup::kFusionHead);
  p.w3 = store.add(prefix + "w3", xavier_uniform({64, 1}, 64, 1, rng), ParamGroup::kFusionHead);
  p.b3 = store.add(prefix + "b3", Tensor::zeros({1, 1}), ParamGroup::kFusionHead);
  return p;
}

Tensor predict_head(const Tensor& z, const HeadParams& params, bool training, Rng* rng) {
  Tensor h = relu(add(matmul(z, params.w1), params.b1));
  h = dropout(h, params.dropout_p, training, rng);
  h = relu(add(matmul(h, params.w2), params.b2));
  return relu(add(matmul(h, params.w3), params.b3));
}

LossKind loss_from_string(const std::string& s) {
  if (s == "msle") return LossKind::kMsle;
  if (s == "mse") return LossKind::kMse;
  if (s == "l1" || s == "mae") return LossKind::kMae;
  throw ConfigError("unknown loss '" + s + "' (expected msle|mse|l1)");
}

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kMsle: return "msle";
    case LossKind::kMse: return "mse";
    case LossKind::kMae: return "l1";
  }
  throw ConfigError("unknown loss value");
}

namespace {

void check_same_shape(const Tensor& yhat, const Tensor& y) {
  if (yhat.shape() != y.shape())
    throw DimensionError("loss inputs differ in shape: " + shape_str(yhat.shape()) + " vs " +
                         shape_str(y.shape()));
  if (yhat.numel() == 0) throw DimensionError("loss inputs are empty");
}

}  // namespace

Tensor msle_loss(const Tensor& yhat, const Tensor& y) {
  check_same_shape(yhat, y);
  for (std::size_t i = 0; i < yhat.numel(); ++i) {
    if (yhat.data()[i] < 0.0 || y.data()[i] < 0.0)
      throw DomainError("squared log error requires non-negative predictions and targets");
  }
  return mse_loss(ln1p(yhat), ln1p(y));
}

Tensor mse_loss(const Tensor& yhat, const Tensor& y) {
  check_same_shape(yhat, y);
  Tensor d = sub(yhat, y);
  return mean_all(mul(d, d));
}

Tensor mae_loss(const Tensor& yhat, const Tensor& y) {
  check_same_shape(yhat, y);
  return mean_all(abs(sub(yhat, y)));
}

Tensor compute_loss(LossKind kind, const Tensor& yhat, const Tensor& y) {
  switch (kind) {
    case LossKind::kMsle: return msle_loss(yhat, y);
    case LossKind::kMse: return mse_loss(yhat, y);
    case LossKind::kMae: return mae_loss(yhat, y);
  }
  throw ConfigError("unknown loss value");
}

}  // namespace mwp
