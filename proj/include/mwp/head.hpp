#pragma once

#include <string>

#include "mwp/params.hpp"
#include "mwp/tensor.hpp"

namespace mwp {

class Rng;

// Tapering regression head: fused_dim -> 128 -> 64 -> 1, ReLU throughout,
// dropout after the first hidden activation, final ReLU keeps the output
// non-negative.
struct HeadParams {
  Tensor w1, b1;
  Tensor w2, b2;
  Tensor w3, b3;
  double dropout_p = 0.1;

  static HeadParams init(int fused_dim, Rng& rng, ParamStore& store,
                         const std::string& prefix = "head.");
};

// Scalar (1x1) prediction, >= 0.
Tensor predict_head(const Tensor& z, const HeadParams& params, bool training = false,
                    Rng* rng = nullptr);

enum class LossKind { kMsle, kMse, kMae };
LossKind loss_from_string(const std::string& s);
std::string to_string(LossKind kind);

// Batch means over column vectors of predictions and targets. msle requires
// non-negative inputs and equals mse applied to ln1p-transformed values.
Tensor msle_loss(const Tensor& yhat, const Tensor& y);
Tensor mse_loss(const Tensor& yhat, const Tensor& y);
Tensor mae_loss(const Tensor& yhat, const Tensor& y);
Tensor compute_loss(LossKind kind, const Tensor& yhat, const Tensor& y);

}  // namespace mwp
