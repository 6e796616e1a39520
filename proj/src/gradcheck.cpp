#include "mwp/gradcheck.hpp"

#include <cmath>

#include "mwp/errors.hpp"
#include "mwp/fusion.hpp"
#include "mwp/head.hpp"
#include "mwp/meta_encoder.hpp"
#include "mwp/rng.hpp"
#include "mwp/vit.hpp"

namespace mwp {

double max_rel_grad_error(const GradCaseBuilder& build, Rng& rng, int* rerolls, double h,
                          double kink_threshold, int max_rerolls) {
  GradCheckSetup setup;
  bool found = false;
  int rolled = 0;
  for (int attempt = 0; attempt <= max_rerolls && !found; ++attempt) {
    setup = build(rng);
    Tape tape;
    {
      TapeScope scope(tape);
      Tensor loss = setup.forward();
      if (tape.min_kink_distance() < kink_threshold || (setup.accept && !setup.accept())) {
        ++rolled;
        continue;
      }
      tape.backward(loss);
    }
    found = true;
  }
  if (rerolls) *rerolls = rolled;
  if (!found)
    throw NumericError("gradient check could not find a sample away from activation kinks");

  double worst = 0.0;
  for (Tensor& leaf : setup.leaves) {
    const double* g = leaf.grad_data();
    double* d = leaf.data();
    for (std::size_t i = 0; i < leaf.numel(); ++i) {
      double saved = d[i];
      d[i] = saved + h;
      double up = setup.forward().item();
      d[i] = saved - h;
      double down = setup.forward().item();
      d[i] = saved;
      double numeric = (up - down) / (2.0 * h);
      double analytic = g ? g[i] : 0.0;
      double denom = std::fabs(analytic) + std::fabs(numeric);
      if (denom > 1e-8) {
        double rel = std::fabs(analytic - numeric) / denom;
        if (rel > worst) worst = rel;
      }
    }
  }
  return worst;
}

namespace {

Tensor leaf_uniform(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t = Tensor::zeros(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
  t.set_requires_grad(true);
  return t;
}

Tensor const_uniform(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t = Tensor::zeros(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

// Scalarizes a vector output with fixed random weights so every output
// coordinate influences the checked gradient.
Tensor weighted_sum(const Tensor& x, const Tensor& weights) { return sum_all(mul(x, weights)); }

GradCheckSetup case_matmul(Rng& rng) {
  GradCheckSetup s;
  Tensor a = leaf_uniform({3, 4}, rng, -1.0, 1.0);
  Tensor b = leaf_uniform({4, 2}, rng, -1.0, 1.0);
  Tensor w = const_uniform({3, 2}, rng, -1.0, 1.0);
  s.leaves = {a, b};
  s.forward = [=] { return weighted_sum(matmul(a, b), w); };
  return s;
}

GradCheckSetup case_layer_norm(Rng& rng) {
  GradCheckSetup s;
  Tensor x = leaf_uniform({3, 8}, rng, -2.0, 2.0);
  Tensor gamma = leaf_uniform({8}, rng, 0.5, 1.5);
  Tensor beta = leaf_uniform({8}, rng, -0.5, 0.5);
  Tensor w = const_uniform({3, 8}, rng, -1.0, 1.0);
  s.leaves = {x, gamma, beta};
  s.forward = [=] { return weighted_sum(layer_norm(x, gamma, beta), w); };
  return s;
}

GradCheckSetup case_unary(Rng& rng, Tensor (*op)(const Tensor&), double lo, double hi) {
  GradCheckSetup s;
  Tensor x = leaf_uniform({4, 6}, rng, lo, hi);
  Tensor w = const_uniform({4, 6}, rng, -1.0, 1.0);
  s.leaves = {x};
  s.forward = [=] { return weighted_sum(op(x), w); };
  return s;
}

GradCheckSetup case_softmax(Rng& rng) {
  GradCheckSetup s;
  Tensor x = leaf_uniform({3, 7}, rng, -3.0, 3.0);
  Tensor w = const_uniform({3, 7}, rng, -1.0, 1.0);
  s.leaves = {x};
  s.forward = [=] { return weighted_sum(softmax_lastdim(x), w); };
  return s;
}

CrossBlockParams small_cross(Rng& rng, int dim_q, int dim_kv, int attn_dim,
                             std::vector<Tensor>& leaves) {
  CrossBlockParams p;
  auto mk = [&](Shape shape) {
    Tensor t = leaf_uniform(shape, rng, -0.5, 0.5);
    leaves.push_back(t);
    return t;
  };
  p.wq = mk({static_cast<std::size_t>(dim_q), static_cast<std::size_t>(attn_dim)});
  p.wk = mk({static_cast<std::size_t>(dim_kv), static_cast<std::size_t>(attn_dim)});
  p.wv = mk({static_cast<std::size_t>(dim_kv), static_cast<std::size_t>(attn_dim)});
  p.wo = mk({static_cast<std::size_t>(attn_dim), static_cast<std::size_t>(attn_dim)});
  p.ln_gamma = mk({static_cast<std::size_t>(attn_dim)});
  p.ln_beta = mk({static_cast<std::size_t>(attn_dim)});
  return p;
}

GradCheckSetup case_attention_block(Rng& rng) {
  GradCheckSetup s;
  Tensor q = leaf_uniform({1, 6}, rng, -1.0, 1.0);
  Tensor kv = leaf_uniform({3, 5}, rng, -1.0, 1.0);
  CrossBlockParams p = small_cross(rng, 6, 5, 8, s.leaves);
  s.leaves.push_back(q);
  s.leaves.push_back(kv);
  Tensor w = const_uniform({1, 8}, rng, -1.0, 1.0);
  s.forward = [=] { return weighted_sum(cross_attend(q, kv, p, 2), w); };
  return s;
}

GradCheckSetup case_vit_block(Rng& rng) {
  GradCheckSetup s;
  ViTConfig cfg;
  cfg.image_side = 8;
  cfg.patch_side = 4;
  cfg.embed_dim = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.mlp_ratio = 2.0;
  cfg.dropout_p = 0.0;
  auto mk = [&](Shape shape, double a) {
    Tensor t = leaf_uniform(shape, rng, -a, a);
    s.leaves.push_back(t);
    return t;
  };
  ViTLayerParams layer;
  layer.ln1_gamma = mk({8}, 0.0);
  for (std::size_t i = 0; i < 8; ++i) layer.ln1_gamma.data()[i] += 1.0;
  layer.ln1_beta = mk({8}, 0.2);
  layer.wq = mk({8, 8}, 0.5);
  layer.wk = mk({8, 8}, 0.5);
  layer.wv = mk({8, 8}, 0.5);
  layer.wo = mk({8, 8}, 0.5);
  layer.ln2_gamma = mk({8}, 0.0);
  for (std::size_t i = 0; i < 8; ++i) layer.ln2_gamma.data()[i] += 1.0;
  layer.ln2_beta = mk({8}, 0.2);
  layer.ffn_w1 = mk({8, 16}, 0.5);
  layer.ffn_b1 = mk({1, 16}, 0.2);
  layer.ffn_w2 = mk({16, 8}, 0.5);
  layer.ffn_b2 = mk({1, 8}, 0.2);
  Tensor z = leaf_uniform({5, 8}, rng, -1.0, 1.0);
  s.leaves.push_back(z);
  Tensor w = const_uniform({5, 8}, rng, -1.0, 1.0);
  s.forward = [=] { return weighted_sum(encoder_block(z, layer, cfg), w); };
  return s;
}

GradCheckSetup case_meta_mlp(Rng& rng) {
  GradCheckSetup s;
  auto mk = [&](Shape shape, double a) {
    Tensor t = leaf_uniform(shape, rng, -a, a);
    s.leaves.push_back(t);
    return t;
  };
  MetaEncoderParams p;
  p.category_count = 4;
  p.table = mk({4, 6}, 0.5);
  p.w1 = mk({9, 12}, 0.5);
  p.b1 = mk({1, 12}, 0.2);
  p.w2 = mk({12, 10}, 0.5);
  p.b2 = mk({1, 10}, 0.2);
  p.w3 = mk({10, 6}, 0.5);
  p.b3 = mk({1, 6}, 0.2);
  p.wf = mk({12, 14}, 0.5);
  p.bf = mk({1, 14}, 0.2);
  Tensor features = leaf_uniform({1, 9}, rng, -1.5, 1.5);
  s.leaves.push_back(features);
  int category = static_cast<int>(rng.index(4));
  Tensor w = const_uniform({1, 14}, rng, -1.0, 1.0);
  s.forward = [=] { return weighted_sum(encode_meta_row(features, category, p), w); };
  return s;
}

GradCheckSetup case_fusion_stack(Rng& rng) {
  GradCheckSetup s;
  FusionConfig cfg;
  cfg.mode = FusionMode::kMutual;
  cfg.heads = 2;
  cfg.stages = 2;
  cfg.attn_dim = 8;
  cfg.fused_dim = 10;
  cfg.dropout_p = 0.0;
  auto mk = [&](Shape shape, double a) {
    Tensor t = leaf_uniform(shape, rng, -a, a);
    s.leaves.push_back(t);
    return t;
  };
  auto mk_block = [&](int dim_a, int dim_b) {
    MutualBlockParams p;
    p.ab = small_cross(rng, dim_a, dim_b, cfg.attn_dim, s.leaves);
    p.ba = small_cross(rng, dim_b, dim_a, cfg.attn_dim, s.leaves);
    p.proj_a_w = mk({static_cast<std::size_t>(dim_a), 8}, 0.5);
    p.proj_a_b = mk({1, 8}, 0.2);
    p.proj_b_w = mk({static_cast<std::size_t>(dim_b), 8}, 0.5);
    p.proj_b_b = mk({1, 8}, 0.2);
    p.mlp_w1 = mk({32, 10}, 0.5);
    p.mlp_b1 = mk({1, 10}, 0.2);
    p.mlp_w2 = mk({10, 10}, 0.5);
    p.mlp_b2 = mk({1, 10}, 0.2);
    p.ln_gamma = mk({10}, 0.0);
    for (std::size_t i = 0; i < 10; ++i) p.ln_gamma.data()[i] += 1.0;
    p.ln_beta = mk({10}, 0.2);
    return p;
  };
  FusionParams params;
  params.cfg = cfg;
  params.main = mk_block(6, 7);
  params.refinements.push_back(mk_block(10, 10));
  Tensor h_v = leaf_uniform({1, 6}, rng, -1.0, 1.0);
  Tensor h_m = leaf_uniform({1, 7}, rng, 0.0, 1.0);
  s.leaves.push_back(h_v);
  s.leaves.push_back(h_m);
  Tensor w = const_uniform({1, 10}, rng, -1.0, 1.0);
  s.forward = [=] { return weighted_sum(fuse(h_v, h_m, params, false, nullptr), w); };
  return s;
}

GradCheckSetup case_head(Rng& rng) {
  GradCheckSetup s;
  auto mk = [&](Shape shape, double a) {
    Tensor t = leaf_uniform(shape, rng, -a, a);
    s.leaves.push_back(t);
    return t;
  };
  HeadParams p;
  p.dropout_p = 0.0;
  p.w1 = mk({12, 10}, 0.5);
  p.b1 = mk({1, 10}, 0.2);
  p.w2 = mk({10, 6}, 0.5);
  p.b2 = mk({1, 6}, 0.2);
  p.w3 = mk({6, 1}, 0.5);
  p.b3 = mk({1, 1}, 0.2);
  Tensor z = leaf_uniform({1, 12}, rng, -1.0, 1.0);
  s.leaves.push_back(z);
  auto out = std::make_shared<double>(0.0);
  s.forward = [=] {
    Tensor y = predict_head(z, p);
    *out = y.item();
    return sum_all(y);
  };
  // the gradient contract only holds away from the output ReLU's dead zone
  s.accept = [out] { return *out > 0.0; };
  return s;
}

GradCheckSetup case_loss(Rng& rng, LossKind kind) {
  GradCheckSetup s;
  Tensor yhat = leaf_uniform({5, 1}, rng, 0.5, 3.0);
  Tensor y = const_uniform({5, 1}, rng, 0.5, 3.0);
  s.leaves = {yhat};
  s.forward = [=] { return compute_loss(kind, yhat, y); };
  return s;
}

}  // namespace

std::vector<GradCheckRow> run_gradcheck(int seeds_per_case, std::uint64_t seed) {
  if (seeds_per_case < 1) throw ConfigError("gradient check needs at least one seed per case");
  struct Case {
    const char* name;
    GradCaseBuilder build;
  };
  const std::vector<Case> cases = {
      {"matmul", case_matmul},
      {"layer_norm", case_layer_norm},
      {"gelu", [](Rng& r) { return case_unary(r, gelu, -2.0, 2.0); }},
      {"relu", [](Rng& r) { return case_unary(r, relu, -2.0, 2.0); }},
      {"softmax", case_softmax},
      {"attention_block", case_attention_block},
      {"vit_block", case_vit_block},
      {"meta_mlp", case_meta_mlp},
      {"fusion_stack", case_fusion_stack},
      {"head", case_head},
      {"loss_msle", [](Rng& r) { return case_loss(r, LossKind::kMsle); }},
      {"loss_mse", [](Rng& r) { return case_loss(r, LossKind::kMse); }},
      {"loss_l1", [](Rng& r) { return case_loss(r, LossKind::kMae); }},
  };

  std::vector<GradCheckRow> rows;
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    GradCheckRow row;
    row.name = cases[ci].name;
    row.tolerance = 1e-4;
    for (int k = 0; k < seeds_per_case; ++k) {
      Rng rng(mix_seed(mix_seed(seed, ci), static_cast<std::uint64_t>(k)));
      int rolled = 0;
      double err = max_rel_grad_error(cases[ci].build, rng, &rolled);
      row.seeds += 1;
      row.rerolls += rolled;
      if (err > row.max_rel_err) row.max_rel_err = err;
    }
    row.pass = row.max_rel_err < row.tolerance;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace mwp
