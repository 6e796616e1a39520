#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "mwp/checkpoint.hpp"
#include "mwp/config.hpp"
#include "mwp/errors.hpp"
#include "mwp/rng.hpp"
#include "mwp/tensor.hpp"
#include "mwp/trainer.hpp"

using namespace mwp;
namespace fs = std::filesystem;

namespace {

Dataset tiny_dataset(int n = 64, std::uint64_t seed = 5) {
  GeneratorConfig g;
  g.n = n;
  g.seed = seed;
  return generate(g);
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.vit.embed_dim = 16;
  m.vit.layers = 1;
  m.vit.heads = 2;
  m.vit.patch_side = 8;
  m.fusion.attn_dim = 16;
  m.fusion.fused_dim = 32;
  m.fusion.stages = 1;
  m.fusion.heads = 2;
  return m;
}

TrainConfig tiny_train(int epochs = 2) {
  TrainConfig t;
  t.epochs = epochs;
  t.warmup_epochs = 1;
  t.batch_size = 16;
  t.seed = 11;
  return t;
}

SplitIndex tiny_split(const Dataset& ds) { return stratified_split(ds, 0.7, 0.15, 0.15, 7); }

Tensor param(ParamStore& store, const std::string& name, std::vector<double> v,
             ParamGroup group = ParamGroup::kFusionHead) {
  Shape shape{v.size()};
  Tensor t = Tensor::from_vector(shape, std::move(v));
  t.set_requires_grad(true);
  return store.add(name, t, group);
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / name; }

}  // namespace

TEST_CASE("cosine schedule hits its endpoints exactly") {
  double lr_max = 1e-4, lr_min = 1e-6;
  CHECK(cosine_lr(0.0, 30.0, lr_max, lr_min) == lr_max);
  CHECK(cosine_lr(30.0, 30.0, lr_max, lr_min) == lr_min);
  CHECK(cosine_lr(15.0, 30.0, lr_max, lr_min) ==
        doctest::Approx((lr_max + lr_min) / 2.0).epsilon(1e-12));
  CHECK(cosine_lr(0.0, 7.0, 0.5, 0.0) == 0.5);
  CHECK(cosine_lr(7.0, 7.0, 0.5, 0.0) == 0.0);
  for (int t = 1; t <= 30; ++t)
    CHECK(cosine_lr(t, 30.0, lr_max, lr_min) < cosine_lr(t - 1.0, 30.0, lr_max, lr_min));
}

TEST_CASE("warm restarts reset the schedule and warmup silences the backbone") {
  TrainConfig cfg;
  cfg.lr_head = 1e-3;
  cfg.lr_backbone = 1e-5;
  cfg.lr_min = 1e-7;
  cfg.restart_period = 4;
  cfg.restart_mult = 1.0;
  cfg.warmup_epochs = 2;

  CHECK(schedule_lr(0, cfg).head == cfg.lr_head);
  CHECK(schedule_lr(0, cfg).backbone == 0.0);
  CHECK(schedule_lr(1, cfg).backbone == 0.0);
  CHECK(schedule_lr(2, cfg).backbone == cosine_lr(2, 4, cfg.lr_backbone, cfg.lr_min));
  CHECK(schedule_lr(4, cfg).head == cfg.lr_head);  // new segment
  CHECK(schedule_lr(7, cfg).head == cosine_lr(3, 4, cfg.lr_head, cfg.lr_min));
  CHECK(schedule_lr(8, cfg).head == cfg.lr_head);

  cfg.restart_mult = 2.0;  // segments 4, 8, 16, ...
  CHECK(schedule_lr(4, cfg).head == cfg.lr_head);
  CHECK(schedule_lr(11, cfg).head == cosine_lr(7, 8, cfg.lr_head, cfg.lr_min));
  CHECK(schedule_lr(12, cfg).head == cfg.lr_head);
  CHECK_THROWS_AS(schedule_lr(-1, cfg), ConfigError);
}

TEST_CASE("one adamw step matches the update formula") {
  ParamStore store;
  Tensor p = param(store, "w", {1.0, -2.0, 0.5});
  std::vector<double> grad{0.3, -0.1, 0.0};
  double* g = p.ensure_grad();
  for (int i = 0; i < 3; ++i) g[i] = grad[i];

  OptimizerState opt;
  GroupLr lr{0.0, 1e-2};
  double wd = 0.1;
  std::vector<double> expect{1.0, -2.0, 0.5};
  for (int i = 0; i < 3; ++i) {
    double m = (1.0 - opt.beta1) * grad[i];
    double v = (1.0 - opt.beta2) * grad[i] * grad[i];
    double mhat = m / (1.0 - opt.beta1);
    double vhat = v / (1.0 - opt.beta2);
    expect[i] -= lr.head * mhat / (std::sqrt(vhat) + opt.eps);
    expect[i] -= lr.head * wd * expect[i];
  }
  adamw_step(store, opt, lr, wd);
  CHECK(opt.step == 1);
  for (int i = 0; i < 3; ++i) CHECK(p.data()[i] == expect[i]);
}

TEST_CASE("adamw with an all-zero gradient is pure decoupled decay") {
  ParamStore store;
  Tensor p = param(store, "w", {4.0, -8.0});
  p.ensure_grad();  // populated and zero
  OptimizerState opt;
  double lr = 3e-3, wd = 0.25;
  std::vector<double> expect{4.0, -8.0};
  for (double& e : expect) e -= lr * wd * e;
  adamw_step(store, opt, {0.0, lr}, wd);
  CHECK(p.data()[0] == expect[0]);
  CHECK(p.data()[1] == expect[1]);
}

TEST_CASE("adamw drives a quadratic toward its minimum") {
  ParamStore store;
  Tensor p = param(store, "w", {5.0, -3.0});
  OptimizerState opt;
  for (int step = 0; step < 400; ++step) {
    store.zero_grads();
    double* g = p.ensure_grad();
    for (int i = 0; i < 2; ++i) g[i] = 2.0 * p.data()[i];  // d/dw (w^2)
    adamw_step(store, opt, {0.0, 0.05}, 0.0);
  }
  CHECK(std::fabs(p.data()[0]) < 1e-2);
  CHECK(std::fabs(p.data()[1]) < 1e-2);
}

TEST_CASE("adamw skips frozen parameters entirely") {
  ParamStore store;
  Tensor frozen = param(store, "vit.block", {1.5, 2.5}, ParamGroup::kBackbone);
  Tensor live = param(store, "head.w", {1.0});
  live.ensure_grad()[0] = 0.7;
  OptimizerState opt;
  adamw_step(store, opt, {1e-3, 1e-3}, 0.5);
  CHECK(frozen.data()[0] == 1.5);  // no gradient step and no decay
  CHECK(frozen.data()[1] == 2.5);
  CHECK(opt.m.count("vit.block") == 0);
  CHECK(opt.v.count("vit.block") == 0);
  CHECK(opt.m.count("head.w") == 1);
  CHECK(live.data()[0] != 1.0);
}

TEST_CASE("a non-finite gradient aborts naming the parameter") {
  ParamStore store;
  Tensor p = param(store, "fusion.q_proj", {1.0, 2.0});
  double* g = p.ensure_grad();
  g[0] = std::numeric_limits<double>::quiet_NaN();
  OptimizerState opt;
  try {
    adamw_step(store, opt, {1e-3, 1e-3}, 0.0);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("fusion.q_proj") != std::string::npos);
  }
}

TEST_CASE("global norm clipping rescales to the cap and reports the raw norm") {
  ParamStore store;
  Tensor a = param(store, "a", {0.0});
  Tensor b = param(store, "b", {0.0});
  a.ensure_grad()[0] = 3.0;
  b.ensure_grad()[0] = 4.0;
  CHECK(clip_global_norm(store, 1.0) == doctest::Approx(5.0).epsilon(1e-15));
  double ga = a.grad_data()[0], gb = b.grad_data()[0];
  CHECK(std::sqrt(ga * ga + gb * gb) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ga / gb == doctest::Approx(3.0 / 4.0).epsilon(1e-12));

  a.ensure_grad()[0] = 3.0;
  b.ensure_grad()[0] = 4.0;
  CHECK(clip_global_norm(store, 0.0) == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(a.grad_data()[0] == 3.0);  // disabled cap leaves gradients alone
  CHECK(clip_global_norm(store, 10.0) == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(a.grad_data()[0] == 3.0);  // under the cap, untouched
}

TEST_CASE("ema shadows converge geometrically and swap is an involution") {
  ParamStore store;
  Tensor p = param(store, "w", {2.0, -1.0});
  EmaState ema = EmaState::init(store);
  CHECK(ema.shadow.at("w").data()[0] == 2.0);

  p.data()[0] = 10.0;
  p.data()[1] = 6.0;
  double d = 0.9;
  int k = 25;
  for (int i = 0; i < k; ++i) ema.update(store, d);
  double dk = std::pow(d, k);
  CHECK(ema.shadow.at("w").data()[0] ==
        doctest::Approx(dk * 2.0 + (1.0 - dk) * 10.0).epsilon(1e-12));
  CHECK(ema.shadow.at("w").data()[1] ==
        doctest::Approx(dk * -1.0 + (1.0 - dk) * 6.0).epsilon(1e-12));

  EmaState frozen = EmaState::init(store);
  p.data()[0] = 123.0;
  frozen.update(store, 1.0);  // decay 1 keeps the shadow
  CHECK(frozen.shadow.at("w").data()[0] == 10.0);
  frozen.update(store, 0.0);  // decay 0 copies the parameter
  CHECK(frozen.shadow.at("w").data()[0] == 123.0);

  double s0 = ema.shadow.at("w").data()[0];
  double w0 = p.data()[0];
  ema.swap_into(store);
  CHECK(p.data()[0] == s0);
  CHECK(ema.shadow.at("w").data()[0] == w0);
  ema.swap_into(store);
  CHECK(p.data()[0] == w0);
  CHECK(ema.shadow.at("w").data()[0] == s0);
}

TEST_CASE("train config rejects contradictory settings") {
  auto bad = [](auto&& mutate) {
    TrainConfig t;
    mutate(t);
    CHECK_THROWS_AS(t.validate(), ConfigError);
  };
  bad([](TrainConfig& t) { t.epochs = 0; });
  bad([](TrainConfig& t) { t.warmup_epochs = -1; });
  bad([](TrainConfig& t) { t.batch_size = 0; });
  bad([](TrainConfig& t) { t.lr_head = 0.0; });
  bad([](TrainConfig& t) { t.lr_backbone = -1e-6; });
  bad([](TrainConfig& t) { t.lr_min = 1.0; });
  bad([](TrainConfig& t) { t.restart_period = 0; });
  bad([](TrainConfig& t) { t.restart_mult = 0.5; });
  bad([](TrainConfig& t) { t.weight_decay = -0.1; });
  bad([](TrainConfig& t) { t.ema_decay = 1.5; });
  bad([](TrainConfig& t) { t.clip_norm = -1.0; });
  TrainConfig ok;
  ok.warmup_epochs = ok.epochs + 5;  // a run that never unfreezes is legal
  CHECK_NOTHROW(ok.validate());
}

TEST_CASE("train rejects unusable splits and category mismatches") {
  Dataset ds = tiny_dataset();
  SplitIndex split = tiny_split(ds);
  ModelConfig mcfg = tiny_model();
  TrainConfig tcfg = tiny_train(1);

  SplitIndex empty_train = split;
  empty_train.train.clear();
  CHECK_THROWS_AS(train(ds, empty_train, mcfg, tcfg), ConfigError);

  SplitIndex empty_val = split;
  empty_val.val.clear();
  CHECK_THROWS_AS(train(ds, empty_val, mcfg, tcfg), ConfigError);

  ModelConfig wrong = mcfg;
  wrong.categories = 3;
  CHECK_THROWS_AS(train(ds, split, wrong, tcfg), ConfigError);
}

TEST_CASE("training logs one row per epoch and repeats bitwise") {
  Dataset ds = tiny_dataset();
  SplitIndex split = tiny_split(ds);
  ModelConfig mcfg = tiny_model();
  TrainConfig tcfg = tiny_train(3);

  TrainResult a = train(ds, split, mcfg, tcfg);
  TrainResult b = train(ds, split, mcfg, tcfg);
  REQUIRE(a.log.size() == 3);
  REQUIRE(b.log.size() == 3);
  CHECK_FALSE(a.aborted);
  CHECK(a.best_updated);
  CHECK(a.log[0].phase == 1);
  CHECK(a.log[1].phase == 2);
  CHECK(a.log[0].lr_backbone == 0.0);
  CHECK(a.log[1].lr_backbone > 0.0);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(epoch_row_csv(a.log[i]) == epoch_row_csv(b.log[i]));
    CHECK(a.log[i].epoch == static_cast<int>(i) + 1);
  }

  fs::path pa = temp_path("mwp_det_a.ckpt"), pb = temp_path("mwp_det_b.ckpt");
  save_checkpoint(pa, a.last);
  save_checkpoint(pb, b.last);
  CHECK(file_bytes(pa) == file_bytes(pb));
  fs::remove(pa);
  fs::remove(pb);

  std::string header = epoch_log_header();
  CHECK(header.substr(0, 12) == "epoch,phase,");
  fs::path log_path = temp_path("mwp_epochs.csv");
  write_epoch_log(log_path, a.log);
  std::ifstream in(log_path);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 4);
  fs::remove(log_path);
}

TEST_CASE("a run that never leaves warmup keeps the backbone at initialization") {
  Dataset ds = tiny_dataset();
  SplitIndex split = tiny_split(ds);
  ModelConfig mcfg = tiny_model();
  TrainConfig tcfg = tiny_train(2);
  tcfg.warmup_epochs = 99;

  TrainResult tr = train(ds, split, mcfg, tcfg);
  MwpModel fresh = MwpModel::init(mcfg, tcfg.seed);
  std::uint64_t fresh_backbone = param_group_hash(fresh.store, ParamGroup::kBackbone);
  std::uint64_t fresh_head = param_group_hash(fresh.store, ParamGroup::kFusionHead);

  LoadedModel lm = model_from_checkpoint(tr.last, false);
  CHECK(param_group_hash(lm.model.store, ParamGroup::kBackbone) == fresh_backbone);
  CHECK(param_group_hash(lm.model.store, ParamGroup::kFusionHead) != fresh_head);
  for (const std::string& name : fresh.store.names_in(ParamGroup::kBackbone)) {
    CHECK(tr.last.opt_m.count(name) == 0);  // optimizer never saw it
    CHECK(tr.last.opt_v.count(name) == 0);
  }

  TrainConfig unfrozen = tiny_train(2);
  unfrozen.warmup_epochs = 0;
  TrainResult tr2 = train(ds, split, mcfg, unfrozen);
  LoadedModel lm2 = model_from_checkpoint(tr2.last, false);
  CHECK(param_group_hash(lm2.model.store, ParamGroup::kBackbone) != fresh_backbone);
}

TEST_CASE("resuming at an epoch boundary reproduces the uninterrupted run bitwise") {
  Dataset ds = tiny_dataset();
  SplitIndex split = tiny_split(ds);
  ModelConfig mcfg = tiny_model();

  TrainResult full = train(ds, split, mcfg, tiny_train(3));

  TrainResult part = train(ds, split, mcfg, tiny_train(2));
  fs::path mid = temp_path("mwp_resume_mid.ckpt");
  save_checkpoint(mid, part.last);
  Checkpoint loaded = load_checkpoint(mid);
  TrainResult resumed = train(ds, split, mcfg, tiny_train(3), &loaded);
  REQUIRE_FALSE(resumed.aborted);
  CHECK(resumed.log.size() == 1);  // only the new epoch

  fs::path pf = temp_path("mwp_resume_full.ckpt"), pr = temp_path("mwp_resume_res.ckpt");
  save_checkpoint(pf, full.last);
  save_checkpoint(pr, resumed.last);
  CHECK(file_bytes(pf) == file_bytes(pr));
  if (resumed.best_updated) {
    save_checkpoint(pf, full.best);
    save_checkpoint(pr, resumed.best);
    CHECK(file_bytes(pf) == file_bytes(pr));
  }
  fs::remove(mid);
  fs::remove(pf);
  fs::remove(pr);
}

TEST_CASE("resume rejects a foreign split and an already-covered epoch range") {
  Dataset ds = tiny_dataset();
  SplitIndex split = tiny_split(ds);
  ModelConfig mcfg = tiny_model();
  TrainResult tr = train(ds, split, mcfg, tiny_train(2));

  Checkpoint wrong = tr.last;
  wrong.split_hash ^= 0xdeadbeefull;
  try {
    train(ds, split, mcfg, tiny_train(3), &wrong);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find(std::to_string(wrong.split_hash)) != std::string::npos);
  }

  CHECK_THROWS_AS(train(ds, split, mcfg, tiny_train(2), &tr.last), ConfigError);
}

TEST_CASE("an exploding resume hands back the resume point as last good state") {
  Dataset ds = tiny_dataset();
  SplitIndex split = tiny_split(ds);
  ModelConfig mcfg = tiny_model();
  TrainResult sane = train(ds, split, mcfg, tiny_train(2));

  TrainConfig exploding = tiny_train(3);
  exploding.lr_head = 1e18;
  exploding.lr_backbone = 1e18;
  std::ostringstream sink;
  TrainResult boom = train(ds, split, mcfg, exploding, &sane.last, &sink);
  CHECK(boom.aborted);
  CHECK(boom.abort_reason.find("non-finite") != std::string::npos);

  fs::path pa = temp_path("mwp_boom_src.ckpt"), pb = temp_path("mwp_boom_last.ckpt");
  save_checkpoint(pa, sane.last);
  save_checkpoint(pb, boom.last);
  CHECK(file_bytes(pa) == file_bytes(pb));
  fs::remove(pa);
  fs::remove(pb);
}

TEST_CASE("checkpoints round-trip bitwise through save and load") {
  Dataset ds = tiny_dataset();
  SplitIndex split = tiny_split(ds);
  TrainResult tr = train(ds, split, tiny_model(), tiny_train(1));

  fs::path p1 = temp_path("mwp_rt1.ckpt"), p2 = temp_path("mwp_rt2.ckpt");
  save_checkpoint(p1, tr.last);
  Checkpoint back = load_checkpoint(p1);
  save_checkpoint(p2, back);
  CHECK(file_bytes(p1) == file_bytes(p2));

  CHECK(back.epoch == tr.last.epoch);
  CHECK(back.step == tr.last.step);
  CHECK(back.best_val_mae == tr.last.best_val_mae);
  CHECK(back.split_hash == tr.last.split_hash);
  CHECK(back.vocab == tr.last.vocab);
  CHECK(back.config == tr.last.config);
  for (int i = 0; i < kSelectedFeatureCount; ++i) {
    CHECK(back.standardizer.mean[i] == tr.last.standardizer.mean[i]);
    CHECK(back.standardizer.stdev[i] == tr.last.standardizer.stdev[i]);
  }
  REQUIRE(back.params.size() == tr.last.params.size());
  for (const auto& [name, t] : tr.last.params) {
    REQUIRE(back.params.count(name) == 1);
    const Tensor& bt = back.params.at(name);
    REQUIRE(bt.shape() == t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) CHECK(bt.data()[i] == t.data()[i]);
  }
  fs::remove(p1);
  fs::remove(p2);
}

TEST_CASE("malformed checkpoint files are rejected with context") {
  fs::path p = temp_path("mwp_bad.ckpt");
  std::ofstream(p) << "NOTACKPT 1\n";
  CHECK_THROWS_AS(load_checkpoint(p), ValidationError);
  fs::remove(p);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.ckpt"), IoError);
}

TEST_CASE("a loaded model predicts deterministically and ema differs from raw") {
  Dataset ds = tiny_dataset();
  SplitIndex split = tiny_split(ds);
  TrainResult tr = train(ds, split, tiny_model(), tiny_train(2));

  LoadedModel ema1 = model_from_checkpoint(tr.best, true);
  LoadedModel ema2 = model_from_checkpoint(tr.best, true);
  LoadedModel raw = model_from_checkpoint(tr.best, false);
  CHECK(ema1.baseline_category >= 0);
  CHECK(ema1.baseline_category < static_cast<int>(ema1.vocab.size()));

  const WasteRecord& r = ds.records.front();
  FeatureVector f =
      ema1.standardizer.transform(compute_features(r.geometry, r.category_index));
  double w1 = ema1.model.predict_weight(r.image, f);
  double w2 = ema2.model.predict_weight(r.image, f);
  double wr = raw.model.predict_weight(r.image, f);
  CHECK(w1 == w2);
  CHECK(w1 != wr);  // averaged weights trail the live ones
  CHECK(w1 >= 0.0);
}
