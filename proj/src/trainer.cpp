#include "mwp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <unordered_map>

#include "mwp/config.hpp"
#include "mwp/errors.hpp"
#include "mwp/rng.hpp"

namespace mwp {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  // warmup_epochs >= epochs is allowed: the run simply never leaves phase 1.
  if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (lr_head <= 0.0) throw ConfigError("lr_head must be positive");
  if (lr_backbone <= 0.0) throw ConfigError("lr_backbone must be positive");
  if (lr_min < 0.0) throw ConfigError("lr_min must be non-negative");
  if (lr_min > lr_backbone || lr_min > lr_head)
    throw ConfigError("lr_min must not exceed the group learning rates");
  if (restart_period < 1) throw ConfigError("restart_period must be at least 1");
  if (restart_mult < 1.0) throw ConfigError("restart_mult must be at least 1");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (ema_decay < 0.0 || ema_decay > 1.0) throw ConfigError("ema_decay must be in [0, 1]");
  if (clip_norm < 0.0) throw ConfigError("clip_norm must be non-negative");
}

double cosine_lr(double t, double period, double lr_max, double lr_min) {
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(3.141592653589793 * t / period));
}

GroupLr schedule_lr(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw ConfigError("epoch must be non-negative");
  double t = epoch;
  double period = cfg.restart_period;
  while (t >= period) {
    t -= period;
    period *= cfg.restart_mult;
  }
  GroupLr lr;
  lr.head = cosine_lr(t, period, cfg.lr_head, cfg.lr_min);
  lr.backbone =
      epoch < cfg.warmup_epochs ? 0.0 : cosine_lr(t, period, cfg.lr_backbone, cfg.lr_min);
  return lr;
}

void adamw_step(ParamStore& store, OptimizerState& opt, const GroupLr& lr, double weight_decay) {
  opt.step += 1;
  double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  for (const std::string& name : store.names()) {
    Tensor& p = store.at(name);
    const double* g = p.grad_data();
    if (!g) continue;  // frozen or untouched this step
    for (std::size_t i = 0; i < p.numel(); ++i)
      if (!std::isfinite(g[i])) throw NumericError("non-finite gradient in " + name);
    auto mit = opt.m.find(name);
    if (mit == opt.m.end()) {
      mit = opt.m.emplace(name, Tensor::zeros(p.shape())).first;
      opt.v.emplace(name, Tensor::zeros(p.shape()));
    }
    double* m = mit->second.data();
    double* v = opt.v.at(name).data();
    double rate = store.group_of(name) == ParamGroup::kBackbone ? lr.backbone : lr.head;
    double* w = p.data();
    for (std::size_t i = 0; i < p.numel(); ++i) {
      m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
      v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      w[i] -= rate * mhat / (std::sqrt(vhat) + opt.eps);
      w[i] -= rate * weight_decay * w[i];
    }
  }
}

EmaState EmaState::init(const ParamStore& store) {
  EmaState ema;
  for (const std::string& name : store.names()) {
    const Tensor& p = store.at(name);
    ema.shadow.emplace(name, Tensor::from_vector(
                                 p.shape(), std::vector<double>(p.data(), p.data() + p.numel())));
  }
  return ema;
}

void EmaState::update(const ParamStore& store, double decay) {
  if (decay < 0.0 || decay > 1.0) throw ConfigError("ema decay must be in [0, 1]");
  for (const std::string& name : store.names()) {
    const Tensor& p = store.at(name);
    auto it = shadow.find(name);
    if (it == shadow.end() || it->second.shape() != p.shape())
      throw DimensionError("ema shadow does not match parameter " + name);
    double* s = it->second.data();
    const double* w = p.data();
    for (std::size_t i = 0; i < p.numel(); ++i) s[i] = decay * s[i] + (1.0 - decay) * w[i];
  }
}

void EmaState::swap_into(ParamStore& store) {
  for (const std::string& name : store.names()) {
    Tensor& p = store.at(name);
    auto it = shadow.find(name);
    if (it == shadow.end() || it->second.shape() != p.shape())
      throw DimensionError("ema shadow does not match parameter " + name);
    std::swap(p.node()->data, it->second.node()->data);
  }
}

double clip_global_norm(ParamStore& store, double max_norm) {
  double sq = 0.0;
  for (const std::string& name : store.names()) {
    const Tensor& p = store.at(name);
    const double* g = p.grad_data();
    if (!g) continue;
    for (std::size_t i = 0; i < p.numel(); ++i) sq += g[i] * g[i];
  }
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    double scale = max_norm / norm;
    for (const std::string& name : store.names()) {
      Tensor& p = store.at(name);
      if (!p.grad_data()) continue;
      double* g = p.ensure_grad();
      for (std::size_t i = 0; i < p.numel(); ++i) g[i] *= scale;
    }
  }
  return norm;
}

std::uint64_t param_group_hash(const ParamStore& store, ParamGroup group) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const std::string& name : store.names_in(group)) {
    h = fnv1a64(name, h);
    const Tensor& p = store.at(name);
    h = fnv1a64(p.data(), p.numel() * sizeof(double), h);
  }
  return h;
}

std::string epoch_log_header() {
  return "epoch,phase,lr_backbone,lr_head,train_loss,val_loss,val_mae,val_mape";
}

static std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string epoch_row_csv(const EpochRow& row) {
  return std::to_string(row.epoch) + "," + std::to_string(row.phase) + "," +
         fmt_g(row.lr_backbone) + "," + fmt_g(row.lr_head) + "," + fmt_g(row.train_loss) + "," +
         fmt_g(row.val_loss) + "," + fmt_g(row.val_mae) + "," + fmt_g(row.val_mape);
}

void write_epoch_log(const std::filesystem::path& path, const std::vector<EpochRow>& rows) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write epoch log: " + path.string());
  os << epoch_log_header() << "\n";
  for (const EpochRow& r : rows) os << epoch_row_csv(r) << "\n";
}

namespace {

Tensor detach_copy(const Tensor& t) {
  return Tensor::from_vector(t.shape(), std::vector<double>(t.data(), t.data() + t.numel()));
}

struct BestStats {
  int epoch = 0;
  double val_mae = std::numeric_limits<double>::infinity();
};

Checkpoint snapshot(const MwpModel& model, const OptimizerState& opt, const EmaState& ema,
                    const Standardizer& stz, int completed_epochs, const BestStats& best,
                    std::uint64_t shash, const std::string& rng_state,
                    const std::vector<std::string>& vocab, const ModelConfig& mcfg,
                    const TrainConfig& tcfg, int baseline_category) {
  Checkpoint c;
  c.epoch = completed_epochs;
  c.step = opt.step;
  c.best_epoch = best.epoch;
  c.best_val_mae = best.val_mae;
  c.split_hash = shash;
  c.rng_state = rng_state;
  c.vocab = vocab;
  c.config = model_config_to_kv(mcfg);
  for (const auto& [k, v] : train_config_to_kv(tcfg)) c.config[k] = v;
  c.config["explain.baseline_category"] = std::to_string(baseline_category);
  c.standardizer = stz;
  for (const std::string& name : model.store.names())
    c.params.emplace(name, detach_copy(model.store.at(name)));
  for (const auto& [n, t] : opt.m) c.opt_m.emplace(n, detach_copy(t));
  for (const auto& [n, t] : opt.v) c.opt_v.emplace(n, detach_copy(t));
  for (const auto& [n, t] : ema.shadow) c.ema.emplace(n, detach_copy(t));
  return c;
}

void restore_named(const std::map<std::string, Tensor>& src, ParamStore& store) {
  for (const std::string& name : store.names()) {
    auto it = src.find(name);
    if (it == src.end()) throw ValidationError("checkpoint is missing parameter " + name);
    Tensor& p = store.at(name);
    if (it->second.shape() != p.shape())
      throw DimensionError("checkpoint shape mismatch for " + name + ": stored " +
                           shape_str(it->second.shape()) + ", model " + shape_str(p.shape()));
    std::copy(it->second.data(), it->second.data() + p.numel(), p.data());
  }
}

}  // namespace

TrainResult train(const Dataset& ds, const SplitIndex& split, const ModelConfig& mcfg,
                  const TrainConfig& tcfg, const Checkpoint* resume, std::ostream* progress) {
  mcfg.validate();
  tcfg.validate();
  if (split.train.empty()) throw ConfigError("train split is empty");
  if (split.val.empty()) throw ConfigError("validation split is empty");
  std::vector<std::string> vocab = ds.vocabulary();
  if (mcfg.categories != static_cast<int>(vocab.size()))
    throw ConfigError("model expects " + std::to_string(mcfg.categories) +
                      " categories but the dataset has " + std::to_string(vocab.size()));

  std::unordered_map<std::int64_t, const WasteRecord*> by_id;
  by_id.reserve(ds.records.size());
  for (const WasteRecord& r : ds.records) by_id.emplace(r.id, &r);
  auto rec = [&](std::int64_t id) -> const WasteRecord& {
    auto it = by_id.find(id);
    if (it == by_id.end())
      throw ValidationError("split references unknown record id " + std::to_string(id));
    return *it->second;
  };

  std::uint64_t shash = split_hash(split);
  // Modal train-split category; travels with the checkpoint so explanation
  // baselines do not need the dataset.
  int baseline_category = 0;
  {
    std::vector<std::size_t> counts(vocab.size(), 0);
    for (std::int64_t id : split.train) ++counts[static_cast<std::size_t>(rec(id).category_index)];
    baseline_category = static_cast<int>(
        std::max_element(counts.begin(), counts.end()) - counts.begin());
  }
  MwpModel model = MwpModel::init(mcfg, tcfg.seed);
  Standardizer stz;
  OptimizerState opt;
  EmaState ema;
  BestStats best_stats;
  int start_epoch = 0;

  if (resume) {
    if (resume->split_hash != shash)
      throw ValidationError("checkpoint was trained on a different split: stored hash " +
                            std::to_string(resume->split_hash) + ", current " +
                            std::to_string(shash));
    if (resume->epoch >= tcfg.epochs)
      throw ConfigError("checkpoint already covers " + std::to_string(resume->epoch) +
                        " epochs; nothing to resume for epochs=" + std::to_string(tcfg.epochs));
    restore_named(resume->params, model.store);
    opt.step = resume->step;
    for (const auto& [n, t] : resume->opt_m) opt.m.emplace(n, detach_copy(t));
    for (const auto& [n, t] : resume->opt_v) opt.v.emplace(n, detach_copy(t));
    for (const auto& [n, t] : resume->ema) ema.shadow.emplace(n, detach_copy(t));
    if (ema.shadow.size() != model.store.size())
      throw ValidationError("checkpoint ema section does not cover every parameter");
    stz = resume->standardizer;
    best_stats.epoch = resume->best_epoch;
    best_stats.val_mae = resume->best_val_mae;
    start_epoch = resume->epoch;
  } else {
    std::vector<FeatureVector> train_feats;
    train_feats.reserve(split.train.size());
    for (std::int64_t id : split.train) {
      const WasteRecord& r = rec(id);
      train_feats.push_back(compute_features(r.geometry, r.category_index));
    }
    stz = fit_standardizer(train_feats);
    ema = EmaState::init(model.store);
  }

  TrainResult result;
  // The resume point itself is a completed-epoch state, so an abort before
  // the first new epoch finishes still hands back something usable.
  Checkpoint last_good;
  bool have_last_good = resume != nullptr;
  if (resume) last_good = *resume;
  auto abort_with = [&](const std::string& reason) {
    result.aborted = true;
    result.abort_reason = reason;
    if (have_last_good) result.last = std::move(last_good);
    if (progress) *progress << "training aborted: " << reason << "\n";
    return result;
  };

  std::vector<std::string> backbone_names = model.store.names_in(ParamGroup::kBackbone);

  for (int epoch = start_epoch; epoch < tcfg.epochs; ++epoch) {
    int phase = epoch < tcfg.warmup_epochs ? 1 : 2;
    for (const std::string& n : backbone_names)
      model.store.at(n).set_requires_grad(phase == 2);
    GroupLr lr = schedule_lr(epoch, tcfg);
    Rng erng(mix_seed(mix_seed(tcfg.seed, 0x45504F4348ull), static_cast<std::uint64_t>(epoch)));
    std::vector<std::int64_t> order = split.train;
    erng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t loss_n = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += tcfg.batch_size) {
      std::size_t bn = std::min<std::size_t>(tcfg.batch_size, order.size() - b0);
      model.store.zero_grads();
      Tape tape;
      double batch_loss = 0.0;
      {
        TapeScope scope(tape);
        std::vector<Tensor> outs;
        std::vector<double> targets;
        outs.reserve(bn);
        targets.reserve(bn);
        for (std::size_t i = 0; i < bn; ++i) {
          const WasteRecord& r = rec(order[b0 + i]);
          Image img = tcfg.augment ? augment(r.image, erng) : r.image;
          FeatureVector f = stz.transform(compute_features(r.geometry, r.category_index));
          outs.push_back(model.forward(img, f, true, &erng));
          targets.push_back(r.weight_kg);
        }
        Tensor yhat = concat_rows(outs);
        // The loss always compares weights in kg; a log-space head is mapped
        // back through its inverse on the tape.
        if (mcfg.log_target) yhat = sub(exp(yhat), Tensor::scalar(1.0));
        Tensor y = Tensor::from_vector({bn, 1}, targets);
        Tensor loss = compute_loss(tcfg.loss, yhat, y);
        batch_loss = loss.item();
        if (!std::isfinite(batch_loss))
          return abort_with("non-finite training loss at epoch " + std::to_string(epoch + 1));
        tape.backward(loss);
      }
      clip_global_norm(model.store, tcfg.clip_norm);
      try {
        adamw_step(model.store, opt, lr, tcfg.weight_decay);
      } catch (const NumericError& e) {
        return abort_with(std::string(e.what()) + " at epoch " + std::to_string(epoch + 1));
      }
      double decay = tcfg.ema_decay;
      if (tcfg.ema_ramp) {
        double t = static_cast<double>(opt.step);
        decay = std::min(decay, (1.0 + t) / (10.0 + t));
      }
      ema.update(model.store, decay);
      loss_sum += batch_loss * static_cast<double>(bn);
      loss_n += bn;
    }

    ema.swap_into(model.store);
    double vloss_sum = 0.0, err_sum = 0.0, pct_sum = 0.0;
    bool val_finite = true;
    for (std::int64_t id : split.val) {
      const WasteRecord& r = rec(id);
      FeatureVector f = stz.transform(compute_features(r.geometry, r.category_index));
      double out = model.forward(r.image, f).item();
      if (!std::isfinite(out)) {
        val_finite = false;
        break;
      }
      double pred_kg = mcfg.log_target ? target_log_inverse(out) : out;
      double d = pred_kg - r.weight_kg;
      switch (tcfg.loss) {
        case LossKind::kMsle: {
          double ld = std::log1p(pred_kg) - std::log1p(r.weight_kg);
          vloss_sum += ld * ld;
          break;
        }
        case LossKind::kMse:
          vloss_sum += d * d;
          break;
        case LossKind::kMae:
          vloss_sum += std::fabs(d);
          break;
      }
      err_sum += std::fabs(d);
      pct_sum += std::fabs(d) / r.weight_kg;
    }
    ema.swap_into(model.store);
    if (!val_finite)
      return abort_with("non-finite validation prediction at epoch " + std::to_string(epoch + 1));

    EpochRow row;
    row.epoch = epoch + 1;
    row.phase = phase;
    row.lr_backbone = lr.backbone;
    row.lr_head = lr.head;
    row.train_loss = loss_sum / static_cast<double>(loss_n);
    row.val_loss = vloss_sum / static_cast<double>(split.val.size());
    row.val_mae = err_sum / static_cast<double>(split.val.size());
    row.val_mape = 100.0 * pct_sum / static_cast<double>(split.val.size());
    result.log.push_back(row);
    if (progress) {
      *progress << "epoch " << row.epoch << "/" << tcfg.epochs << " phase " << row.phase
                << " train_loss " << row.train_loss << " val_loss " << row.val_loss << " val_mae "
                << row.val_mae << "\n";
      progress->flush();
    }

    std::string rng_state = erng.save_state();
    if (row.val_mae < best_stats.val_mae) {
      best_stats.val_mae = row.val_mae;
      best_stats.epoch = row.epoch;
      result.best = snapshot(model, opt, ema, stz, epoch + 1, best_stats, shash, rng_state, vocab,
                             mcfg, tcfg, baseline_category);
      result.best_updated = true;
    }
    last_good = snapshot(model, opt, ema, stz, epoch + 1, best_stats, shash, rng_state, vocab,
                         mcfg, tcfg, baseline_category);
    have_last_good = true;
  }

  result.last = std::move(last_good);
  return result;
}

LoadedModel model_from_checkpoint(const Checkpoint& ckpt, bool use_ema) {
  ModelConfig mcfg = model_config_from_kv(ckpt.config);
  TrainConfig tcfg = train_config_from_kv(ckpt.config);
  LoadedModel lm{MwpModel::init(mcfg, tcfg.seed), ckpt.standardizer, ckpt.vocab, tcfg, ckpt, 0};
  restore_named(use_ema && !ckpt.ema.empty() ? ckpt.ema : ckpt.params, lm.model.store);
  auto it = ckpt.config.find("explain.baseline_category");
  if (it != ckpt.config.end()) lm.baseline_category = std::stoi(it->second);
  return lm;
}

}  // namespace mwp
