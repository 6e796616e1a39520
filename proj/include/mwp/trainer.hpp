#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "mwp/checkpoint.hpp"
#include "mwp/dataset.hpp"
#include "mwp/head.hpp"
#include "mwp/model.hpp"
#include "mwp/params.hpp"

namespace mwp {

struct TrainConfig {
  int epochs = 120;
  int warmup_epochs = 10;  // phase 1: visual backbone frozen
  int batch_size = 32;
  double lr_head = 1e-4;
  double lr_backbone = 2e-6;  // phase-2 backbone rate
  double lr_min = 0.0;
  int restart_period = 30;  // cosine restart length, in epochs
  double restart_mult = 1.0;
  double weight_decay = 1e-4;
  double ema_decay = 0.999;
  // Effective decay min(ema_decay, (1+t)/(10+t)) so short runs are not
  // anchored to the random initialization.
  bool ema_ramp = true;
  double clip_norm = 1.0;  // global gradient norm cap, 0 disables
  LossKind loss = LossKind::kMsle;
  bool augment = true;
  std::uint64_t seed = 7;

  void validate() const;
};

struct GroupLr {
  double backbone = 0.0;
  double head = 0.0;
};

// One cosine segment: lr_max at t=0 down to lr_min at t=period.
double cosine_lr(double t, double period, double lr_max, double lr_min);

// Warm-restart schedule indexed by epoch; each restart begins a fresh segment
// whose length is the previous one times restart_mult. The backbone rate is
// zero while the backbone is frozen (epoch < warmup_epochs).
GroupLr schedule_lr(int epoch, const TrainConfig& cfg);

struct OptimizerState {
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::map<std::string, Tensor> m, v;
};

// Decoupled-weight-decay adaptive update over every parameter that has a
// populated gradient: bias-corrected moment step, then theta *= (1 - lr*wd)
// applied separately from the gradient term.
void adamw_step(ParamStore& store, OptimizerState& opt, const GroupLr& lr, double weight_decay);

struct EmaState {
  std::map<std::string, Tensor> shadow;

  static EmaState init(const ParamStore& store);  // shadow = current params
  void update(const ParamStore& store, double decay);
  // Exchanges parameter payloads with the shadows (call twice to restore);
  // used to evaluate with averaged weights without copying the model.
  void swap_into(ParamStore& store);
};

// Scales all populated gradients so their global L2 norm is at most max_norm;
// returns the pre-clip norm. max_norm <= 0 disables clipping.
double clip_global_norm(ParamStore& store, double max_norm);

std::uint64_t param_group_hash(const ParamStore& store, ParamGroup group);

struct EpochRow {
  int epoch = 0;  // 1-based in logs
  int phase = 1;
  double lr_backbone = 0.0;
  double lr_head = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_mae = 0.0;
  double val_mape = 0.0;
};

std::string epoch_log_header();
std::string epoch_row_csv(const EpochRow& row);
void write_epoch_log(const std::filesystem::path& path, const std::vector<EpochRow>& rows);

struct TrainResult {
  Checkpoint best, last;
  std::vector<EpochRow> log;
  // False when a resumed run never improves on the checkpoint's best; the
  // caller should then keep its existing best artifact.
  bool best_updated = false;
  bool aborted = false;
  std::string abort_reason;
};

// Two-phase loop: backbone frozen for warmup_epochs, then unfrozen with the
// per-group rates. Standardizer is fitted on the train split only, train
// images are augmented, validation runs with EMA weights and the best
// checkpoint is the lowest validation MAE. A non-finite loss or gradient
// aborts, keeping the last completed-epoch state.
TrainResult train(const Dataset& ds, const SplitIndex& split, const ModelConfig& mcfg,
                  const TrainConfig& tcfg, const Checkpoint* resume = nullptr,
                  std::ostream* progress = nullptr);

// Rebuilds a model from a checkpoint; use_ema loads the shadow weights.
struct LoadedModel {
  MwpModel model;
  Standardizer standardizer;
  std::vector<std::string> vocab;
  TrainConfig train_cfg;
  Checkpoint ckpt;
  int baseline_category = 0;  // modal train-split category at training time
};
LoadedModel model_from_checkpoint(const Checkpoint& ckpt, bool use_ema = true);

}  // namespace mwp
