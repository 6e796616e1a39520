#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "mwp/dataset.hpp"
#include "mwp/metrics.hpp"
#include "mwp/trainer.hpp"

namespace mwp {

struct AblationRow {
  std::string axis, variant;
  double msle = 0.0, mae = 0.0, rmse = 0.0, mape = 0.0;
  bool failed = false;
  std::string error;
};

// Trains one variant per row over four axes (fusion mode, loss, fusion depth,
// patch granularity), all from the same seed and split, and scores each on
// the test split with its best EMA weights. Rows whose base configuration
// coincides share a single training run. A variant that throws is reported
// as failed and the sweep continues. threads > 1 runs variants concurrently;
// results are deterministic either way.
std::vector<AblationRow> run_ablation(const Dataset& ds, const SplitIndex& split,
                                      const ModelConfig& base_model, const TrainConfig& base_train,
                                      int threads = 1, std::ostream* progress = nullptr);

std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace mwp
