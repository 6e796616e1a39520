#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mwp/dataset.hpp"
#include "mwp/model.hpp"

namespace mwp {

struct BinSpec {
  std::string label;
  double lo = 0.0;  // half-open [lo, hi) on the ground-truth weight
  double hi = 0.0;
};

// Light/Medium/Heavy reporting bins; 500-1000 kg is deliberately uncovered
// and lands in a separate row.
std::vector<BinSpec> default_weight_bins();

struct BinRow {
  std::string label;
  double lo = 0.0, hi = 0.0;
  bool covered = true;  // false for the outside-every-bin row
  std::size_t n = 0;
  double mae = 0.0, mape = 0.0;
  bool defined = false;  // metrics valid only when n > 0
};

struct MetricReport {
  std::size_t n = 0;
  double mae = 0.0, rmse = 0.0, mape = 0.0, r2 = 0.0;
  std::size_t mape_excluded = 0;  // targets below 1e-9 skipped in MAPE
  std::vector<BinRow> bins;
};

// Core aggregates; requires n >= 2, positive targets, non-constant targets.
MetricReport metrics(const std::vector<double>& yhat, const std::vector<double>& y);

// Per-bin MAE/MAPE plus one row for samples no bin covers; row counts
// partition the input exactly.
std::vector<BinRow> bin_metrics(const std::vector<double>& yhat, const std::vector<double>& y,
                                const std::vector<BinSpec>& bins);

// metrics() with the default bins attached.
MetricReport evaluate_predictions(const std::vector<double>& yhat, const std::vector<double>& y);

std::string metric_report_csv(const MetricReport& r);
std::string metric_report_json(const MetricReport& r);

// Eval-mode predictions in kg for the given record ids.
std::vector<double> predict_records(const MwpModel& model, const Standardizer& stz,
                                    const Dataset& ds, const std::vector<std::int64_t>& ids);
std::vector<double> true_weights(const Dataset& ds, const std::vector<std::int64_t>& ids);

}  // namespace mwp
