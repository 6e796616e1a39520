#include "mwp/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "mwp/errors.hpp"

namespace mwp {

namespace {

constexpr double kMapeFloor = 1e-9;

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::vector<BinSpec> default_weight_bins() {
  return {{"Light", 0.0, 100.0}, {"Medium", 100.0, 500.0}, {"Heavy", 1000.0, 3500.0}};
}

MetricReport metrics(const std::vector<double>& yhat, const std::vector<double>& y) {
  if (yhat.size() != y.size())
    throw DimensionError("metrics: prediction and target counts differ: " +
                         std::to_string(yhat.size()) + " vs " + std::to_string(y.size()));
  if (y.size() < 2) throw ValidationError("metrics: need at least 2 samples");
  MetricReport r;
  r.n = y.size();
  double abs_sum = 0.0, sq_sum = 0.0, pct_sum = 0.0, y_sum = 0.0;
  std::size_t pct_n = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] <= 0.0)
      throw DomainError("metrics: target " + std::to_string(i) + " is not positive (" +
                        fmt_g(y[i]) + "), MAPE undefined");
    double d = yhat[i] - y[i];
    abs_sum += std::fabs(d);
    sq_sum += d * d;
    y_sum += y[i];
    if (y[i] >= kMapeFloor) {
      pct_sum += std::fabs(d) / y[i];
      ++pct_n;
    }
  }
  r.mape_excluded = y.size() - pct_n;
  if (pct_n == 0) throw DomainError("metrics: every target fell below the MAPE floor");
  double n = static_cast<double>(y.size());
  r.mae = abs_sum / n;
  r.rmse = std::sqrt(sq_sum / n);
  r.mape = 100.0 * pct_sum / static_cast<double>(pct_n);
  double ybar = y_sum / n;
  double var_sum = 0.0;
  for (double v : y) var_sum += (v - ybar) * (v - ybar);
  if (var_sum == 0.0) throw DomainError("metrics: zero target variance, r2 undefined");
  r.r2 = 1.0 - sq_sum / var_sum;
  return r;
}

std::vector<BinRow> bin_metrics(const std::vector<double>& yhat, const std::vector<double>& y,
                                const std::vector<BinSpec>& bins) {
  if (yhat.size() != y.size())
    throw DimensionError("bin_metrics: prediction and target counts differ");
  std::vector<BinRow> rows;
  rows.reserve(bins.size() + 1);
  for (const BinSpec& b : bins) {
    if (!(b.lo < b.hi)) throw ConfigError("bin " + b.label + ": lo must be below hi");
    rows.push_back({b.label, b.lo, b.hi, true, 0, 0.0, 0.0, false});
  }
  rows.push_back({"uncovered", 0.0, 0.0, false, 0, 0.0, 0.0, false});
  std::vector<double> abs_sum(rows.size(), 0.0), pct_sum(rows.size(), 0.0);
  std::vector<std::size_t> pct_n(rows.size(), 0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    std::size_t slot = rows.size() - 1;
    for (std::size_t b = 0; b < bins.size(); ++b)
      if (y[i] >= bins[b].lo && y[i] < bins[b].hi) {
        slot = b;
        break;
      }
    rows[slot].n += 1;
    double d = std::fabs(yhat[i] - y[i]);
    abs_sum[slot] += d;
    if (y[i] >= kMapeFloor) {
      pct_sum[slot] += d / y[i];
      pct_n[slot] += 1;
    }
  }
  for (std::size_t b = 0; b < rows.size(); ++b) {
    if (rows[b].n == 0) continue;
    rows[b].defined = true;
    rows[b].mae = abs_sum[b] / static_cast<double>(rows[b].n);
    rows[b].mape = pct_n[b] ? 100.0 * pct_sum[b] / static_cast<double>(pct_n[b]) : 0.0;
  }
  return rows;
}

MetricReport evaluate_predictions(const std::vector<double>& yhat, const std::vector<double>& y) {
  MetricReport r = metrics(yhat, y);
  r.bins = bin_metrics(yhat, y, default_weight_bins());
  return r;
}

std::string metric_report_csv(const MetricReport& r) {
  std::ostringstream os;
  os << "n,mae_kg,rmse_kg,mape_pct,r2,mape_excluded\n";
  os << r.n << "," << fmt_g(r.mae) << "," << fmt_g(r.rmse) << "," << fmt_g(r.mape) << ","
     << fmt_g(r.r2) << "," << r.mape_excluded << "\n";
  os << "\nbin,lo_kg,hi_kg,n,mae_kg,mape_pct\n";
  for (const BinRow& b : r.bins) {
    os << b.label << ",";
    if (b.covered)
      os << fmt_g(b.lo) << "," << fmt_g(b.hi) << ",";
    else
      os << ",,";
    os << b.n << ",";
    if (b.defined)
      os << fmt_g(b.mae) << "," << fmt_g(b.mape);
    else
      os << ",";
    os << "\n";
  }
  return os.str();
}

std::string metric_report_json(const MetricReport& r) {
  nlohmann::json j;
  j["n"] = r.n;
  j["mae_kg"] = r.mae;
  j["rmse_kg"] = r.rmse;
  j["mape_pct"] = r.mape;
  j["r2"] = r.r2;
  j["mape_excluded"] = r.mape_excluded;
  j["bins"] = nlohmann::json::array();
  for (const BinRow& b : r.bins) {
    nlohmann::json jb;
    jb["label"] = b.label;
    if (b.covered) {
      jb["lo_kg"] = b.lo;
      jb["hi_kg"] = b.hi;
    }
    jb["n"] = b.n;
    if (b.defined) {
      jb["mae_kg"] = b.mae;
      jb["mape_pct"] = b.mape;
    } else {
      jb["mae_kg"] = nullptr;
      jb["mape_pct"] = nullptr;
    }
    j["bins"].push_back(jb);
  }
  return j.dump(2);
}

std::vector<double> predict_records(const MwpModel& model, const Standardizer& stz,
                                    const Dataset& ds, const std::vector<std::int64_t>& ids) {
  std::unordered_map<std::int64_t, const WasteRecord*> by_id;
  by_id.reserve(ds.records.size());
  for (const WasteRecord& r : ds.records) by_id.emplace(r.id, &r);
  std::vector<double> out;
  out.reserve(ids.size());
  for (std::int64_t id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end())
      throw ValidationError("unknown record id " + std::to_string(id) + " in evaluation set");
    const WasteRecord& r = *it->second;
    FeatureVector f = stz.transform(compute_features(r.geometry, r.category_index));
    out.push_back(model.predict_weight(r.image, f));
  }
  return out;
}

std::vector<double> true_weights(const Dataset& ds, const std::vector<std::int64_t>& ids) {
  std::unordered_map<std::int64_t, double> by_id;
  by_id.reserve(ds.records.size());
  for (const WasteRecord& r : ds.records) by_id.emplace(r.id, r.weight_kg);
  std::vector<double> out;
  out.reserve(ids.size());
  for (std::int64_t id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end())
      throw ValidationError("unknown record id " + std::to_string(id) + " in evaluation set");
    out.push_back(it->second);
  }
  return out;
}

}  // namespace mwp
