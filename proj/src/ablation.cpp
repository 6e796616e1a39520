#include "mwp/ablation.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "mwp/config.hpp"
#include "mwp/errors.hpp"

namespace mwp {

namespace {

struct Variant {
  std::string axis, variant;
  ModelConfig model;
  TrainConfig train;
};

struct JobResult {
  double msle = 0.0, mae = 0.0, rmse = 0.0, mape = 0.0;
  bool failed = false;
  std::string error;
};

std::string config_key(const ModelConfig& m, const TrainConfig& t) {
  std::ostringstream os;
  for (const auto& [k, v] : model_config_to_kv(m)) os << k << "=" << v << ";";
  for (const auto& [k, v] : train_config_to_kv(t)) os << k << "=" << v << ";";
  return os.str();
}

JobResult run_variant(const Dataset& ds, const SplitIndex& split, const ModelConfig& mcfg,
                      const TrainConfig& tcfg) {
  JobResult res;
  try {
    TrainResult tr = train(ds, split, mcfg, tcfg);
    if (tr.aborted) {
      res.failed = true;
      res.error = tr.abort_reason;
      return res;
    }
    LoadedModel lm = model_from_checkpoint(tr.best);
    std::vector<double> yhat = predict_records(lm.model, lm.standardizer, ds, split.test);
    std::vector<double> y = true_weights(ds, split.test);
    MetricReport rep = metrics(yhat, y);
    double msle_sum = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      double d = std::log1p(yhat[i]) - std::log1p(y[i]);
      msle_sum += d * d;
    }
    res.msle = msle_sum / static_cast<double>(y.size());
    res.mae = rep.mae;
    res.rmse = rep.rmse;
    res.mape = rep.mape;
  } catch (const std::exception& e) {
    res.failed = true;
    res.error = e.what();
  }
  return res;
}

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::vector<AblationRow> run_ablation(const Dataset& ds, const SplitIndex& split,
                                      const ModelConfig& base_model, const TrainConfig& base_train,
                                      int threads, std::ostream* progress) {
  std::vector<Variant> variants;
  for (FusionMode mode :
       {FusionMode::kMutual, FusionMode::kOneWayV2M, FusionMode::kOneWayM2V,
        FusionMode::kConcat}) {
    Variant v{"fusion", to_string(mode), base_model, base_train};
    v.model.fusion.mode = mode;
    variants.push_back(std::move(v));
  }
  for (LossKind loss : {LossKind::kMsle, LossKind::kMse, LossKind::kMae}) {
    Variant v{"loss", to_string(loss), base_model, base_train};
    v.train.loss = loss;
    variants.push_back(std::move(v));
  }
  for (int stages : {1, 2, 3}) {
    Variant v{"depth", "stages=" + std::to_string(stages), base_model, base_train};
    v.model.fusion.stages = stages;
    variants.push_back(std::move(v));
  }
  for (int patch : {base_model.vit.patch_side, base_model.vit.patch_side * 2}) {
    Variant v{"granularity", "patch=" + std::to_string(patch), base_model, base_train};
    v.model.vit.patch_side = patch;
    variants.push_back(std::move(v));
  }

  std::vector<std::size_t> job_of(variants.size());
  std::vector<const Variant*> jobs;
  std::map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    std::string key = config_key(variants[i].model, variants[i].train);
    auto [it, inserted] = seen.emplace(key, jobs.size());
    if (inserted) jobs.push_back(&variants[i]);
    job_of[i] = it->second;
  }

  std::vector<JobResult> results(jobs.size());
  std::mutex log_mutex;
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      std::size_t j = next.fetch_add(1);
      if (j >= jobs.size()) return;
      results[j] = run_variant(ds, split, jobs[j]->model, jobs[j]->train);
      if (progress) {
        std::lock_guard<std::mutex> lock(log_mutex);
        *progress << "[ablate] " << jobs[j]->axis << "/" << jobs[j]->variant
                  << (results[j].failed ? " failed: " + results[j].error
                                        : " mae " + std::to_string(results[j].mae))
                  << "\n";
        progress->flush();
      }
    }
  };
  int nthreads = std::max(1, std::min<int>(threads, static_cast<int>(jobs.size())));
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    for (int i = 0; i < nthreads; ++i) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  std::vector<AblationRow> rows;
  rows.reserve(variants.size());
  for (std::size_t i = 0; i < variants.size(); ++i) {
    const JobResult& r = results[job_of[i]];
    rows.push_back({variants[i].axis, variants[i].variant, r.msle, r.mae, r.rmse, r.mape,
                    r.failed, r.error});
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "axis,variant,msle,mae_kg,rmse_kg,mape_pct,status\n";
  for (const AblationRow& r : rows) {
    os << r.axis << "," << r.variant << ",";
    if (r.failed) {
      std::string clean = r.error;
      for (char& c : clean)
        if (c == ',' || c == '\n') c = ';';
      os << ",,,,failed: " << clean;
    } else
      os << fmt_g(r.msle) << "," << fmt_g(r.mae) << "," << fmt_g(r.rmse) << "," << fmt_g(r.mape)
         << ",ok";
    os << "\n";
  }
  return os.str();
}

}  // namespace mwp
