#include "mwp/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mwp/ablation.hpp"
#include "mwp/checkpoint.hpp"
#include "mwp/config.hpp"
#include "mwp/dataset.hpp"
#include "mwp/errors.hpp"
#include "mwp/explain.hpp"
#include "mwp/gradcheck.hpp"
#include "mwp/metrics.hpp"
#include "mwp/trainer.hpp"

namespace fs = std::filesystem;

namespace mwp {
namespace {

struct CliState {
  std::string config_path;
  std::vector<std::pair<std::string, std::string>> overrides;  // applied in CLI order
};

RunConfig effective_config(const CliState& st) {
  RunConfig rc = st.config_path.empty() ? RunConfig{} : load_config_file(st.config_path);
  for (const auto& [key, value] : st.overrides) apply_config_kv(rc, key, value);
  return rc;
}

void kv_option(CLI::App* cmd, CliState& st, const std::string& flag, std::string key,
               const std::string& desc) {
  cmd->add_option_function<std::string>(
      flag, [&st, key = std::move(key)](const std::string& v) { st.overrides.emplace_back(key, v); },
      desc);
}

void config_option(CLI::App* cmd, CliState& st) {
  cmd->add_option("--config", st.config_path, "key = value config file")
      ->check(CLI::ExistingFile);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

SplitIndex make_split(const Dataset& ds, const RunConfig& rc) {
  SplitIndex split =
      stratified_split(ds, rc.split_train, rc.split_val, rc.split_test, rc.split_seed);
  for (const std::string& w : split.warnings) std::cerr << "warning: " << w << "\n";
  return split;
}

int resolve_category(const std::vector<std::string>& vocab, const std::string& name) {
  for (std::size_t i = 0; i < vocab.size(); ++i)
    if (vocab[i] == name) return static_cast<int>(i);
  std::string listed;
  for (const std::string& v : vocab) listed += (listed.empty() ? "" : ", ") + v;
  throw ValidationError("unknown category '" + name + "'; vocabulary: " + listed);
}

int cmd_generate(const RunConfig& rc, const fs::path& out) {
  Dataset ds = generate(rc.gen);
  save_dataset(ds, out);
  write_feature_audit(ds, out / "feature_audit.csv");
  write_config_echo(rc, out);
  std::cout << "generated " << ds.records.size() << " records in " << out.string() << "\n";
  return 0;
}

int cmd_train(const RunConfig& rc, const fs::path& data, const fs::path& out,
              const std::string& resume_path) {
  Dataset ds = load_dataset(data);
  SplitIndex split = make_split(ds, rc);

  Checkpoint resume_ckpt;
  const Checkpoint* resume = nullptr;
  if (!resume_path.empty()) {
    resume_ckpt = load_checkpoint(resume_path);
    resume = &resume_ckpt;
  }

  fs::create_directories(out);
  write_config_echo(rc, out);
  write_split_index(out / "split_index.txt", split);

  TrainResult tr = train(ds, split, rc.model, rc.train, resume, &std::cout);

  if (!tr.log.empty()) write_epoch_log(out / "epochs.csv", tr.log);
  if (tr.best_updated)
    save_checkpoint(out / "best.ckpt", tr.best);
  else if (resume)
    std::cout << "validation MAE never improved on the resumed best; keeping the prior best\n";
  if (!tr.last.params.empty()) save_checkpoint(out / "last.ckpt", tr.last);

  if (tr.aborted) {
    std::cerr << "error: " << tr.abort_reason << "\n";
    return 3;
  }
  std::printf("best epoch %d, val MAE %.4f kg\n", tr.best.best_epoch, tr.best.best_val_mae);
  return 0;
}

const std::vector<std::int64_t>& split_ids(const SplitIndex& split, const std::string& name) {
  if (name == "train") return split.train;
  if (name == "val") return split.val;
  if (name == "test") return split.test;
  throw ConfigError("unknown split '" + name + "' (expected train|val|test)");
}

int cmd_eval(const RunConfig& rc, const fs::path& data, const fs::path& ckpt_path,
             const fs::path& out) {
  Dataset ds = load_dataset(data);
  SplitIndex split = make_split(ds, rc);
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  std::uint64_t recomputed = split_hash(split);
  if (ckpt.split_hash != recomputed)
    throw ValidationError("split mismatch: checkpoint expects split hash " +
                          std::to_string(ckpt.split_hash) + " but the recomputed split hashes to " +
                          std::to_string(recomputed));

  const std::vector<std::int64_t>& ids = split_ids(split, rc.eval_split);
  LoadedModel lm = model_from_checkpoint(ckpt);
  std::vector<double> yhat = predict_records(lm.model, lm.standardizer, ds, ids);
  std::vector<double> y = true_weights(ds, ids);
  MetricReport report = evaluate_predictions(yhat, y);

  fs::create_directories(out);
  write_config_echo(rc, out);
  write_text(out / "metrics.csv", metric_report_csv(report));
  write_text(out / "metrics.json", metric_report_json(report));

  std::printf("%s split, %zu samples\n", rc.eval_split.c_str(), report.n);
  std::printf("MAE  %.4f kg\nRMSE %.4f kg\nMAPE %.2f %%\nR2   %.4f\n", report.mae, report.rmse,
              report.mape, report.r2);
  std::cout << "\n" << metric_report_csv(report);
  return 0;
}

struct RecordArgs {
  std::string ckpt_path, image_path, category;
  RawGeometry g;
};

void record_options(CLI::App* cmd, RecordArgs& ra) {
  cmd->add_option("--ckpt", ra.ckpt_path, "trained checkpoint")->required();
  cmd->add_option("--image", ra.image_path, "object photo (binary PPM)")->required();
  cmd->add_option("--category", ra.category, "category name")->required();
  cmd->add_option("--lx", ra.g.lx, "object extent x")->required();
  cmd->add_option("--ly", ra.g.ly, "object extent y")->required();
  cmd->add_option("--lz", ra.g.lz, "object extent z")->required();
  cmd->add_option("--dx", ra.g.dx, "sensor offset x")->required();
  cmd->add_option("--dy", ra.g.dy, "sensor offset y")->required();
}

struct LoadedRecord {
  LoadedModel lm;
  Image img;
  int category_index = 0;
};

LoadedRecord load_record(const RecordArgs& ra) {
  Checkpoint ckpt = load_checkpoint(ra.ckpt_path);
  LoadedRecord lr{model_from_checkpoint(ckpt), read_ppm(ra.image_path), 0};
  lr.category_index = resolve_category(lr.lm.vocab, ra.category);
  ra.g.validate();
  return lr;
}

int cmd_predict(const RecordArgs& ra, const std::string& out_path) {
  LoadedRecord lr = load_record(ra);
  FeatureVector f = lr.lm.standardizer.transform(compute_features(ra.g, lr.category_index));
  double w = lr.lm.model.predict_weight(lr.img, f);

  nlohmann::json j;
  j["prediction_kg"] = w;
  j["category"] = ra.category;
  std::string text = j.dump(2) + "\n";
  std::cout << text;
  if (!out_path.empty()) write_text(out_path, text);
  return 0;
}

int cmd_explain(const RecordArgs& ra, const std::string& baseline_name,
                const std::optional<double>& actual, const fs::path& out) {
  LoadedRecord lr = load_record(ra);
  int baseline = lr.lm.baseline_category;
  if (!baseline_name.empty()) baseline = resolve_category(lr.lm.vocab, baseline_name);

  ExplanationReport rep =
      explain_record(lr.lm.model, lr.lm.standardizer, lr.img, ra.g, lr.category_index, baseline,
                     actual ? &*actual : nullptr);
  append_external_narrative(rep);
  for (const std::string& w : rep.warnings) std::cerr << "warning: " << w << "\n";

  double phi_sum = 0.0;
  for (const ShapleyItem& item : rep.shapley) phi_sum += item.phi;
  double residual = std::fabs(phi_sum - (rep.prediction_kg - rep.baseline_prediction_kg));
  bool efficient = residual < 1e-6;
  std::printf("shapley efficiency |sum(phi) - (prediction - baseline)| = %.3e (%s)\n", residual,
              efficient ? "pass" : "FAIL");

  std::cout << "\n" << rep.rendered_text;
  if (!out.empty()) {
    fs::create_directories(out);
    write_text(out / "report.txt", rep.rendered_text);
    write_text(out / "explanation.json", explanation_json(rep) + "\n");
  }
  return efficient ? 0 : 3;
}

int cmd_gradcheck(int seeds, std::uint64_t seed) {
  std::vector<GradCheckRow> rows = run_gradcheck(seeds, seed);
  std::printf("%-30s %6s %8s %14s %10s  %s\n", "case", "seeds", "rerolls", "max_rel_err",
              "tolerance", "status");
  bool all_pass = true;
  for (const GradCheckRow& r : rows) {
    std::printf("%-30s %6d %8d %14.3e %10.0e  %s\n", r.name.c_str(), r.seeds, r.rerolls,
                r.max_rel_err, r.tolerance, r.pass ? "pass" : "FAIL");
    all_pass = all_pass && r.pass;
  }
  std::printf("%zu cases, %s\n", rows.size(), all_pass ? "all pass" : "FAILURES above");
  return all_pass ? 0 : 3;
}

int cmd_ablate(const RunConfig& rc, const fs::path& data, const fs::path& out) {
  Dataset ds = load_dataset(data);
  SplitIndex split = make_split(ds, rc);
  std::vector<AblationRow> rows =
      run_ablation(ds, split, rc.model, rc.train, rc.threads, &std::cout);

  fs::create_directories(out);
  write_config_echo(rc, out);
  std::string csv = ablation_csv(rows);
  write_text(out / "ablation.csv", csv);
  std::cout << "\n" << csv;

  bool any_failed = false;
  for (const AblationRow& r : rows) any_failed = any_failed || r.failed;
  if (any_failed) std::cerr << "error: at least one ablation variant failed\n";
  return any_failed ? 3 : 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"multimodal weight predictor"};
  app.require_subcommand(1);
  CliState st;

  auto* c_gen = app.add_subcommand("generate", "write a synthetic dataset");
  std::string gen_out;
  c_gen->add_option("--out", gen_out, "output directory")->required();
  config_option(c_gen, st);
  kv_option(c_gen, st, "--n", "gen.n", "number of records");
  kv_option(c_gen, st, "--seed", "gen.seed", "generator seed");
  kv_option(c_gen, st, "--image-side", "gen.image_side", "image side in pixels");

  auto* c_train = app.add_subcommand("train", "train a model");
  std::string train_data, train_out, resume_path;
  c_train->add_option("--data", train_data, "dataset directory")->required();
  c_train->add_option("--out", train_out, "run directory")->required();
  c_train->add_option("--resume", resume_path, "checkpoint to continue from")
      ->check(CLI::ExistingFile);
  config_option(c_train, st);
  kv_option(c_train, st, "--epochs", "train.epochs", "total epochs");
  kv_option(c_train, st, "--warmup", "train.warmup_epochs", "frozen-backbone epochs");
  kv_option(c_train, st, "--batch", "train.batch_size", "batch size");
  kv_option(c_train, st, "--seed", "train.seed", "training seed");
  kv_option(c_train, st, "--fusion", "fusion.mode", "mutual|v2m|m2v|concat");
  kv_option(c_train, st, "--stages", "fusion.stages", "fusion stage count");
  kv_option(c_train, st, "--patch", "vit.patch_side", "visual patch side");
  kv_option(c_train, st, "--loss", "train.loss", "msle|mse|l1");
  kv_option(c_train, st, "--lr-head", "train.lr_head", "fusion/head learning rate");
  kv_option(c_train, st, "--lr-backbone", "train.lr_backbone", "backbone learning rate");
  kv_option(c_train, st, "--split-seed", "split.seed", "split shuffle seed");
  c_train->add_flag_callback(
      "--no-augment", [&st] { st.overrides.emplace_back("train.augment", "false"); },
      "disable train-split image augmentation");

  auto* c_eval = app.add_subcommand("eval", "score a checkpoint on one split");
  std::string eval_data, eval_ckpt, eval_out;
  c_eval->add_option("--data", eval_data, "dataset directory")->required();
  c_eval->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
  c_eval->add_option("--out", eval_out, "report directory")->required();
  config_option(c_eval, st);
  kv_option(c_eval, st, "--split", "eval.split", "train|val|test");
  kv_option(c_eval, st, "--split-seed", "split.seed", "split shuffle seed");

  auto* c_predict = app.add_subcommand("predict", "predict one record's weight");
  RecordArgs pr;
  std::string predict_out;
  record_options(c_predict, pr);
  c_predict->add_option("--out", predict_out, "write the prediction JSON here");

  auto* c_explain = app.add_subcommand("explain", "explain one record's prediction");
  RecordArgs ex;
  std::string explain_out, baseline_name;
  std::optional<double> actual;
  record_options(c_explain, ex);
  c_explain->add_option("--baseline", baseline_name,
                        "baseline category (default: stored modal category)");
  c_explain->add_option("--actual", actual, "ground-truth weight in kg");
  c_explain->add_option("--out", explain_out, "report directory");

  auto* c_gc = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  int gc_seeds = 20;
  std::uint64_t gc_seed = 1234;
  c_gc->add_option("--seeds", gc_seeds, "random draws per case")->check(CLI::PositiveNumber);
  c_gc->add_option("--seed", gc_seed, "base seed");

  auto* c_ablate = app.add_subcommand("ablate", "train and score the variant matrix");
  std::string ab_data, ab_out;
  c_ablate->add_option("--data", ab_data, "dataset directory")->required();
  c_ablate->add_option("--out", ab_out, "report directory")->required();
  config_option(c_ablate, st);
  kv_option(c_ablate, st, "--epochs", "train.epochs", "epochs per variant");
  kv_option(c_ablate, st, "--warmup", "train.warmup_epochs", "frozen-backbone epochs");
  kv_option(c_ablate, st, "--seed", "train.seed", "training seed");
  kv_option(c_ablate, st, "--threads", "threads", "concurrent variants");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (c_gen->parsed()) return cmd_generate(effective_config(st), gen_out);
    if (c_train->parsed()) return cmd_train(effective_config(st), train_data, train_out, resume_path);
    if (c_eval->parsed()) return cmd_eval(effective_config(st), eval_data, eval_ckpt, eval_out);
    if (c_predict->parsed()) return cmd_predict(pr, predict_out);
    if (c_explain->parsed()) return cmd_explain(ex, baseline_name, actual, explain_out);
    if (c_gc->parsed()) return cmd_gradcheck(gc_seeds, gc_seed);
    if (c_ablate->parsed()) return cmd_ablate(effective_config(st), ab_data, ab_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 0;
}

}  // namespace mwp
