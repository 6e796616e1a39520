#include "mwp/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>

#include <httplib.h>
#include <json.hpp>

#include "mwp/errors.hpp"

namespace mwp {

McrResult mcr(const Tensor& h_v, const Tensor& h_m, double eps) {
  auto l2 = [](const Tensor& t) {
    double s = 0.0;
    for (std::size_t i = 0; i < t.numel(); ++i) s += t.data()[i] * t.data()[i];
    return std::sqrt(s);
  };
  double nv = l2(h_v), nm = l2(h_m);
  double denom = nv + nm + eps;
  return {nv / denom, nm / denom};
}

std::vector<ShapleyItem> shapley_exact(const MwpModel& model, const Image& img,
                                       const FeatureVector& x, int baseline_category,
                                       double* prediction, double* baseline_prediction) {
  if (baseline_category < 0 || baseline_category >= model.cfg.categories)
    throw ValidationError("baseline category index " + std::to_string(baseline_category) +
                          " outside the vocabulary");
  constexpr int kPlayers = kSelectedFeatureCount + 1;  // features + category
  constexpr int kCoalitions = 1 << kPlayers;

  Tensor tokens;
  Tensor h_v = model.encode_visual(img, &tokens);
  const Tensor* tok = model.cfg.fusion.token_kv ? &tokens : nullptr;

  std::vector<double> value(kCoalitions);
  for (int mask = 0; mask < kCoalitions; ++mask) {
    FeatureVector f;
    for (int i = 0; i < kSelectedFeatureCount; ++i)
      f.values[i] = (mask >> i) & 1 ? x.values[i] : 0.0;
    f.category_index = (mask >> kSelectedFeatureCount) & 1 ? x.category_index : baseline_category;
    double out = model.forward_with_visual(h_v, tok, f).item();
    value[mask] = model.cfg.log_target ? target_log_inverse(out) : out;
  }

  double fact[kPlayers + 1];
  fact[0] = 1.0;
  for (int i = 1; i <= kPlayers; ++i) fact[i] = fact[i - 1] * i;
  double weight[kPlayers];
  for (int s = 0; s < kPlayers; ++s) weight[s] = fact[s] * fact[kPlayers - 1 - s] / fact[kPlayers];

  std::vector<ShapleyItem> items(kPlayers);
  for (int i = 0; i < kPlayers; ++i) {
    items[i].name = i < kSelectedFeatureCount ? kSelectedFeatureNames[i] : "category";
    double phi = 0.0;
    for (int mask = 0; mask < kCoalitions; ++mask) {
      if ((mask >> i) & 1) continue;
      int s = __builtin_popcount(static_cast<unsigned>(mask));
      phi += weight[s] * (value[mask | (1 << i)] - value[mask]);
    }
    items[i].phi = phi;
  }
  if (prediction) *prediction = value[kCoalitions - 1];
  if (baseline_prediction) *baseline_prediction = value[0];
  return items;
}

std::string render_template(const std::string& tmpl,
                            const std::map<std::string, std::string>& fields) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    std::size_t open = tmpl.find('{', pos);
    if (open == std::string::npos) {
      out.append(tmpl, pos, std::string::npos);
      break;
    }
    out.append(tmpl, pos, open - pos);
    std::size_t close = tmpl.find('}', open);
    if (close == std::string::npos)
      throw ValidationError("template has an unterminated placeholder");
    std::string key = tmpl.substr(open + 1, close - open - 1);
    auto it = fields.find(key);
    if (it == fields.end())
      throw ValidationError("template placeholder {" + key + "} has no value");
    out += it->second;
    pos = close + 1;
  }
  return out;
}

namespace {

std::string fmt1(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.1f", v);
  return buf;
}

std::string fmt1_signed(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%+.1f", v);
  return buf;
}

std::vector<ShapleyItem> top_by_magnitude(const std::vector<ShapleyItem>& items, std::size_t k) {
  std::vector<ShapleyItem> sorted = items;
  std::stable_sort(sorted.begin(), sorted.end(), [](const ShapleyItem& a, const ShapleyItem& b) {
    return std::fabs(a.phi) > std::fabs(b.phi);
  });
  if (sorted.size() > k) sorted.resize(k);
  return sorted;
}

}  // namespace

std::string render_report(const ExplanationReport& report) {
  std::map<std::string, std::string> fields;
  fields["prediction_kg"] = fmt1(report.prediction_kg);
  fields["baseline_kg"] = fmt1(report.baseline_prediction_kg);
  fields["s_visual_pct"] = fmt1(100.0 * report.s_visual);
  fields["s_meta_pct"] = fmt1(100.0 * report.s_meta);

  std::string actual_block;
  if (report.has_actual) {
    fields["actual_kg"] = fmt1(report.actual_kg);
    fields["abs_error_kg"] = fmt1(report.abs_error_kg);
    fields["pct_error"] = fmt1(report.pct_error);
    actual_block =
        "\n  Actual weight: {actual_kg} kg"
        " (absolute error of {abs_error_kg} kg, {pct_error}% of actual)";
  }

  std::string top3;
  std::size_t rank = 1;
  for (const ShapleyItem& item : top_by_magnitude(report.shapley, 3)) {
    top3 += "  " + std::to_string(rank++) + ". " + item.name + ": " + fmt1_signed(item.phi) +
            " kg\n";
  }
  fields["shapley_top3"] = top3;

  std::string tmpl =
      "Prediction Overview\n"
      "  Predicted weight: {prediction_kg} kg" +
      actual_block +
      "\n  Baseline prediction (metadata at baseline): {baseline_kg} kg\n"
      "\n"
      "Input Modality Influence\n"
      "  Visual features: {s_visual_pct}%\n"
      "  Metadata features: {s_meta_pct}%\n"
      "\n"
      "Top Metadata Drivers\n"
      "{shapley_top3}";
  return render_template(tmpl, fields);
}

ExplanationReport explain_record(const MwpModel& model, const Standardizer& stz,
                                 const Image& img, const RawGeometry& g, int category_index,
                                 int baseline_category, const double* actual_kg) {
  FeatureVector x = stz.transform(compute_features(g, category_index));
  ExplanationReport rep;
  rep.shapley = shapley_exact(model, img, x, baseline_category, &rep.prediction_kg,
                              &rep.baseline_prediction_kg);
  MwpModel::Trace trace;
  model.forward(img, x, false, nullptr, &trace);
  McrResult scores = mcr(trace.h_v, trace.h_m);
  rep.s_visual = scores.s_visual;
  rep.s_meta = scores.s_meta;
  if (actual_kg) {
    if (*actual_kg <= 0.0) throw DomainError("actual weight must be positive");
    rep.has_actual = true;
    rep.actual_kg = *actual_kg;
    rep.abs_error_kg = std::fabs(rep.prediction_kg - *actual_kg);
    rep.pct_error = 100.0 * rep.abs_error_kg / *actual_kg;
  }
  rep.rendered_text = render_report(rep);
  return rep;
}

namespace {

nlohmann::json prompt_json(const ExplanationReport& report, const char* model_name) {
  nlohmann::json j;
  j["prediction_kg"] = report.prediction_kg;
  j["baseline_prediction_kg"] = report.baseline_prediction_kg;
  j["s_visual"] = report.s_visual;
  j["s_meta"] = report.s_meta;
  j["shapley_top3"] = nlohmann::json::array();
  for (const ShapleyItem& item : top_by_magnitude(report.shapley, 3))
    j["shapley_top3"].push_back({{"name", item.name}, {"phi_kg", item.phi}});
  if (report.has_actual) j["actual_kg"] = report.actual_kg;
  if (model_name) j["model"] = model_name;
  return j;
}

}  // namespace

void append_external_narrative(ExplanationReport& report) {
  const char* url = std::getenv("XAI_ENDPOINT_URL");
  if (!url || !*url) return;  // narration is opt-in
  const char* model_name = std::getenv("XAI_MODEL");
  long timeout_ms = 3000;
  if (const char* t = std::getenv("XAI_TIMEOUT_MS")) {
    char* end = nullptr;
    long v = std::strtol(t, &end, 10);
    if (end && *end == '\0' && v > 0) timeout_ms = v;
  }

  std::string full(url);
  std::string base = full, path = "/";
  std::size_t scheme = full.find("://");
  std::size_t slash = scheme == std::string::npos ? full.find('/') : full.find('/', scheme + 3);
  if (slash != std::string::npos) {
    base = full.substr(0, slash);
    path = full.substr(slash);
  }

  httplib::Client client(base);
  client.set_connection_timeout(timeout_ms / 1000, (timeout_ms % 1000) * 1000);
  client.set_read_timeout(timeout_ms / 1000, (timeout_ms % 1000) * 1000);
  auto res = client.Post(path, prompt_json(report, model_name).dump(), "application/json");
  if (!res) {
    report.warnings.push_back("external narration failed: cannot reach " + base +
                              "; keeping template-only report");
    return;
  }
  if (res->status != 200) {
    report.warnings.push_back("external narration failed: HTTP " + std::to_string(res->status) +
                              "; keeping template-only report");
    return;
  }
  if (res->body.empty()) {
    report.warnings.push_back("external narration returned an empty body; keeping template-only report");
    return;
  }
  report.rendered_text += "\nExternal narrative:\n" + res->body;
  if (report.rendered_text.back() != '\n') report.rendered_text += "\n";
}

std::string explanation_json(const ExplanationReport& report) {
  nlohmann::json j;
  j["prediction_kg"] = report.prediction_kg;
  j["baseline_prediction_kg"] = report.baseline_prediction_kg;
  j["s_visual"] = report.s_visual;
  j["s_meta"] = report.s_meta;
  if (report.has_actual) {
    j["actual_kg"] = report.actual_kg;
    j["abs_error_kg"] = report.abs_error_kg;
    j["pct_error"] = report.pct_error;
  }
  double phi_sum = 0.0;
  j["shapley"] = nlohmann::json::array();
  for (const ShapleyItem& item : report.shapley) {
    j["shapley"].push_back({{"name", item.name}, {"phi_kg", item.phi}});
    phi_sum += item.phi;
  }
  j["efficiency_residual"] =
      std::fabs(phi_sum - (report.prediction_kg - report.baseline_prediction_kg));
  if (!report.warnings.empty()) j["warnings"] = report.warnings;
  return j.dump(2);
}

}  // namespace mwp
