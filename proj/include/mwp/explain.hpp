#pragma once

#include <map>
#include <string>
#include <vector>

#include "mwp/features.hpp"
#include "mwp/image.hpp"
#include "mwp/model.hpp"
#include "mwp/tensor.hpp"

namespace mwp {

struct McrResult {
  double s_visual = 0.0;
  double s_meta = 0.0;
};

// Norm-based split of prediction influence between the two encoders:
// s_visual = |h_v| / (|h_v| + |h_m| + eps). The epsilon guards the all-zero
// case, so the two scores sum to slightly below one; it is small enough that
// the shortfall stays under 1e-8 once either norm reaches 1e-2. This is a
// heuristic ranking signal, not a causal attribution.
McrResult mcr(const Tensor& h_v, const Tensor& h_m, double eps = 1e-12);

struct ShapleyItem {
  std::string name;
  double phi = 0.0;
};

// Exact Shapley attribution over ten players: the nine standardized numeric
// features plus the category id. The image is held fixed; a coalition's value
// is the model's kg prediction with absent features at the baseline
// (standardized zero, i.e. the training mean, and the baseline category).
// All 1024 coalitions are enumerated, so efficiency holds by construction.
std::vector<ShapleyItem> shapley_exact(const MwpModel& model, const Image& img,
                                       const FeatureVector& x, int baseline_category,
                                       double* prediction = nullptr,
                                       double* baseline_prediction = nullptr);

struct ExplanationReport {
  double prediction_kg = 0.0;
  bool has_actual = false;
  double actual_kg = 0.0;
  double abs_error_kg = 0.0;
  double pct_error = 0.0;
  double s_visual = 0.0;
  double s_meta = 0.0;
  std::vector<ShapleyItem> shapley;  // input order: 9 features then category
  double baseline_prediction_kg = 0.0;
  std::string rendered_text;
  std::vector<std::string> warnings;
};

// Substitutes {name} placeholders; an unresolved placeholder is an error
// naming it.
std::string render_template(const std::string& tmpl,
                            const std::map<std::string, std::string>& fields);

std::string render_report(const ExplanationReport& report);

ExplanationReport explain_record(const MwpModel& model, const Standardizer& stz,
                                 const Image& img, const RawGeometry& g, int category_index,
                                 int baseline_category, const double* actual_kg = nullptr);

// POSTs the numeric context as JSON to the endpoint in XAI_ENDPOINT_URL (with
// XAI_MODEL / XAI_TIMEOUT_MS) and appends the reply to rendered_text. Any
// failure leaves the deterministic report intact and records a warning.
void append_external_narrative(ExplanationReport& report);

std::string explanation_json(const ExplanationReport& report);

}  // namespace mwp
