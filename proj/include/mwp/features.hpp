#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

namespace mwp {

// Object extents and sensor-to-object offsets in one consistent length unit
// (centimeter-scale magnitudes); derived quantities use that unit as-is.
struct RawGeometry {
  double lx = 0, ly = 0, lz = 0;
  double dx = 0, dy = 0;
  void validate() const;  // all five strictly positive and finite
};

inline constexpr int kSelectedFeatureCount = 9;

// Engine input order for the selected features.
extern const std::array<const char*, kSelectedFeatureCount> kSelectedFeatureNames;

// Full candidate set in catalog order (computed for audit output).
extern const std::array<const char*, 15> kAllFeatureNames;

bool feature_is_selected(const std::string& name);

// All 15 candidate features; log-family entries use the ln(1 + x) convention,
// including both interaction terms.
std::map<std::string, double> compute_all_features(const RawGeometry& g);

struct FeatureVector {
  std::array<double, kSelectedFeatureCount> values{};
  int category_index = 0;
};

// Picks the 9 selected features out of a full candidate map; a missing key is
// a contract violation.
FeatureVector select_features(const std::map<std::string, double>& all, int category_index);

FeatureVector compute_features(const RawGeometry& g, int category_index);

// Per-feature z-score parameters fitted on the training split only
// (population standard deviation). Category index passes through untouched.
struct Standardizer {
  std::array<double, kSelectedFeatureCount> mean{};
  std::array<double, kSelectedFeatureCount> stdev{};

  FeatureVector transform(const FeatureVector& f) const;
  FeatureVector inverse(const FeatureVector& f) const;
};

Standardizer fit_standardizer(const std::vector<FeatureVector>& train);

double target_log(double weight);          // ln(1 + y), y >= 0
double target_log_inverse(double z);       // exp(z) - 1

}  // namespace mwp
