#include "mwp/features.hpp"

#include <algorithm>
#include <cmath>

#include "mwp/errors.hpp"

namespace mwp {

const std::array<const char*, kSelectedFeatureCount> kSelectedFeatureNames = {
    "log_volume", "log_max_dim", "compactness", "log_vol_surf", "elongation",
    "aspect_xy",  "aspect_yz",   "surf_sphere", "log_dist"};

const std::array<const char*, 15> kAllFeatureNames = {
    "log_volume",  "log_surf_area", "log_max_dim", "log_geo_mean", "compactness",
    "log_vol_surf", "elongation",   "aspect_xy",   "aspect_yz",    "sphericity",
    "flatness",    "surf_sphere",   "vol_compact", "log_dist",     "log_app_vol"};

bool feature_is_selected(const std::string& name) {
  for (const char* s : kSelectedFeatureNames)
    if (name == s) return true;
  return false;
}

void RawGeometry::validate() const {
  auto bad = [](double v) { return !(v > 0.0) || !std::isfinite(v); };
  if (bad(lx) || bad(ly) || bad(lz))
    throw ValidationError("geometry extents must be strictly positive and finite");
  if (bad(dx) || bad(dy))
    throw ValidationError("geometry distances must be strictly positive and finite");
}

std::map<std::string, double> compute_all_features(const RawGeometry& g) {
  g.validate();

  double volume = g.lx * g.ly * g.lz;
  double surf = 2.0 * (g.lx * g.ly + g.ly * g.lz + g.lx * g.lz);

  double lmin = std::min({g.lx, g.ly, g.lz});
  double lmax = std::max({g.lx, g.ly, g.lz});
  double lmid = g.lx + g.ly + g.lz - lmin - lmax;

  // Dimensionless ratios are formed from extents normalized by the largest
  // one, so a common power-of-two rescale reproduces them bit for bit.
  double ux = g.lx / lmax, uy = g.ly / lmax, uz = g.lz / lmax;
  double uvol = ux * uy * uz;
  double usurf = 2.0 * (ux * uy + uy * uz + ux * uz);
  double sphericity = std::cbrt(3.141592653589793) * std::pow(6.0 * uvol, 2.0 / 3.0) / usurf;

  std::map<std::string, double> f;
  f["log_volume"] = std::log1p(volume);
  f["log_surf_area"] = std::log1p(surf);
  f["log_max_dim"] = std::log1p(lmax);
  f["log_geo_mean"] = std::log1p(std::cbrt(volume));
  f["compactness"] = lmin / lmax;
  f["log_vol_surf"] = std::log1p(volume / surf);
  f["elongation"] = lmax / lmid;
  f["aspect_xy"] = g.lx / g.ly;
  f["aspect_yz"] = g.ly / g.lz;
  f["sphericity"] = sphericity;
  f["flatness"] = lmin / lmid;
  f["surf_sphere"] = std::log1p(surf) * sphericity;
  f["vol_compact"] = std::log1p(volume) * (lmin / lmax);
  f["log_dist"] = std::log1p(std::hypot(g.dx, g.dy));
  f["log_app_vol"] = std::log1p(volume / (g.dx * g.dx));
  return f;
}

FeatureVector select_features(const std::map<std::string, double>& all, int category_index) {
  FeatureVector out;
  for (int i = 0; i < kSelectedFeatureCount; ++i) {
    auto it = all.find(kSelectedFeatureNames[i]);
    if (it == all.end())
      throw ValidationError(std::string("select_features: missing feature '") +
                            kSelectedFeatureNames[i] + "'");
    out.values[static_cast<std::size_t>(i)] = it->second;
  }
  out.category_index = category_index;
  return out;
}

FeatureVector compute_features(const RawGeometry& g, int category_index) {
  return select_features(compute_all_features(g), category_index);
}

FeatureVector Standardizer::transform(const FeatureVector& f) const {
  FeatureVector out = f;
  for (int i = 0; i < kSelectedFeatureCount; ++i) {
    auto j = static_cast<std::size_t>(i);
    out.values[j] = (f.values[j] - mean[j]) / stdev[j];
  }
  return out;
}

FeatureVector Standardizer::inverse(const FeatureVector& f) const {
  FeatureVector out = f;
  for (int i = 0; i < kSelectedFeatureCount; ++i) {
    auto j = static_cast<std::size_t>(i);
    out.values[j] = f.values[j] * stdev[j] + mean[j];
  }
  return out;
}

Standardizer fit_standardizer(const std::vector<FeatureVector>& train) {
  if (train.size() < 2)
    throw ValidationError("fit_standardizer: need at least two training rows");
  Standardizer s;
  double n = static_cast<double>(train.size());
  for (std::size_t j = 0; j < kSelectedFeatureCount; ++j) {
    double m = 0.0;
    for (const auto& f : train) m += f.values[j];
    m /= n;
    double var = 0.0;
    for (const auto& f : train) {
      double c = f.values[j] - m;
      var += c * c;
    }
    var /= n;
    double sd = std::sqrt(var);
    if (sd < 1e-12)
      throw ValidationError(std::string("fit_standardizer: degenerate feature '") +
                            kSelectedFeatureNames[j] + "' has near-zero variance");
    s.mean[j] = m;
    s.stdev[j] = sd;
  }
  return s;
}

double target_log(double weight) {
  if (weight < 0.0) throw DomainError("target_log: weight must be non-negative");
  return std::log1p(weight);
}

double target_log_inverse(double z) { return std::expm1(z); }

}  // namespace mwp
