#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mwp/features.hpp"
#include "mwp/image.hpp"

namespace mwp {

struct CategorySpec {
  std::string name;
  double share = 0.0;        // fraction of generated records
  double weight_min = 0.0;   // kg
  double weight_max = 0.0;
  double volume_min = 0.0;   // m^3
  double volume_max = 0.0;
  double density_lo = 0.0;   // kg/m^3, derived: weight_min / volume_max
  double density_hi = 0.0;   //                  weight_max / volume_min
  std::uint64_t texture_seed = 0;

  void derive_density_band();
  void validate() const;
};

// The 11 built-in categories; shares are count-derived so they sum to 1.
std::vector<CategorySpec> default_categories();

struct WasteRecord {
  std::int64_t id = 0;
  int category_index = 0;
  std::string category;
  RawGeometry geometry;
  double weight_kg = 0.0;
  Image image;
};

struct Dataset {
  std::vector<CategorySpec> categories;
  std::vector<WasteRecord> records;
  int image_side = 32;

  std::vector<std::string> vocabulary() const;
  int category_index_of(const std::string& name) const;  // -1 when unknown
};

struct GeneratorConfig {
  int n = 2000;
  std::uint64_t seed = 7;
  int image_side = 32;
  std::vector<CategorySpec> categories = default_categories();
};

// Floor quotas plus distribution of the remainder by largest fractional part
// (ties resolved by lower index). quotas must sum to total.
std::vector<std::size_t> apportion_largest_remainder(const std::vector<double>& quotas,
                                                     std::size_t total);

// Deterministic synthetic corpus; every record derives its own rng stream
// from hash(seed, id), so generation order is immaterial.
Dataset generate(const GeneratorConfig& cfg);

// Centered rectangle sized by apparent volume V/(D_x^2 + eps), tinted by a
// category hue, with texture luminance encoding the record's effective
// density position inside the category density band plus seeded pixel noise.
Image render_image(std::int64_t id, const RawGeometry& g, double weight_kg,
                   const CategorySpec& spec, int side);

struct SplitIndex {
  std::vector<std::int64_t> train, val, test;
  std::vector<std::string> warnings;
};

SplitIndex stratified_split(const Dataset& ds, double f_train, double f_val, double f_test,
                            std::uint64_t seed);

std::uint64_t split_hash(const SplitIndex& split);
void write_split_index(const std::filesystem::path& path, const SplitIndex& split);
SplitIndex load_split_index(const std::filesystem::path& path);

// metadata.csv + images/<id>.ppm + category_vocab.txt
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

// feature_name, pearson_r_vs_log_weight, selected  (diagnostic only)
void write_feature_audit(const Dataset& ds, const std::filesystem::path& path);

}  // namespace mwp
