#include "mwp/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "mwp/errors.hpp"
#include "mwp/rng.hpp"

namespace mwp {
namespace {

constexpr double kAspectLo = 0.7, kAspectHi = 3.0;
constexpr double kLxMin = 12.0, kLxMax = 180.0;
constexpr double kLyMin = 12.0, kLyMax = 891.0;
constexpr double kLzMin = 6.0, kLzMax = 85.0;
constexpr double kDxMin = 24.0, kDxMax = 187.0;
constexpr double kDyMin = 12.0, kDyMax = 126.0;

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& s, const std::string& what, std::size_t line_no) {
  std::size_t consumed = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &consumed);
  } catch (const std::exception&) {
    throw ValidationError("metadata line " + std::to_string(line_no) + ": bad " + what + " '" +
                          s + "'");
  }
  if (consumed != s.size() || !std::isfinite(v)) {
    throw ValidationError("metadata line " + std::to_string(line_no) + ": bad " + what + " '" +
                          s + "'");
  }
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  h = h - std::floor(h);
  double c = v * s;
  double hp = h * 6.0;
  double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) {
    r = c;
    g = x;
  } else if (hp < 2) {
    r = x;
    g = c;
  } else if (hp < 3) {
    g = c;
    b = x;
  } else if (hp < 4) {
    g = x;
    b = c;
  } else if (hp < 5) {
    r = x;
    b = c;
  } else {
    r = c;
    b = x;
  }
  double m = v - c;
  rgb[0] = r + m;
  rgb[1] = g + m;
  rgb[2] = b + m;
}

double pixel_noise01(std::uint64_t texture_seed, std::int64_t id, std::uint64_t pixel_index) {
  std::uint64_t u =
      mix_seed(mix_seed(texture_seed, static_cast<std::uint64_t>(id)), pixel_index);
  return static_cast<double>(u >> 11) * 0x1.0p-53;
}

}  // namespace

void CategorySpec::derive_density_band() {
  density_lo = weight_min / volume_max;
  density_hi = weight_max / volume_min;
  if (density_lo > density_hi) std::swap(density_lo, density_hi);
}

void CategorySpec::validate() const {
  if (name.empty()) throw ConfigError("category with empty name");
  if (!(share >= 0.0) || !std::isfinite(share))
    throw ConfigError("category " + name + ": share must be a finite non-negative fraction");
  if (!(weight_min > 0.0) || !(weight_max >= weight_min))
    throw ConfigError("category " + name + ": weight band must satisfy 0 < min <= max");
  if (!(volume_min > 0.0) || !(volume_max >= volume_min))
    throw ConfigError("category " + name + ": volume band must satisfy 0 < min <= max");
}

std::vector<CategorySpec> default_categories() {
  struct Row {
    const char* name;
    double count, wmin, wmax, vmin, vmax;
  };
  static const Row rows[] = {
      {"Automotive Scrap", 3514, 3.5, 1610, 0.0039, 1.7820},
      {"Ferrous Metal", 3050, 9, 1850, 0.0010, 0.4189},
      {"Cardboard", 1094, 9.3, 355, 0.0084, 0.2930},
      {"Rigid Plastic", 799, 9, 210, 0.0284, 0.0884},
      {"Wood", 701, 52, 3450, 0.0162, 0.4885},
      {"General Trash", 336, 14, 28, 0.0240, 0.0790},
      {"Industrial Gas Cylinder", 202, 1245, 1245, 0.0262, 0.0262},
      {"Rubber", 200, 115, 115, 0.1010, 0.1010},
      {"Appliance", 200, 85, 85, 0.0671, 0.0671},
      {"Foam", 200, 46, 46, 0.1830, 0.1830},
      {"Battery", 125, 152, 152, 0.0043, 0.0043},
  };
  double total = 0;
  for (const Row& r : rows) total += r.count;
  std::vector<CategorySpec> out;
  out.reserve(std::size(rows));
  for (std::size_t i = 0; i < std::size(rows); ++i) {
    const Row& r = rows[i];
    CategorySpec spec;
    spec.name = r.name;
    spec.share = r.count / total;
    spec.weight_min = r.wmin;
    spec.weight_max = r.wmax;
    spec.volume_min = r.vmin;
    spec.volume_max = r.vmax;
    spec.texture_seed = i + 1;
    spec.derive_density_band();
    out.push_back(std::move(spec));
  }
  return out;
}

std::vector<std::string> Dataset::vocabulary() const {
  std::vector<std::string> names;
  names.reserve(categories.size());
  for (const CategorySpec& c : categories) names.push_back(c.name);
  return names;
}

int Dataset::category_index_of(const std::string& name) const {
  for (std::size_t i = 0; i < categories.size(); ++i)
    if (categories[i].name == name) return static_cast<int>(i);
  return -1;
}

std::vector<std::size_t> apportion_largest_remainder(const std::vector<double>& quotas,
                                                     std::size_t total) {
  std::vector<std::size_t> counts(quotas.size(), 0);
  std::vector<std::pair<double, std::size_t>> fractions;  // (-fraction, index) for stable sort
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < quotas.size(); ++i) {
    if (!(quotas[i] >= 0.0)) throw ConfigError("negative apportionment quota");
    double flo = std::floor(quotas[i]);
    counts[i] = static_cast<std::size_t>(flo);
    assigned += counts[i];
    fractions.emplace_back(-(quotas[i] - flo), i);
  }
  if (assigned > total) throw ConfigError("apportionment quotas exceed the total");
  std::stable_sort(fractions.begin(), fractions.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::size_t leftover = total - assigned;
  if (leftover > quotas.size())
    throw ConfigError("apportionment quotas sum too far below the total");
  for (std::size_t k = 0; k < leftover; ++k) counts[fractions[k].second] += 1;
  return counts;
}

Image render_image(std::int64_t id, const RawGeometry& g, double weight_kg,
                   const CategorySpec& spec, int side) {
  Image img = Image::filled(side, kImageBackground);
  double volume_cm3 = g.lx * g.ly * g.lz;
  double apparent = volume_cm3 / (g.dx * g.dx + 1.0);
  double area = 12.0 * apparent * (static_cast<double>(side) * side) / 1024.0;
  if (area < 1.0) {
    img.quantize();
    return img;
  }
  double max_area = 0.88 * side * 0.88 * side;
  area = std::min(area, max_area);

  double aspect = std::clamp(g.lx / g.ly, 0.25, 4.0);
  int max_extent = static_cast<int>(std::floor(0.92 * side));
  int w_px = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 1, max_extent);
  int h_px = std::clamp(static_cast<int>(std::lround(std::sqrt(area / aspect))), 1, max_extent);
  int x0 = (side - w_px) / 2;
  int y0 = (side - h_px) / 2;

  double hue = 0.61803398874989484 * static_cast<double>(spec.texture_seed + 1);
  double base[3];
  hsv_to_rgb(hue, 0.45, 1.0, base);

  // Luminance encodes where this record's effective density sits relative to
  // the category's typical density, so appearance carries a weight cue beyond
  // silhouette size. Normalizing against the full implied band would compress
  // the per-record spread (about half a nat) into a few grey levels, so the
  // scale is a fixed +-1.5 nats around the band's geometric centre instead.
  double rho_eff = weight_kg / (volume_cm3 * 1e-6);
  double brightness = 0.5;
  if (spec.density_lo > 0.0 && spec.density_hi > 0.0) {
    double rho_mid = std::sqrt(spec.density_lo * spec.density_hi);
    brightness = 0.5 + (std::log(rho_eff) - std::log(rho_mid)) / 3.0;
    brightness = std::clamp(brightness, 0.0, 1.0);
  }
  double lum = 0.16 + 0.76 * brightness;

  for (int y = y0; y < y0 + h_px; ++y) {
    for (int x = x0; x < x0 + w_px; ++x) {
      std::uint64_t pix = static_cast<std::uint64_t>(y) * static_cast<std::uint64_t>(side) +
                          static_cast<std::uint64_t>(x);
      double noise = (pixel_noise01(spec.texture_seed, id, pix) - 0.5) * 0.12;
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = std::clamp(base[c] * lum + noise, 0.0, 1.0);
    }
  }
  img.quantize();
  return img;
}

Dataset generate(const GeneratorConfig& cfg) {
  if (cfg.categories.empty()) throw ConfigError("generator needs at least one category");
  if (cfg.n < static_cast<int>(cfg.categories.size()))
    throw ConfigError("n=" + std::to_string(cfg.n) + " too small to cover all " +
                      std::to_string(cfg.categories.size()) + " categories");
  if (cfg.image_side < 8) throw ConfigError("image side must be at least 8");

  double share_sum = 0.0;
  std::vector<double> quotas;
  for (const CategorySpec& c : cfg.categories) {
    c.validate();
    share_sum += c.share;
    quotas.push_back(c.share * cfg.n);
  }
  if (std::fabs(share_sum - 1.0) > 1e-6)
    throw ConfigError("category shares sum to " + fmt_double(share_sum) + ", expected 1");

  std::vector<std::size_t> counts =
      apportion_largest_remainder(quotas, static_cast<std::size_t>(cfg.n));
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] == 0)
      throw ConfigError("n=" + std::to_string(cfg.n) + " too small to cover all categories (" +
                        cfg.categories[i].name + " would be empty)");
  }

  Dataset ds;
  ds.categories = cfg.categories;
  ds.image_side = cfg.image_side;
  ds.records.reserve(static_cast<std::size_t>(cfg.n));

  std::int64_t next_id = 1;
  for (std::size_t ci = 0; ci < cfg.categories.size(); ++ci) {
    const CategorySpec& spec = cfg.categories[ci];
    for (std::size_t k = 0; k < counts[ci]; ++k) {
      WasteRecord rec;
      rec.id = next_id++;
      rec.category_index = static_cast<int>(ci);
      rec.category = spec.name;

      Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(rec.id)));

      double volume_m3 = spec.volume_max > spec.volume_min
                             ? rng.log_uniform(spec.volume_min, spec.volume_max)
                             : spec.volume_min;
      double volume_cm3 = volume_m3 * 1e6;
      double a1 = rng.log_uniform(kAspectLo, kAspectHi);
      double a2 = rng.log_uniform(kAspectLo, kAspectHi);

      // Factor the target volume into extents with the sampled aspect ratios,
      // then walk the clamps in z, x, y order; each later axis re-absorbs the
      // volume so clamping earlier axes never changes the product.
      double ly = std::cbrt(volume_cm3 * a2 / a1);
      double lz = std::clamp(ly / a2, kLzMin, kLzMax);
      ly = std::sqrt(volume_cm3 / (lz * a1));
      double lx = std::clamp(a1 * ly, kLxMin, kLxMax);
      ly = std::clamp(volume_cm3 / (lx * lz), kLyMin, kLyMax);

      rec.geometry.lx = lx;
      rec.geometry.ly = ly;
      rec.geometry.lz = lz;
      rec.geometry.dx = rng.log_uniform(kDxMin, kDxMax);
      rec.geometry.dy = rng.log_uniform(kDyMin, kDyMax);
      rec.geometry.validate();

      if (spec.weight_max > spec.weight_min) {
        double actual_m3 = lx * ly * lz * 1e-6;
        double rho_mid =
            std::sqrt(spec.weight_min * spec.weight_max / (spec.volume_min * spec.volume_max));
        double rho = rho_mid * std::exp(0.4 * rng.normal());
        double fill = rng.uniform(0.5, 1.0);
        double noise = std::exp(0.05 * rng.normal());
        rec.weight_kg = std::clamp(rho * actual_m3 * fill * noise, spec.weight_min,
                                   spec.weight_max);
      } else {
        rec.weight_kg = spec.weight_min;
      }

      rec.image = render_image(rec.id, rec.geometry, rec.weight_kg, spec, cfg.image_side);
      ds.records.push_back(std::move(rec));
    }
  }
  return ds;
}

SplitIndex stratified_split(const Dataset& ds, double f_train, double f_val, double f_test,
                            std::uint64_t seed) {
  if (!(f_train >= 0.0) || !(f_val >= 0.0) || !(f_test >= 0.0))
    throw ConfigError("split fractions must be non-negative");
  if (std::fabs(f_train + f_val + f_test - 1.0) > 1e-9)
    throw ConfigError("split fractions must sum to 1");

  std::map<int, std::vector<std::int64_t>> by_category;
  for (const WasteRecord& r : ds.records) by_category[r.category_index].push_back(r.id);

  SplitIndex out;
  for (auto& [ci, ids] : by_category) {
    std::sort(ids.begin(), ids.end());
    std::string cname = ci >= 0 && ci < static_cast<int>(ds.categories.size())
                            ? ds.categories[static_cast<std::size_t>(ci)].name
                            : std::to_string(ci);
    if (ids.size() < 3) {
      out.warnings.push_back("category " + cname + ": only " + std::to_string(ids.size()) +
                             " samples, assigning all to train");
      out.train.insert(out.train.end(), ids.begin(), ids.end());
      continue;
    }
    Rng rng(mix_seed(mix_seed(seed, 0xC4E60A11ull), static_cast<std::uint64_t>(ci)));
    rng.shuffle(ids);
    double n = static_cast<double>(ids.size());
    std::vector<std::size_t> counts =
        apportion_largest_remainder({f_train * n, f_val * n, f_test * n}, ids.size());
    std::size_t a = counts[0], b = counts[0] + counts[1];
    out.train.insert(out.train.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(a));
    out.val.insert(out.val.end(), ids.begin() + static_cast<std::ptrdiff_t>(a),
                   ids.begin() + static_cast<std::ptrdiff_t>(b));
    out.test.insert(out.test.end(), ids.begin() + static_cast<std::ptrdiff_t>(b), ids.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

std::uint64_t split_hash(const SplitIndex& split) {
  std::ostringstream os;
  const char* names[3] = {"train", "val", "test"};
  const std::vector<std::int64_t>* lists[3] = {&split.train, &split.val, &split.test};
  for (int i = 0; i < 3; ++i) {
    os << names[i] << ':';
    for (std::int64_t id : *lists[i]) os << id << ',';
    os << ';';
  }
  return fnv1a64(os.str());
}

void write_split_index(const std::filesystem::path& path, const SplitIndex& split) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open split index for writing: " + path.string());
  const char* names[3] = {"train", "val", "test"};
  const std::vector<std::int64_t>* lists[3] = {&split.train, &split.val, &split.test};
  for (int i = 0; i < 3; ++i) {
    out << names[i] << ':';
    for (std::size_t k = 0; k < lists[i]->size(); ++k) out << ' ' << (*lists[i])[k];
    out << '\n';
  }
  if (!out) throw IoError("failed writing split index: " + path.string());
}

SplitIndex load_split_index(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open split index: " + path.string());
  SplitIndex out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto colon = line.find(':');
    if (colon == std::string::npos)
      throw ValidationError("split index line " + std::to_string(line_no) + ": missing ':'");
    std::string name = line.substr(0, colon);
    std::vector<std::int64_t>* list = nullptr;
    if (name == "train")
      list = &out.train;
    else if (name == "val")
      list = &out.val;
    else if (name == "test")
      list = &out.test;
    else
      throw ValidationError("split index line " + std::to_string(line_no) +
                            ": unknown split '" + name + "'");
    std::istringstream is(line.substr(colon + 1));
    std::int64_t id;
    while (is >> id) list->push_back(id);
    if (!is.eof())
      throw ValidationError("split index line " + std::to_string(line_no) + ": bad id list");
  }
  return out;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());

  {
    std::ofstream vocab(dir / "category_vocab.txt");
    if (!vocab) throw IoError("cannot write " + (dir / "category_vocab.txt").string());
    for (const CategorySpec& c : ds.categories) vocab << c.name << '\n';
    if (!vocab) throw IoError("failed writing category vocabulary");
  }

  std::ofstream meta(dir / "metadata.csv");
  if (!meta) throw IoError("cannot write " + (dir / "metadata.csv").string());
  meta << "id,category,L_x,L_y,L_z,D_x,D_y,weight_kg,image_path\n";
  for (const WasteRecord& r : ds.records) {
    std::string image_rel = "images/" + std::to_string(r.id) + ".ppm";
    meta << r.id << ',' << r.category << ',' << fmt_double(r.geometry.lx) << ','
         << fmt_double(r.geometry.ly) << ',' << fmt_double(r.geometry.lz) << ','
         << fmt_double(r.geometry.dx) << ',' << fmt_double(r.geometry.dy) << ','
         << fmt_double(r.weight_kg) << ',' << image_rel << '\n';
    write_ppm(dir / image_rel, r.image);
  }
  if (!meta) throw IoError("failed writing metadata.csv");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;

  {
    std::ifstream vocab(dir / "category_vocab.txt");
    if (!vocab) throw IoError("cannot open " + (dir / "category_vocab.txt").string());
    std::vector<CategorySpec> defaults = default_categories();
    std::string name;
    while (std::getline(vocab, name)) {
      if (!name.empty() && name.back() == '\r') name.pop_back();
      if (name.empty()) continue;
      auto it = std::find_if(defaults.begin(), defaults.end(),
                             [&](const CategorySpec& c) { return c.name == name; });
      if (it != defaults.end()) {
        ds.categories.push_back(*it);
      } else {
        CategorySpec bare;
        bare.name = name;
        ds.categories.push_back(std::move(bare));
      }
    }
  }
  if (ds.categories.empty()) throw ValidationError("category vocabulary is empty");

  std::ifstream meta(dir / "metadata.csv");
  if (!meta) throw IoError("cannot open " + (dir / "metadata.csv").string());
  std::string line;
  if (!std::getline(meta, line)) throw ValidationError("metadata.csv is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "id,category,L_x,L_y,L_z,D_x,D_y,weight_kg,image_path")
    throw ValidationError("metadata.csv line 1: unexpected header '" + line + "'");

  std::size_t line_no = 1;
  std::map<std::int64_t, bool> seen;
  while (std::getline(meta, line)) {
    ++line_no;
    if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
    std::vector<std::string> f = split_csv_line(line);
    if (f.size() != 9)
      throw ValidationError("metadata line " + std::to_string(line_no) + ": expected 9 fields, got " +
                            std::to_string(f.size()));
    WasteRecord rec;
    try {
      std::size_t consumed = 0;
      rec.id = std::stoll(f[0], &consumed);
      if (consumed != f[0].size()) throw std::invalid_argument(f[0]);
    } catch (const std::exception&) {
      throw ValidationError("metadata line " + std::to_string(line_no) + ": bad id '" + f[0] +
                            "'");
    }
    if (seen.count(rec.id))
      throw ValidationError("metadata line " + std::to_string(line_no) + ": duplicate id " +
                            std::to_string(rec.id));
    seen[rec.id] = true;

    rec.category = f[1];
    rec.category_index = ds.category_index_of(rec.category);
    if (rec.category_index < 0)
      throw ValidationError("metadata line " + std::to_string(line_no) + ": unknown category '" +
                            rec.category + "'");

    rec.geometry.lx = parse_double(f[2], "L_x", line_no);
    rec.geometry.ly = parse_double(f[3], "L_y", line_no);
    rec.geometry.lz = parse_double(f[4], "L_z", line_no);
    rec.geometry.dx = parse_double(f[5], "D_x", line_no);
    rec.geometry.dy = parse_double(f[6], "D_y", line_no);
    try {
      rec.geometry.validate();
    } catch (const ValidationError& e) {
      throw ValidationError("metadata line " + std::to_string(line_no) + ": " + e.what());
    }
    rec.weight_kg = parse_double(f[7], "weight_kg", line_no);
    if (!(rec.weight_kg > 0.0))
      throw ValidationError("metadata line " + std::to_string(line_no) +
                            ": weight_kg must be positive");

    std::filesystem::path image_path = dir / f[8];
    if (!std::filesystem::exists(image_path))
      throw IoError("record " + std::to_string(rec.id) + ": missing image file " +
                    image_path.string());
    rec.image = read_ppm(image_path);
    if (ds.records.empty()) {
      ds.image_side = rec.image.side;
    } else if (rec.image.side != ds.image_side) {
      throw ValidationError("record " + std::to_string(rec.id) + ": image side " +
                            std::to_string(rec.image.side) + " differs from dataset side " +
                            std::to_string(ds.image_side));
    }
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

void write_feature_audit(const Dataset& ds, const std::filesystem::path& path) {
  if (ds.records.empty()) throw ValidationError("feature audit needs a non-empty dataset");
  const std::size_t n = ds.records.size();
  std::vector<double> target(n);
  std::map<std::string, std::vector<double>> columns;
  for (const char* name : kAllFeatureNames) columns[name].resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto feats = compute_all_features(ds.records[i].geometry);
    for (const char* name : kAllFeatureNames) columns[name][i] = feats.at(name);
    target[i] = std::log1p(ds.records[i].weight_kg);
  }

  auto mean_of = [n](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
  };
  double ty = mean_of(target);
  double sy = 0.0;
  for (double v : target) sy += (v - ty) * (v - ty);

  std::ofstream out(path);
  if (!out) throw IoError("cannot write feature audit: " + path.string());
  out << "feature_name,pearson_r_vs_log_weight,selected\n";
  for (const char* name : kAllFeatureNames) {
    const std::vector<double>& col = columns[name];
    double tx = mean_of(col);
    double sx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sx += (col[i] - tx) * (col[i] - tx);
      sxy += (col[i] - tx) * (target[i] - ty);
    }
    double denom = std::sqrt(sx * sy);
    double r = denom > 1e-30 ? sxy / denom : 0.0;
    bool selected = std::find_if(kSelectedFeatureNames.begin(), kSelectedFeatureNames.end(),
                                 [&](const char* s) { return std::string(s) == name; }) !=
                    kSelectedFeatureNames.end();
    out << name << ',' << fmt_double(r) << ',' << (selected ? 1 : 0) << '\n';
  }
  if (!out) throw IoError("failed writing feature audit: " + path.string());
}

}  // namespace mwp
