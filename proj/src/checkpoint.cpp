#include "mwp/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mwp/errors.hpp"

namespace mwp {

namespace {

constexpr const char* kMagic = "MWPCKPT";

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void append_f64_le(std::string& buf, double x) {
  std::uint64_t u;
  std::memcpy(&u, &x, 8);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

double read_f64_le(const unsigned char* p) {
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  double x;
  std::memcpy(&x, &u, 8);
  return x;
}

void write_section(std::ostream& os, const std::string& name, const Shape& shape,
                   const double* data, std::size_t n) {
  os << "section " << name << " dtype=f64 ndim=" << shape.size() << " extents=";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "\n";
  std::string buf;
  buf.reserve(n * 8);
  for (std::size_t i = 0; i < n; ++i) append_f64_le(buf, data[i]);
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

[[noreturn]] void malformed(const std::filesystem::path& path, const std::string& what) {
  throw ValidationError("malformed checkpoint " + path.string() + ": " + what);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint: " + path.string());
  os << kMagic << " " << ckpt.format_version << "\n";
  os << "epoch " << ckpt.epoch << "\n";
  os << "step " << ckpt.step << "\n";
  os << "best_epoch " << ckpt.best_epoch << "\n";
  os << "best_val_mae " << fmt_g(ckpt.best_val_mae) << "\n";
  os << "split_hash " << ckpt.split_hash << "\n";
  os << "rng " << ckpt.rng_state << "\n";
  for (const std::string& name : ckpt.vocab) os << "vocab " << name << "\n";
  for (const auto& [k, v] : ckpt.config) os << "config " << k << " " << v << "\n";
  std::size_t sections = ckpt.params.size() + ckpt.opt_m.size() + ckpt.opt_v.size() +
                         ckpt.ema.size() + 2;
  os << "sections " << sections << "\n";
  for (const auto& [n, t] : ckpt.params) write_section(os, "param." + n, t.shape(), t.data(), t.numel());
  for (const auto& [n, t] : ckpt.opt_m) write_section(os, "opt.m." + n, t.shape(), t.data(), t.numel());
  for (const auto& [n, t] : ckpt.opt_v) write_section(os, "opt.v." + n, t.shape(), t.data(), t.numel());
  for (const auto& [n, t] : ckpt.ema) write_section(os, "ema." + n, t.shape(), t.data(), t.numel());
  write_section(os, "standardizer.mean", {kSelectedFeatureCount}, ckpt.standardizer.mean.data(),
                kSelectedFeatureCount);
  write_section(os, "standardizer.stdev", {kSelectedFeatureCount}, ckpt.standardizer.stdev.data(),
                kSelectedFeatureCount);
  if (!os) throw IoError("write failed for checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  Checkpoint ckpt;
  std::string line;
  if (!std::getline(is, line)) malformed(path, "empty file");
  {
    std::istringstream hdr(line);
    std::string magic;
    hdr >> magic >> ckpt.format_version;
    if (magic != kMagic) malformed(path, "bad magic \"" + magic + "\"");
    if (ckpt.format_version != 1)
      malformed(path, "unsupported format version " + std::to_string(ckpt.format_version));
  }
  std::size_t sections = 0;
  while (std::getline(is, line)) {
    std::size_t sp = line.find(' ');
    std::string key = line.substr(0, sp);
    std::string rest = sp == std::string::npos ? "" : line.substr(sp + 1);
    if (key == "epoch")
      ckpt.epoch = std::stoi(rest);
    else if (key == "step")
      ckpt.step = std::stoll(rest);
    else if (key == "best_epoch")
      ckpt.best_epoch = std::stoi(rest);
    else if (key == "best_val_mae")
      ckpt.best_val_mae = std::strtod(rest.c_str(), nullptr);
    else if (key == "split_hash")
      ckpt.split_hash = std::stoull(rest);
    else if (key == "rng")
      ckpt.rng_state = rest;
    else if (key == "vocab")
      ckpt.vocab.push_back(rest);
    else if (key == "config") {
      std::size_t sp2 = rest.find(' ');
      if (sp2 == std::string::npos) malformed(path, "config line without value: " + line);
      ckpt.config[rest.substr(0, sp2)] = rest.substr(sp2 + 1);
    } else if (key == "sections") {
      sections = std::stoull(rest);
      break;
    } else {
      malformed(path, "unknown header key \"" + key + "\"");
    }
  }
  bool have_mean = false, have_stdev = false;
  for (std::size_t s = 0; s < sections; ++s) {
    if (!std::getline(is, line)) malformed(path, "truncated section table");
    std::istringstream hdr(line);
    std::string tag, name, dtype, ndim_s, extents_s;
    hdr >> tag >> name >> dtype >> ndim_s >> extents_s;
    if (tag != "section" || dtype != "dtype=f64" || ndim_s.rfind("ndim=", 0) != 0 ||
        extents_s.rfind("extents=", 0) != 0)
      malformed(path, "bad section header: " + line);
    std::size_t ndim = std::stoull(ndim_s.substr(5));
    Shape shape;
    std::string ext = extents_s.substr(8);
    std::size_t pos = 0;
    while (pos < ext.size()) {
      std::size_t comma = ext.find(',', pos);
      std::string tok = ext.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
      shape.push_back(std::stoull(tok));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (shape.size() != ndim) malformed(path, "extent count mismatch in section " + name);
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    std::vector<unsigned char> raw(n * 8);
    if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
      malformed(path, "truncated payload in section " + name);
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = read_f64_le(raw.data() + i * 8);
    if (name == "standardizer.mean" || name == "standardizer.stdev") {
      if (n != kSelectedFeatureCount) malformed(path, "standardizer section has wrong length");
      auto& arr = name == "standardizer.mean" ? ckpt.standardizer.mean : ckpt.standardizer.stdev;
      std::copy(values.begin(), values.end(), arr.begin());
      (name == "standardizer.mean" ? have_mean : have_stdev) = true;
      continue;
    }
    Tensor t = Tensor::from_vector(shape, std::move(values));
    if (name.rfind("param.", 0) == 0)
      ckpt.params.emplace(name.substr(6), t);
    else if (name.rfind("opt.m.", 0) == 0)
      ckpt.opt_m.emplace(name.substr(6), t);
    else if (name.rfind("opt.v.", 0) == 0)
      ckpt.opt_v.emplace(name.substr(6), t);
    else if (name.rfind("ema.", 0) == 0)
      ckpt.ema.emplace(name.substr(4), t);
    else
      malformed(path, "unknown section \"" + name + "\"");
  }
  if (!have_mean || !have_stdev) malformed(path, "standardizer sections missing");
  if (ckpt.params.empty()) malformed(path, "no parameter sections");
  return ckpt;
}

}  // namespace mwp
