#include "mwp/image.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>

#include "mwp/errors.hpp"
#include "mwp/rng.hpp"

namespace mwp {

namespace {

constexpr double kImagenetMean[3] = {0.485, 0.456, 0.406};
constexpr double kImagenetStd[3] = {0.229, 0.224, 0.225};

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

}  // namespace

Image Image::filled(int side, double value) {
  if (side <= 0) throw ValidationError("image side must be positive");
  Image img;
  img.side = side;
  img.data.assign(static_cast<std::size_t>(side) * side * 3, value);
  return img;
}

void Image::quantize() {
  for (auto& v : data) v = std::round(clamp01(v) * 255.0) / 255.0;
}

void write_ppm(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "P6\n" << img.side << ' ' << img.side << "\n255\n";
  std::vector<unsigned char> bytes;
  bytes.reserve(img.data.size());
  for (double v : img.data)
    bytes.push_back(static_cast<unsigned char>(std::lround(clamp01(v) * 255.0)));
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write: " + path.string());
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P6") throw IoError("not a binary PPM (P6): " + path.string());
  long w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  if (!in || w <= 0 || h <= 0 || w != h)
    throw IoError("unsupported PPM geometry in " + path.string());
  if (maxval != 255) throw IoError("unsupported PPM maxval in " + path.string());
  in.get();  // single whitespace after header
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw IoError("truncated PPM payload in " + path.string());
  Image img;
  img.side = static_cast<int>(w);
  img.data.resize(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = bytes[i] / 255.0;
  return img;
}

Image normalize_imagenet(const Image& img) {
  Image out = img;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    std::size_t c = i % 3;
    out.data[i] = (out.data[i] - kImagenetMean[c]) / kImagenetStd[c];
  }
  return out;
}

namespace {

Image crop_resize(const Image& img, int x0, int y0, int cw) {
  // Bilinear resize of the cw x cw window back to the full side.
  Image out = Image::filled(img.side, 0.0);
  int side = img.side;
  double step = static_cast<double>(cw) / side;
  for (int y = 0; y < side; ++y) {
    double sy = y0 + (y + 0.5) * step - 0.5;
    int iy = static_cast<int>(std::floor(sy));
    double fy = sy - iy;
    int y1 = std::min(std::max(iy, 0), side - 1);
    int y2 = std::min(y1 + 1, side - 1);
    for (int x = 0; x < side; ++x) {
      double sx = x0 + (x + 0.5) * step - 0.5;
      int ix = static_cast<int>(std::floor(sx));
      double fx = sx - ix;
      int x1 = std::min(std::max(ix, 0), side - 1);
      int x2 = std::min(x1 + 1, side - 1);
      for (int c = 0; c < 3; ++c) {
        double top = img.at(y1, x1, c) * (1 - fx) + img.at(y1, x2, c) * fx;
        double bot = img.at(y2, x1, c) * (1 - fx) + img.at(y2, x2, c) * fx;
        out.at(y, x, c) = top * (1 - fy) + bot * fy;
      }
    }
  }
  return out;
}

}  // namespace

Image augment(const Image& img, Rng& rng, const AugmentConfig& cfg) {
  int side = img.side;

  // 1. random resized crop (area scale, square window)
  double scale = rng.uniform(cfg.crop_scale_lo, cfg.crop_scale_hi);
  int cw = std::max(1, static_cast<int>(std::lround(side * std::sqrt(scale))));
  cw = std::min(cw, side);
  int x0 = static_cast<int>(rng.index(static_cast<std::size_t>(side - cw + 1)));
  int y0 = static_cast<int>(rng.index(static_cast<std::size_t>(side - cw + 1)));
  Image out = (cw == side && x0 == 0 && y0 == 0) ? img : crop_resize(img, x0, y0, cw);

  // 2. horizontal flip
  if (rng.bernoulli(cfg.flip_prob)) {
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side / 2; ++x)
        for (int c = 0; c < 3; ++c) std::swap(out.at(y, x, c), out.at(y, side - 1 - x, c));
  }

  // 3. rotation, nearest neighbour, background fill
  double deg = rng.uniform(-cfg.rotate_deg, cfg.rotate_deg);
  if (std::fabs(deg) > 1e-9) {
    double rad = deg * 3.141592653589793 / 180.0;
    double cs = std::cos(rad), sn = std::sin(rad);
    double cx = (side - 1) / 2.0, cy = (side - 1) / 2.0;
    Image rot = Image::filled(side, kImageBackground);
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) {
        double ux = cs * (x - cx) + sn * (y - cy) + cx;
        double uy = -sn * (x - cx) + cs * (y - cy) + cy;
        int sxi = static_cast<int>(std::lround(ux));
        int syi = static_cast<int>(std::lround(uy));
        if (sxi >= 0 && sxi < side && syi >= 0 && syi < side)
          for (int c = 0; c < 3; ++c) rot.at(y, x, c) = out.at(syi, sxi, c);
      }
    }
    out = rot;
  }

  // 4. random erasing with per-pixel uniform noise
  if (rng.bernoulli(cfg.erase_prob)) {
    double area = rng.uniform(cfg.erase_area_lo, cfg.erase_area_hi) * side * side;
    double ratio = rng.uniform(0.5, 2.0);
    int ew = std::max(1, std::min(side, static_cast<int>(std::lround(std::sqrt(area * ratio)))));
    int eh = std::max(1, std::min(side, static_cast<int>(std::lround(std::sqrt(area / ratio)))));
    int ex = static_cast<int>(rng.index(static_cast<std::size_t>(side - ew + 1)));
    int ey = static_cast<int>(rng.index(static_cast<std::size_t>(side - eh + 1)));
    for (int y = ey; y < ey + eh; ++y)
      for (int x = ex; x < ex + ew; ++x)
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = rng.uniform();
  }

  for (auto& v : out.data) v = clamp01(v);
  return out;
}

}  // namespace mwp
