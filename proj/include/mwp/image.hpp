#pragma once

#include <filesystem>
#include <vector>

namespace mwp {

class Rng;

inline constexpr double kImageBackground = 0.82;

// Square RGB image, interleaved row-major (y, x, channel), values in [0, 1]
// unless standardized.
struct Image {
  int side = 0;
  std::vector<double> data;

  static Image filled(int side, double value);
  double& at(int y, int x, int c) { return data[static_cast<std::size_t>((y * side + x) * 3 + c)]; }
  double at(int y, int x, int c) const {
    return data[static_cast<std::size_t>((y * side + x) * 3 + c)];
  }
  // Snaps every value onto the k/255 grid used by 8-bit storage.
  void quantize();
};

// Binary PPM (P6, maxval 255); bytes are round(p * 255).
void write_ppm(const std::filesystem::path& path, const Image& img);
Image read_ppm(const std::filesystem::path& path);

// Channel standardization with the ImageNet statistics.
Image normalize_imagenet(const Image& img);

struct AugmentConfig {
  double crop_scale_lo = 0.8;
  double crop_scale_hi = 1.0;
  double flip_prob = 0.5;
  double rotate_deg = 15.0;
  double erase_prob = 0.5;
  double erase_area_lo = 0.02;
  double erase_area_hi = 0.20;
};

// Random resized crop -> horizontal flip -> rotation (nearest neighbour)
// -> random erasing with per-pixel uniform noise. Deterministic per rng state.
Image augment(const Image& img, Rng& rng, const AugmentConfig& cfg = {});

}  // namespace mwp
