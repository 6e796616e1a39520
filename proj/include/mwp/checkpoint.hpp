#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mwp/features.hpp"
#include "mwp/tensor.hpp"

namespace mwp {

// Frozen training state: deep copies of every named array plus the scalars
// needed to resume bitwise-identically (single-threaded). `params` holds the
// raw weights and `ema` the shadow copies; inference loads the shadows.
struct Checkpoint {
  int format_version = 1;
  int epoch = 0;  // completed epochs
  std::int64_t step = 0;
  int best_epoch = 0;
  double best_val_mae = 0.0;
  std::uint64_t split_hash = 0;
  std::string rng_state;
  std::vector<std::string> vocab;
  std::map<std::string, std::string> config;
  Standardizer standardizer;
  std::map<std::string, Tensor> params, opt_m, opt_v, ema;
};

// Text header (`key value` lines, vocab and config entries repeated) followed
// by named sections: `section <name> dtype=f64 ndim=<n> extents=<e0,e1,...>`
// and the raw little-endian float64 payload.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mwp
