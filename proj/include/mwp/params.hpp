#pragma once

#include <map>
#include <string>
#include <vector>

#include "mwp/tensor.hpp"

namespace mwp {

class Rng;

// Parameter grouping used by the two-phase training schedule: the visual
// backbone can be frozen while the rest keeps learning.
enum class ParamGroup { kBackbone, kFusionHead };

// Named registry of trainable tensors. Tensors are shared handles, so the
// registered entry and the copy held inside a layer struct alias the same
// storage; the optimizer and checkpointing only ever talk to the store.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor t, ParamGroup group);
  bool has(const std::string& name) const { return params_.count(name) > 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  ParamGroup group_of(const std::string& name) const;

  const std::vector<std::string>& names() const { return order_; }
  std::vector<std::string> names_in(ParamGroup group) const;
  std::size_t size() const { return order_.size(); }
  std::size_t total_values() const;

  void zero_grads();

 private:
  std::vector<std::string> order_;
  std::map<std::string, Tensor> params_;
  std::map<std::string, ParamGroup> groups_;
};

// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);
Tensor normal_init(Shape shape, double stddev, Rng& rng);

}  // namespace mwp
