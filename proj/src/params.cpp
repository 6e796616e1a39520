#include "mwp/params.hpp"

#include <cmath>

#include "mwp/errors.hpp"
#include "mwp/rng.hpp"

namespace mwp {

Tensor ParamStore::add(const std::string& name, Tensor t, ParamGroup group) {
  if (params_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  t.set_requires_grad(true);
  order_.push_back(name);
  params_.emplace(name, t);
  groups_.emplace(name, group);
  return t;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

ParamGroup ParamStore::group_of(const std::string& name) const {
  auto it = groups_.find(name);
  if (it == groups_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

std::vector<std::string> ParamStore::names_in(ParamGroup group) const {
  std::vector<std::string> out;
  for (const std::string& n : order_)
    if (groups_.at(n) == group) out.push_back(n);
  return out;
}

std::size_t ParamStore::total_values() const {
  std::size_t n = 0;
  for (const std::string& name : order_) n += params_.at(name).numel();
  return n;
}

void ParamStore::zero_grads() {
  for (const std::string& name : order_) params_.at(name).zero_grad();
}

Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t = Tensor::zeros(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(-a, a);
  return t;
}

Tensor normal_init(Shape shape, double stddev, Rng& rng) {
  Tensor t = Tensor::zeros(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t.data()[i] = stddev * rng.normal();
  return t;
}

}  // namespace mwp
