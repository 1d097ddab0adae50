#pragma once

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mwpgen/container.hpp"
#include "mwpgen/tensor.hpp"

namespace mwpgen {

// Named, ordered collection of trainable tensors.
class ParameterStore {
 public:
  // Glorot-uniform init for matrices, zeros for vectors.
  Tensor& add(const std::string& name, Shape shape, std::mt19937_64& rng) {
    std::vector<double> v(shape_size(shape), 0.0);
    if (shape.size() == 2) {
      const double limit = std::sqrt(6.0 / double(shape[0] + shape[1]));
      std::uniform_real_distribution<double> u(-limit, limit);
      for (auto& x : v) x = u(rng);
    }
    return add(name, Tensor(std::move(shape), std::move(v)));
  }

  Tensor& add(const std::string& name, Tensor value) {
    if (params_.count(name)) throw Error("duplicate parameter '" + name + "'");
    value.set_requires_grad(true);
    return params_[name] = std::move(value);
  }

  const Tensor& operator[](const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second;
  }
  Tensor& operator[](const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

  std::size_t count_scalars() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : params_) {
      t.mutable_grad();
      t.zero_grad();
    }
  }

  void store(Container& c, const std::string& prefix = "param/") const {
    for (const auto& [name, t] : params_) c.put(prefix + name, t);
  }

  // Overwrites values in place; shapes and names must agree exactly.
  void load(const Container& c, const std::string& prefix = "param/") {
    std::size_t seen = 0;
    for (const auto& [key, a] : c.tensors) {
      if (key.rfind(prefix, 0) != 0) continue;
      ++seen;
      const auto name = key.substr(prefix.size());
      auto it = params_.find(name);
      if (it == params_.end()) throw FormatError("snapshot has unknown parameter '" + name + "'");
      if (it->second.shape() != a.shape)
        throw FormatError("parameter '" + name + "' has shape " + shape_string(a.shape) +
                          " in snapshot, expected " + shape_string(it->second.shape()));
      std::copy(a.values.begin(), a.values.end(), it->second.mutable_values().begin());
    }
    if (seen != params_.size()) throw FormatError("snapshot is missing parameters");
  }

 private:
  std::map<std::string, Tensor> params_;
};

}  // namespace mwpgen
