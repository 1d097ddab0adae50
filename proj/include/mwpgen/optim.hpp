#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "mwpgen/container.hpp"
#include "mwpgen/parameters.hpp"

namespace mwpgen {

struct AdamConfig {
  double learning_rate = 0.0005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 5.0;  // <= 0 disables clipping
};

struct AdamState {
  std::size_t step = 0;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;

  void store(Container& c) const {
    c.integers["adam/step"] = {std::int64_t(step)};
    for (const auto& [name, x] : m) c.tensors["adam/m/" + name] = {{x.size()}, x};
    for (const auto& [name, x] : v) c.tensors["adam/v/" + name] = {{x.size()}, x};
  }
  static AdamState load(const Container& c) {
    AdamState s;
    s.step = std::size_t(c.ints("adam/step").at(0));
    for (const auto& [key, a] : c.tensors) {
      if (key.rfind("adam/m/", 0) == 0) s.m[key.substr(7)] = a.values;
      if (key.rfind("adam/v/", 0) == 0) s.v[key.substr(7)] = a.values;
    }
    return s;
  }
};

inline double global_grad_norm(const ParameterStore& params) {
  double sq = 0.0;
  for (const auto& [name, t] : params)
    for (double g : t.grad()) sq += g * g;
  return std::sqrt(sq);
}

// One bias-corrected Adam update over every parameter. The global gradient
// norm is clipped to config.clip_norm first. Returns the pre-clip norm.
inline double adam_step(ParameterStore& params, AdamState& state, const AdamConfig& config) {
  for (const auto& [name, t] : params)
    for (double g : t.grad())
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + name + "'");
  const double norm = global_grad_norm(params);
  const double scale = (config.clip_norm > 0 && norm > config.clip_norm) ? config.clip_norm / norm : 1.0;

  ++state.step;
  const double bc1 = 1.0 - std::pow(config.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, double(state.step));
  for (auto& [name, t] : params) {
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() != t.size()) m.assign(t.size(), 0.0), v.assign(t.size(), 0.0);
    auto g = t.grad();
    auto x = t.mutable_values();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double gi = g[i] * scale;
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
      x[i] -= config.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config.epsilon);
    }
  }
  return norm;
}

// Linear KL warmup: 0 at step 0, 1 from `warmup` on.
inline double kl_anneal_weight(std::size_t step, std::size_t warmup) {
  if (warmup == 0) return 1.0;
  return std::min(1.0, double(step) / double(warmup));
}

}  // namespace mwpgen
