// Copyright 2026 The slidealign Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <map>
#include <string>

#include "slidealign/autograd.hpp"

namespace slidealign {

/// Linear warmup to `base` over `warmup` steps, then cosine decay to zero at
/// `max_steps`. Steps count from 1.
double warmup_cosine_lr(double base, long step, long warmup, long max_steps);

/// Rescales all gradients in place so their joint L2 norm is at most
/// `max_norm`; returns the norm before clipping.
template <typename T>
double clip_global_norm(std::map<std::string, Matrix<T>>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [k, g] : grads) sq += static_cast<double>(g.squaredNorm());
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& [k, g] : grads) g *= s;
  }
  return norm;
}

/// Weight decay applies to projection and embedding matrices only; biases,
/// layer-norm gains and the log-temperature are exempt.
bool decays(const std::string& param_name);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.998;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

/// Adaptive moments with decoupled weight decay. Blocks absent from the
/// gradient map are left untouched, moments included.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  void step(ParamSet<T>& params, const std::map<std::string, Matrix<T>>& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    for (const auto& [name, g] : grads) {
      Matrix<T>& p = params.at(name);
      auto& m = m_.try_emplace(name, Matrix<T>::Zero(p.rows(), p.cols())).first->second;
      auto& v = v_.try_emplace(name, Matrix<T>::Zero(p.rows(), p.cols())).first->second;
      m = b1 * m + (T(1) - b1) * g;
      v = b2 * v + (T(1) - b2) * g.cwiseProduct(g);
      const T step_size = static_cast<T>(lr / bc1);
      const T denom_scale = static_cast<T>(1.0 / std::sqrt(bc2));
      if (decays(name)) p *= static_cast<T>(1.0 - lr * cfg_.weight_decay);
      p.array() -= step_size * m.array() / (v.array().sqrt() * denom_scale + static_cast<T>(cfg_.eps));
    }
  }

  long steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  long t_ = 0;
  std::map<std::string, Matrix<T>> m_;
  std::map<std::string, Matrix<T>> v_;
};

}  // namespace slidealign
