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

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "slidealign/autograd.hpp"

namespace slidealign::testing {

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::string worst_block;
  int checked = 0;
  int blocks = 0;
};

/// Compares tape gradients with central differences on up to `per_block`
/// sampled entries of each block that receives a gradient.
/// rel = |a - n| / max(|a|, |n|, floor).
template <typename LossFn>
GradcheckResult gradcheck(ParamSet<double>& params, LossFn loss_fn, int per_block = 24, double h = 1e-5,
                          double floor = 1e-6, std::uint64_t seed = 7) {
  std::map<std::string, MatrixD> analytic;
  {
    Tape<double> tape;
    auto loss = loss_fn(tape, params);
    tape.backward(loss);
    analytic = tape.param_grads();
  }
  auto eval = [&]() {
    Tape<double> tape(false);
    return loss_fn(tape, params).value()(0, 0);
  };
  GradcheckResult res;
  Rng rng(seed);
  for (auto& [name, g] : analytic) {
    MatrixD& p = params.at(name);
    ++res.blocks;
    const Eigen::Index n = p.size();
    std::vector<Eigen::Index> idx;
    if (n <= per_block) {
      for (Eigen::Index i = 0; i < n; ++i) idx.push_back(i);
    } else {
      for (int k = 0; k < per_block; ++k) idx.push_back(static_cast<Eigen::Index>(uniform_index(rng, n)));
    }
    for (Eigen::Index i : idx) {
      const double orig = p.data()[i];
      p.data()[i] = orig + h;
      const double up = eval();
      p.data()[i] = orig - h;
      const double down = eval();
      p.data()[i] = orig;
      const double num = (up - down) / (2 * h);
      const double a = g.data()[i];
      const double rel = std::fabs(a - num) / std::max({std::fabs(a), std::fabs(num), floor});
      ++res.checked;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_block = name;
      }
    }
  }
  return res;
}

}  // namespace slidealign::testing
