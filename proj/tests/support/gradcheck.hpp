// Copyright 2026 The Authors.
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
#include <functional>
#include <vector>

#include "gridgsp/autodiff.hpp"

namespace gridgsp::testing {

struct GradCheck {
  double max_rel_error = 0.0;
  int entries = 0;
};

// Central differences on every entry of every input; the relative error of an
// entry is |a - n| / max(|a|, |n|, floor).
inline GradCheck check_gradients(const std::vector<ad::Var>& inputs, const std::function<ad::Var()>& loss_fn,
                                 double step = 1e-5, double floor = 1e-6) {
  for (const auto& v : inputs) v->grad.resize(0, 0);
  const ad::Var loss = loss_fn();
  ad::backward(loss);
  GradCheck out;
  for (const auto& v : inputs) {
    const ad::Matrix analytic = v->grad.size() ? v->grad : ad::Matrix::Zero(v->rows(), v->cols());
    for (Eigen::Index k = 0; k < v->value.size(); ++k) {
      const double orig = v->value.data()[k];
      v->value.data()[k] = orig + step;
      const double up = loss_fn()->scalar();
      v->value.data()[k] = orig - step;
      const double down = loss_fn()->scalar();
      v->value.data()[k] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic.data()[k];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      out.max_rel_error = std::max(out.max_rel_error, std::abs(a - numeric) / denom);
      ++out.entries;
    }
  }
  return out;
}

}  // namespace gridgsp::testing
