// Copyright 2026 The CapNet Authors. All Rights Reserved.
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
#include <cstdint>
#include <map>
#include <string>

#include "capnet/error.hpp"
#include "capnet/params.hpp"

namespace capnet {

struct AdamOptions {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moments are created lazily on the first step and
// keyed by parameter path.
class Adam {
 public:
  explicit Adam(AdamOptions opts = {}) : opts_(opts) {}

  const AdamOptions& options() const { return opts_; }
  std::uint64_t step_count() const { return t_; }

  // Applies one update from the accumulated gradients, then clears them. Every
  // parameter must have received a gradient since the last step.
  void step(ParamStore& params) {
    for (const auto& [path, p] : params) {
      if (!p.has_grad) throw ConfigError("adam: missing gradient for parameter '" + path + "'");
    }
    ++t_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (auto& [path, p] : params) {
      auto it = moments_.find(path);
      if (it == moments_.end()) {
        it = moments_.emplace(path, Moments{Tensor(p.value.shape()), Tensor(p.value.shape())}).first;
      }
      Tensor& m = it->second.m;
      Tensor& v = it->second.v;
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g;
        v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g * g;
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        p.value[i] -= opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps);
      }
    }
    params.zero_grad();
  }

  const Tensor& first_moment(const std::string& path) const { return moments_.at(path).m; }
  const Tensor& second_moment(const std::string& path) const { return moments_.at(path).v; }

 private:
  struct Moments {
    Tensor m;
    Tensor v;
  };

  AdamOptions opts_;
  std::uint64_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace capnet
