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
#include <utility>

#include "capnet/error.hpp"
#include "capnet/rng.hpp"
#include "capnet/tensor.hpp"

namespace capnet {

// A learnable tensor and its gradient accumulator. The accumulator is mutable
// so forward passes can bind parameters of a const model; only backward()
// writes to it.
struct Parameter {
  Tensor value;
  mutable Tensor grad;
  mutable bool has_grad = false;
};

// Named learnable parameters, ordered by path so iteration (and therefore
// initialization, optimization and serialization) is deterministic.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed), rng_(seed) {}

  std::uint64_t seed() const { return seed_; }

  // Adds a parameter drawn uniformly from [-bound, bound].
  Parameter& add_uniform(const std::string& path, Shape shape, double bound) {
    Tensor value(std::move(shape));
    for (double& v : value.data()) v = rng_.uniform(-bound, bound);
    return add(path, std::move(value));
  }

  Parameter& add(const std::string& path, Tensor value) {
    if (frozen_) {
      throw ConfigError("parameter set is frozen; cannot add '" + path + "'");
    }
    if (params_.count(path)) {
      throw ConfigError("duplicate parameter path '" + path + "'");
    }
    Tensor grad(value.shape());
    auto [it, _] = params_.emplace(path, Parameter{std::move(value), std::move(grad), false});
    return it->second;
  }

  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }

  Parameter& at(const std::string& path) {
    auto it = params_.find(path);
    if (it == params_.end()) throw ConfigError("unknown parameter '" + path + "'");
    return it->second;
  }
  const Parameter& at(const std::string& path) const {
    auto it = params_.find(path);
    if (it == params_.end()) throw ConfigError("unknown parameter '" + path + "'");
    return it->second;
  }
  bool contains(const std::string& path) const { return params_.count(path) > 0; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t tensors() const { return params_.size(); }

  // Total number of scalar parameters.
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, p] : params_) {
      p.grad.fill(0.0);
      p.has_grad = false;
    }
  }

 private:
  std::uint64_t seed_;
  Rng rng_;
  bool frozen_ = false;
  std::map<std::string, Parameter> params_;
};

}  // namespace capnet
