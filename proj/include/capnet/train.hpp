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

// Mini-batch training with Adam and the squared-hinge intermediate penalty.

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "capnet/adam.hpp"
#include "capnet/autodiff.hpp"
#include "capnet/dataset.hpp"
#include "capnet/error.hpp"
#include "capnet/model.hpp"
#include "capnet/rng.hpp"
#include "capnet/stats.hpp"

namespace capnet {

struct RunConfig {
  std::string dataset;  // dataset directory (unused when training in memory)
  ModelSpec model;
  double lr = 0.001;
  std::size_t batch_size = 200;
  std::size_t epochs = 50;
  std::uint64_t seed = 1;
  double reg_lambda = 0.0;
  double reg_threshold = 1.0;
  bool shuffle_instances_per_epoch = true;
  // Wall time is written to the metrics CSV only when set; otherwise the
  // seconds column is 0 so identical runs produce identical files.
  bool log_wall_time = false;

  void validate() const {
    model.validate();
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be a positive number");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (epochs == 0) throw ConfigError("epochs must be >= 1");
    if (!(reg_lambda >= 0.0)) throw ConfigError("reg_lambda must be >= 0");
    if (reg_lambda > 0.0 && !model.capacity) {
      throw ConfigError("reg_lambda > 0 penalizes intermediate results and needs a capacity model (" +
                        model.label() + " has none)");
    }
  }

  void validate_for(std::size_t train_size) const {
    validate();
    if (batch_size > train_size) {
      throw ConfigError("batch_size " + std::to_string(batch_size) +
                        " exceeds the training set size " + std::to_string(train_size));
    }
  }
};

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  return {{"dataset", c.dataset},
          {"model", to_json(c.model)},
          {"lr", c.lr},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"reg_lambda", c.reg_lambda},
          {"reg_threshold", c.reg_threshold},
          {"shuffle_instances_per_epoch", c.shuffle_instances_per_epoch},
          {"log_wall_time", c.log_wall_time}};
}

template <class Json>
RunConfig run_config_from_json(const Json& j) {
  try {
    RunConfig c;
    c.dataset = j.value("dataset", std::string());
    c.model = model_spec_from_json(j.at("model"));
    c.lr = j.value("lr", 0.001);
    c.batch_size = j.value("batch_size", std::size_t{200});
    c.epochs = j.value("epochs", std::size_t{50});
    c.seed = j.value("seed", std::uint64_t{1});
    c.reg_lambda = j.value("reg_lambda", 0.0);
    c.reg_threshold = j.value("reg_threshold", 1.0);
    c.shuffle_instances_per_epoch = j.value("shuffle_instances_per_epoch", true);
    c.log_wall_time = j.value("log_wall_time", false);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
}

// Squared error and intermediate penalty of one bag.
struct LossTerms {
  double squared_error = 0.0;
  double penalty = 0.0;  // sum_i max(0, nu_i - tau)^2
  double total(double lambda) const { return squared_error + lambda * penalty; }
};

inline LossTerms loss_terms(const ForwardOutput& out, double label, double tau) {
  LossTerms t;
  t.squared_error = (out.prediction - label) * (out.prediction - label);
  for (double nu : out.intermediates) {
    const double excess = std::max(0.0, nu - tau);
    t.penalty += excess * excess;
  }
  return t;
}

// (prediction - label)^2 + lambda * sum_i max(0, nu_i - tau)^2.
inline double compute_loss(const ForwardOutput& out, double label, double lambda, double tau) {
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  return loss_terms(out, label, tau).total(lambda);
}

struct MetricsRecord {
  std::size_t epoch = 0;
  SplitKind split = SplitKind::kTrain;
  double mse = 0.0;
  double penalty = 0.0;  // mean per-bag penalty
  double seconds = 0.0;
};

inline constexpr const char* kMetricsHeader = "epoch,split,mse,penalty,seconds";

inline std::string metrics_csv(std::span<const MetricsRecord> history) {
  std::ostringstream out;
  out << kMetricsHeader << '\n';
  for (const auto& r : history) {
    out << r.epoch << ',' << split_name(r.split) << ',' << format_double(r.mse) << ','
        << format_double(r.penalty) << ',' << format_double(r.seconds) << '\n';
  }
  return out.str();
}

// Mean squared error and mean penalty of `model` over `bags` in stored order.
inline LossTerms mean_loss_terms(const Model& model, std::span<const Bag> bags,
                                 const Featurizer& feat, double tau) {
  LossTerms sum;
  const auto preds = predict_all(model, bags, feat);
  for (std::size_t i = 0; i < bags.size(); ++i) {
    const LossTerms t = loss_terms(preds[i], bags[i].label, tau);
    sum.squared_error += t.squared_error;
    sum.penalty += t.penalty;
  }
  const double n = static_cast<double>(std::max<std::size_t>(bags.size(), 1));
  return {sum.squared_error / n, sum.penalty / n};
}

struct TrainResult {
  std::vector<MetricsRecord> history;
  Model model;
  double final_val_mse = 0.0;
};

// Called after each epoch with that epoch's records (train, val).
using EpochCallback = std::function<void(const MetricsRecord& train, const MetricsRecord& val)>;

namespace detail {

// Records the batch loss of a group of equally sized bags on `tape`. The
// penalty enters the graph only when lambda > 0 but is always measured.
struct GroupLoss {
  ad::Var squared;
  ad::Var penalty;
  bool has_penalty = false;
  double penalty_value = 0.0;
};

inline GroupLoss group_loss(ad::Tape& tape, const Model& model, std::span<const Bag* const> bags,
                            const Featurizer& feat, double lambda, double tau) {
  const std::size_t batch = bags.size(), steps = bags.front()->size();
  const GraphOutput g = model.graph(tape, assemble_batch(bags, feat), batch, steps);
  Tensor labels(Shape{batch, 1});
  for (std::size_t b = 0; b < batch; ++b) labels[b] = bags[b]->label;
  GroupLoss out;
  out.squared = ad::sum_all(ad::square(ad::sub(g.prediction, tape.constant(labels))));
  for (const ad::Var& nu : g.intermediates) {
    for (double v : nu.value().data()) {
      const double excess = std::max(0.0, v - tau);
      out.penalty_value += excess * excess;
    }
    if (lambda > 0.0) {
      ad::Var p = ad::sum_all(ad::square(ad::relu(ad::affine(nu, 1.0, -tau))));
      out.penalty = out.has_penalty ? ad::add(out.penalty, p) : p;
      out.has_penalty = true;
    }
  }
  return out;
}

}  // namespace detail

// Trains a fresh model on `ds.train`, validating on `ds.val` after every
// epoch. Deterministic given (config, dataset).
inline TrainResult train_run(const RunConfig& config, const Dataset& ds, const Featurizer& feat,
                             const EpochCallback& on_epoch = {}) {
  config.validate_for(ds.train.size());
  if (config.model.input_dim != feat.input_dim()) {
    throw ConfigError("model input_dim " + std::to_string(config.model.input_dim) +
                      " does not match the dataset feature size " +
                      std::to_string(feat.input_dim()));
  }
  TrainResult result{{}, Model(config.model, derive_seed(config.seed, 1)), 0.0};
  Model& model = result.model;
  Adam adam(AdamOptions{config.lr});
  const double lambda = config.reg_lambda, tau = config.reg_threshold;
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    if (!config.log_wall_time) return 0.0;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  std::vector<Bag> work(ds.train.begin(), ds.train.end());
  std::vector<std::size_t> order(work.size());
  std::size_t batch_id = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, 1000 + epoch));
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    if (config.shuffle_instances_per_epoch) {
      for (std::size_t i = 0; i < work.size(); ++i) {
        work[i].instances = ds.train[i].instances;
        rng.shuffle(std::span<Instance>(work[i].instances));
      }
    }

    double epoch_sq = 0.0, epoch_pen = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size, ++batch_id) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::map<std::size_t, std::vector<const Bag*>> groups;
      for (std::size_t k = begin; k < end; ++k) {
        const Bag& bag = work[order[k]];
        if (bag.size() == 0) throw ConfigError("training bags must be non-empty");
        groups[bag.size()].push_back(&bag);
      }
      ad::Tape tape;
      ad::Var squared, penalty;
      bool first = true, has_penalty = false;
      double penalty_value = 0.0;
      for (const auto& [size, bags] : groups) {
        detail::GroupLoss gl = detail::group_loss(tape, model, bags, feat, lambda, tau);
        squared = first ? gl.squared : ad::add(squared, gl.squared);
        first = false;
        penalty_value += gl.penalty_value;
        if (gl.has_penalty) {
          penalty = has_penalty ? ad::add(penalty, gl.penalty) : gl.penalty;
          has_penalty = true;
        }
      }
      const double n = static_cast<double>(end - begin);
      ad::Var total = squared;
      if (has_penalty) total = ad::add(total, ad::affine(penalty, lambda, 0.0));
      ad::Var loss = ad::affine(total, 1.0 / n, 0.0);
      const double loss_value = loss.value().item();
      if (!std::isfinite(loss_value)) {
        throw RuntimeFailure("non-finite loss in batch " + std::to_string(batch_id) +
                             " (epoch " + std::to_string(epoch) + ")");
      }
      tape.backward(loss);
      adam.step(model.params());
      epoch_sq += squared.value().item();
      epoch_pen += penalty_value;
    }

    const double n_train = static_cast<double>(work.size());
    MetricsRecord train_rec{epoch, SplitKind::kTrain, epoch_sq / n_train, epoch_pen / n_train,
                            elapsed()};
    const LossTerms val = mean_loss_terms(model, ds.val, feat, tau);
    MetricsRecord val_rec{epoch, SplitKind::kVal, val.squared_error, val.penalty, elapsed()};
    result.history.push_back(train_rec);
    result.history.push_back(val_rec);
    result.final_val_mse = val.squared_error;
    if (on_epoch) on_epoch(train_rec, val_rec);
  }
  return result;
}

struct SeedRun {
  std::uint64_t seed = 0;
  double val_mse = 0.0;
  double test_mse = 0.0;
};

struct MultiSeedResult {
  std::vector<SeedRun> runs;
  Aggregate val;
  Aggregate test;
};

// Trains once per seed and aggregates final validation and test MSE.
inline MultiSeedResult multi_seed(const RunConfig& config, const Dataset& ds,
                                  const Featurizer& feat, std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw ConfigError("multi_seed needs at least one seed");
  MultiSeedResult out;
  std::vector<double> val, test;
  for (std::uint64_t seed : seeds) {
    RunConfig c = config;
    c.seed = seed;
    TrainResult r = train_run(c, ds, feat);
    const double test_mse = mean_loss_terms(r.model, ds.test, feat, c.reg_threshold).squared_error;
    out.runs.push_back({seed, r.final_val_mse, test_mse});
    val.push_back(r.final_val_mse);
    test.push_back(test_mse);
  }
  out.val = aggregate(val);
  out.test = aggregate(test);
  return out;
}

}  // namespace capnet
