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

// Measurements over trained (or stub) predictors.
//
// A Predictor maps bags to ForwardOutputs and says whether it emits
// intermediate results. ModelPredictor adapts a Model; tests supply stubs.

#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "capnet/dataset.hpp"
#include "capnet/error.hpp"
#include "capnet/model.hpp"
#include "capnet/oracle.hpp"
#include "capnet/rng.hpp"
#include "capnet/stats.hpp"

namespace capnet {

template <class P>
concept Predictor = requires(const P& p, std::span<const Bag> bags) {
  { p.predict(bags) } -> std::convertible_to<std::vector<ForwardOutput>>;
  { p.capacity() } -> std::convertible_to<bool>;
};

template <class P>
concept PrefixPredictor = Predictor<P> && requires(const P& p, std::span<const Bag> bags) {
  { p.prefix_predictions(bags) } -> std::convertible_to<std::vector<std::vector<double>>>;
};

class ModelPredictor {
 public:
  ModelPredictor(const Model& model, const Featurizer& feat) : model_(&model), feat_(&feat) {}

  std::vector<ForwardOutput> predict(std::span<const Bag> bags) const {
    return predict_all(*model_, bags, *feat_);
  }
  bool capacity() const { return model_->spec().capacity; }

  std::vector<std::vector<double>> prefix_predictions(std::span<const Bag> bags) const {
    std::vector<std::vector<double>> out(bags.size());
    std::map<std::size_t, std::vector<std::size_t>> by_size;
    for (std::size_t i = 0; i < bags.size(); ++i) {
      if (bags[i].size() == 0) throw ConfigError("prefix predictions of an empty bag");
      by_size[bags[i].size()].push_back(i);
    }
    for (const auto& [size, idx] : by_size) {
      std::vector<const Bag*> ptrs;
      for (std::size_t i : idx) ptrs.push_back(&bags[i]);
      auto res = model_->prefix_predictions(ptrs, *feat_);
      for (std::size_t k = 0; k < idx.size(); ++k) out[idx[k]] = std::move(res[k]);
    }
    return out;
  }

 private:
  const Model* model_;
  const Featurizer* feat_;
};

// Mean over bags of (prediction - label)^2, instances in stored order.
template <Predictor P>
double evaluate_mse(const P& p, std::span<const Bag> bags) {
  if (bags.empty()) throw ConfigError("evaluate_mse on an empty split");
  const auto preds = p.predict(bags);
  double sum = 0.0;
  for (std::size_t i = 0; i < bags.size(); ++i) {
    const double e = preds[i].prediction - bags[i].label;
    sum += e * e;
  }
  return sum / static_cast<double>(bags.size());
}

struct IntermediateEntry {
  OrderedSequence classes;
  std::vector<double> expected;
  std::vector<double> predicted;
  std::vector<double> delta;
};

struct IntermediateReport {
  std::vector<IntermediateEntry> entries;
  double mae = 0.0;
  bool pseudo = false;  // prefix differences of a non-capacity model
};

namespace detail {

inline IntermediateEntry make_entry(const TaskSpec& task, const Bag& bag,
                                    std::vector<double> predicted) {
  IntermediateEntry e;
  e.classes = bag.classes();
  for (std::int64_t v : decompose(task, e.classes)) e.expected.push_back(static_cast<double>(v));
  if (predicted.size() != e.expected.size()) {
    throw ShapeError("predictor returned " + std::to_string(predicted.size()) +
                     " intermediates for a bag of " + std::to_string(e.expected.size()));
  }
  e.predicted = std::move(predicted);
  for (std::size_t i = 0; i < e.expected.size(); ++i) {
    e.delta.push_back(std::abs(e.expected[i] - e.predicted[i]));
  }
  return e;
}

inline void finish_report(IntermediateReport& r) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& e : r.entries) {
    for (double d : e.delta) sum += d;
    n += e.delta.size();
  }
  r.mae = n ? sum / static_cast<double>(n) : 0.0;
}

}  // namespace detail

// Compares a capacity model's intermediates with the oracle decomposition
// under each bag's stored order.
template <Predictor P>
IntermediateReport intermediate_mae(const P& p, const TaskSpec& task, std::span<const Bag> bags) {
  if (!p.capacity()) {
    throw ConfigError("intermediate_mae needs a capacity model; use pseudo_intermediates");
  }
  IntermediateReport r;
  const auto preds = p.predict(bags);
  for (std::size_t i = 0; i < bags.size(); ++i) {
    r.entries.push_back(detail::make_entry(task, bags[i], preds[i].intermediates));
  }
  detail::finish_report(r);
  return r;
}

// Prefix-difference attributions: nu~_i = f(x_1..x_i) - f(x_1..x_{i-1}),
// with nu~_1 = f(x_1).
inline std::vector<double> prefix_differences(std::span<const double> prefix) {
  std::vector<double> out;
  double prev = 0.0;
  for (double v : prefix) {
    out.push_back(v - prev);
    prev = v;
  }
  return out;
}

template <PrefixPredictor P>
IntermediateReport pseudo_intermediates(const P& p, const TaskSpec& task,
                                        std::span<const Bag> bags) {
  for (const Bag& b : bags) {
    if (b.size() == 0) throw ConfigError("pseudo_intermediates of an empty bag");
  }
  IntermediateReport r;
  r.pseudo = true;
  const auto prefixes = p.prefix_predictions(bags);
  for (std::size_t i = 0; i < bags.size(); ++i) {
    r.entries.push_back(detail::make_entry(task, bags[i], prefix_differences(prefixes[i])));
  }
  detail::finish_report(r);
  return r;
}

// Capacity models report their own intermediates, everything else falls back
// to prefix differences.
template <PrefixPredictor P>
IntermediateReport intermediates_report(const P& p, const TaskSpec& task,
                                        std::span<const Bag> bags) {
  return p.capacity() ? intermediate_mae(p, task, bags) : pseudo_intermediates(p, task, bags);
}

// Re-orders every bag's instances with a seeded permutation (one stream per
// pass and bag) and re-evaluates the fixed predictor.
inline std::vector<Bag> permute_bags(std::span<const Bag> bags, std::uint64_t seed) {
  std::vector<Bag> out(bags.begin(), bags.end());
  for (std::size_t b = 0; b < out.size(); ++b) {
    Rng rng(derive_seed(seed, b));
    rng.shuffle(std::span<Instance>(out[b].instances));
  }
  return out;
}

template <Predictor P>
Aggregate permutation_sensitivity(const P& p, std::span<const Bag> bags, std::size_t k,
                                  std::uint64_t seed) {
  if (k < 2) throw ConfigError("permutation sensitivity needs k >= 2");
  std::vector<double> mse;
  for (std::size_t pass = 0; pass < k; ++pass) {
    const auto permuted = permute_bags(bags, derive_seed(seed, 0x5045524dULL + pass));
    mse.push_back(evaluate_mse(p, permuted));
  }
  return aggregate(mse);
}

// Fraction of bags whose prediction, rounded half away from zero, equals the
// label.
template <Predictor P>
double rounded_accuracy(const P& p, std::span<const Bag> bags) {
  if (bags.empty()) throw ConfigError("rounded_accuracy on an empty split");
  const auto preds = p.predict(bags);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < bags.size(); ++i) {
    if (std::round(preds[i].prediction) == bags[i].label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(bags.size());
}

// One JSON object per bag: {"classes", "expected", "predicted"}.
inline std::string intermediates_jsonl(const IntermediateReport& r) {
  std::string out;
  for (const auto& e : r.entries) {
    nlohmann::ordered_json j = {
        {"classes", e.classes}, {"expected", e.expected}, {"predicted", e.predicted}};
    out += j.dump() + '\n';
  }
  return out;
}

// Plain CSV table writer.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  void add(std::vector<std::string> row) {
    if (row.size() != header_.size()) {
      throw ShapeError("CSV row has " + std::to_string(row.size()) + " cells, header has " +
                       std::to_string(header_.size()));
    }
    rows_.push_back(std::move(row));
  }

  std::size_t rows() const { return rows_.size(); }

  std::string str() const {
    std::ostringstream out;
    write_row(out, header_);
    for (const auto& r : rows_) write_row(out, r);
    return out.str();
  }

 private:
  static void write_row(std::ostringstream& out, const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << '\n';
  }

  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace capnet
