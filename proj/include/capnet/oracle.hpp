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

// Exact integer set functions over bags of class ids 0..9 and their
// sequential decomposition into per-instance added values.

#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "capnet/error.hpp"
#include "capnet/rng.hpp"

namespace capnet {

inline constexpr int kNumClasses = 10;
inline constexpr int kOracleVersion = 1;
inline constexpr std::int64_t kSynergyBonus = 10;
inline constexpr std::size_t kDefaultPairCount = 5;

enum class TaskKind { kUS, kWTri, kUSS, kUC, kTriC, kMult };

inline std::string task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::kUS: return "US";
    case TaskKind::kWTri: return "WTri";
    case TaskKind::kUSS: return "USS";
    case TaskKind::kUC: return "UC";
    case TaskKind::kTriC: return "TriC";
    case TaskKind::kMult: return "Mult";
  }
  return "?";
}

inline TaskKind parse_task(std::string_view name) {
  if (name == "US") return TaskKind::kUS;
  if (name == "WTri") return TaskKind::kWTri;
  if (name == "USS" || name == "US+S") return TaskKind::kUSS;
  if (name == "UC") return TaskKind::kUC;
  if (name == "TriC") return TaskKind::kTriC;
  if (name == "Mult") return TaskKind::kMult;
  throw ConfigError("unknown task '" + std::string(name) + "' (expected US, WTri, USS, UC, TriC or Mult)");
}

using ClassPair = std::pair<int, int>;

struct TaskSpec {
  TaskKind kind = TaskKind::kUS;
  std::vector<ClassPair> pair_set;  // USS only; sorted, c_i < c_j
  int class_lo = 0;
  int class_hi = kNumClasses - 1;

  static TaskSpec make(TaskKind kind, std::vector<ClassPair> pairs = {}) {
    TaskSpec t;
    t.kind = kind;
    t.pair_set = std::move(pairs);
    std::sort(t.pair_set.begin(), t.pair_set.end());
    if (kind == TaskKind::kMult) t.class_lo = 1;
    t.validate();
    return t;
  }

  void validate() const {
    if (class_lo < 0 || class_hi >= kNumClasses || class_lo > class_hi) {
      throw ConfigError("class range [" + std::to_string(class_lo) + ", " +
                        std::to_string(class_hi) + "] outside 0..9");
    }
    if (kind == TaskKind::kMult && class_lo < 1) {
      throw ConfigError("Mult class range must exclude class 0");
    }
    if (kind != TaskKind::kUSS && !pair_set.empty()) {
      throw ConfigError("pair set is only meaningful for the USS task");
    }
    for (std::size_t i = 0; i < pair_set.size(); ++i) {
      const auto [a, b] = pair_set[i];
      if (a < 0 || b >= kNumClasses || a >= b) {
        throw ConfigError("pair {" + std::to_string(a) + ", " + std::to_string(b) +
                          "} is not an unordered pair of distinct classes");
      }
      if (i > 0 && pair_set[i - 1] == pair_set[i]) throw ConfigError("duplicate pair in pair set");
    }
  }

  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

// count_X(c) for every class.
struct ClassMultiset {
  std::array<int, kNumClasses> counts{};

  static ClassMultiset of(std::span<const int> classes) {
    ClassMultiset m;
    for (int c : classes) m.add(c);
    return m;
  }

  void add(int c) {
    if (c < 0 || c >= kNumClasses) throw ConfigError("class id " + std::to_string(c) + " outside 0..9");
    ++counts[static_cast<std::size_t>(c)];
  }

  int count(int c) const { return counts[static_cast<std::size_t>(c)]; }
  bool contains(int c) const { return count(c) > 0; }

  int size() const {
    int n = 0;
    for (int k : counts) n += k;
    return n;
  }

  friend bool operator==(const ClassMultiset&, const ClassMultiset&) = default;
};

// Ordered view of a bag: class ids in feeding order.
using OrderedSequence = std::vector<int>;

constexpr std::int64_t triangular(std::int64_t m) { return m * (m + 1) / 2; }

// mu(X) for the given task. The empty multiset evaluates to 0 except under
// Mult, whose empty product is 1.
inline std::int64_t eval_task(const TaskSpec& task, const ClassMultiset& bag) {
  std::int64_t value = 0;
  switch (task.kind) {
    case TaskKind::kUS:
      for (int c = 0; c < kNumClasses; ++c) value += bag.contains(c) ? c : 0;
      break;
    case TaskKind::kWTri:
      for (int c = 0; c < kNumClasses; ++c) value += c * triangular(bag.count(c));
      break;
    case TaskKind::kUSS:
      for (int c = 0; c < kNumClasses; ++c) value += bag.contains(c) ? c : 0;
      for (const auto& [a, b] : task.pair_set) {
        if (bag.contains(a) && bag.contains(b)) value += kSynergyBonus;
      }
      break;
    case TaskKind::kUC:
      for (int c = 0; c < kNumClasses; ++c) value += bag.contains(c) ? 1 : 0;
      break;
    case TaskKind::kTriC:
      for (int c = 0; c < kNumClasses; ++c) value += triangular(bag.count(c));
      break;
    case TaskKind::kMult: {
      if (bag.contains(0)) {
        throw ConfigError("Mult task rejects class 0 (the product would not be monotone)");
      }
      value = 1;
      for (int c = 1; c < kNumClasses; ++c) {
        for (int k = 0; k < bag.count(c); ++k) {
          if (__builtin_mul_overflow(value, static_cast<std::int64_t>(c), &value)) {
            throw ConfigError("Mult label overflows 64-bit integers");
          }
        }
      }
      break;
    }
  }
  return value;
}

inline std::int64_t eval_task(const TaskSpec& task, std::span<const int> classes) {
  return eval_task(task, ClassMultiset::of(classes));
}

// Added values nu_i = mu(C_{i-1} + x_i) - mu(C_{i-1}) along the given order,
// with mu of the empty prefix taken as 0 for every task. The values telescope
// to eval_task of the whole bag.
inline std::vector<std::int64_t> decompose(const TaskSpec& task, std::span<const int> seq) {
  std::vector<std::int64_t> nu;
  nu.reserve(seq.size());
  ClassMultiset prefix;
  std::int64_t previous = 0;
  for (int c : seq) {
    prefix.add(c);
    const std::int64_t current = eval_task(task, prefix);
    nu.push_back(current - previous);
    previous = current;
  }
  return nu;
}

// All 45 unordered pairs in lexicographic order.
inline std::vector<ClassPair> all_class_pairs() {
  std::vector<ClassPair> pairs;
  for (int i = 0; i < kNumClasses; ++i)
    for (int j = i + 1; j < kNumClasses; ++j) pairs.emplace_back(i, j);
  return pairs;
}

// `count` distinct unordered pairs drawn uniformly without replacement,
// returned sorted.
inline std::vector<ClassPair> sample_pair_set(std::uint64_t seed, std::size_t count) {
  auto pairs = all_class_pairs();
  if (count > pairs.size()) {
    throw ConfigError("pair count " + std::to_string(count) + " exceeds the 45 available pairs");
  }
  Rng rng(derive_seed(seed, 0x5041495253ULL));
  rng.shuffle(std::span<ClassPair>(pairs));
  pairs.resize(count);
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

}  // namespace capnet
