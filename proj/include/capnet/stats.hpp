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

#include <algorithm>
#include <cmath>
#include <charconv>
#include <span>
#include <string>
#include <vector>

namespace capnet {

// Summary of repeated measurements. stdev is the sample standard deviation
// (n - 1 denominator) and 0 for a single value.
struct Aggregate {
  std::vector<double> values;
  double mean = 0.0;
  double median = 0.0;
  double stdev = 0.0;
  double min = 0.0;
  double max = 0.0;

  // (max - min) relative to max(|mean|, 1e-300).
  double relative_spread() const {
    return (max - min) / std::max(std::abs(mean), 1e-300);
  }
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline Aggregate aggregate(std::span<const double> values) {
  Aggregate a;
  a.values.assign(values.begin(), values.end());
  if (values.empty()) return a;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  a.min = *lo;
  a.max = *hi;
  a.median = median_of(a.values);
  if (a.min == a.max) {
    a.mean = a.min;  // exact, so identical runs report zero spread
    return a;
  }
  double sum = 0.0;
  for (double v : values) sum += v;
  a.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.stdev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return a;
}

// Shortest decimal that round-trips a double; keeps CSV output exact.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace capnet
