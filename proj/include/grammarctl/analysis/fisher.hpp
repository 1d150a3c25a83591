// Copyright 2026 The grammarctl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

namespace grammarctl::analysis {

// [[a, b], [c, d]]: rows are condition (with, without), columns outcome
// (present, absent).
struct Table2x2 {
  std::uint64_t a = 0, b = 0, c = 0, d = 0;
  std::uint64_t total() const { return a + b + c + d; }
};

struct FisherResult {
  double p_value = 1.0;
  double odds_ratio = std::numeric_limits<double>::quiet_NaN();
  bool undefined = false;  // all-zero table
};

namespace detail {

inline double log_choose(std::uint64_t n, std::uint64_t k) {
  return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
         std::lgamma(static_cast<double>(n - k) + 1.0);
}

}  // namespace detail

// Sample odds ratio; 0.5 is added to every cell when any cell is zero.
inline double odds_ratio(const Table2x2& t) {
  double a = static_cast<double>(t.a), b = static_cast<double>(t.b), c = static_cast<double>(t.c),
         d = static_cast<double>(t.d);
  if (t.a == 0 || t.b == 0 || t.c == 0 || t.d == 0) {
    a += 0.5;
    b += 0.5;
    c += 0.5;
    d += 0.5;
  }
  return (a * d) / (b * c);
}

// Two-sided exact test: sums the hypergeometric probabilities of all
// tables with the observed margins that are no more likely than the
// observed one (with a 1e-7 relative tolerance for ties).
inline FisherResult fisher_exact(const Table2x2& t) {
  FisherResult out;
  const auto n = t.total();
  if (n == 0) {
    out.undefined = true;
    return out;
  }
  out.odds_ratio = odds_ratio(t);
  const auto row1 = t.a + t.b, col1 = t.a + t.c;
  const auto lo = col1 > n - row1 ? col1 - (n - row1) : 0;
  const auto hi = std::min(row1, col1);
  const double denom = detail::log_choose(n, col1);
  auto logp = [&](std::uint64_t x) { return detail::log_choose(row1, x) + detail::log_choose(n - row1, col1 - x) - denom; };
  const double observed = logp(t.a);
  const double cutoff = observed + std::log1p(1e-7);
  double p = 0.0;
  for (auto x = lo; x <= hi; ++x) {
    const double lp = logp(x);
    if (lp <= cutoff) p += std::exp(lp);
  }
  out.p_value = std::min(1.0, p);
  return out;
}

}  // namespace grammarctl::analysis
