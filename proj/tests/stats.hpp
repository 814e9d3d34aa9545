// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <boost/math/distributions/chi_squared.hpp>
#include <cstddef>
#include <vector>

namespace lcl::test {

/// Upper-tail p-value of Pearson's chi-square statistic for observed counts
/// against expected probabilities. Cells with tiny expectation are pooled into
/// their neighbour so every cell expects at least 5 counts.
inline double chi_square_p(const std::vector<std::size_t>& counts, const std::vector<double>& probs) {
  double total = 0;
  for (auto c : counts) total += static_cast<double>(c);
  std::vector<double> obs, exp;
  double o = 0, e = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    o += static_cast<double>(counts[i]);
    e += probs[i] * total;
    if (e >= 5.0) {
      obs.push_back(o);
      exp.push_back(e);
      o = e = 0;
    }
  }
  if (e > 0 || o > 0) {
    if (exp.empty()) {
      obs.push_back(o);
      exp.push_back(e);
    } else {
      obs.back() += o;
      exp.back() += e;
    }
  }
  double stat = 0;
  for (std::size_t i = 0; i < obs.size(); ++i) stat += (obs[i] - exp[i]) * (obs[i] - exp[i]) / exp[i];
  if (obs.size() < 2) return 1.0;
  boost::math::chi_squared dist(static_cast<double>(obs.size() - 1));
  return boost::math::cdf(boost::math::complement(dist, stat));
}

}  // namespace lcl::test
