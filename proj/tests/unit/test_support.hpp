// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "nasmc/nnet.hpp"
#include "nasmc/prng.hpp"

namespace nasmc::test {

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, RngStream& s, double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * s.std_normal();
  return m;
}

inline void jitter(ParamVector& p, RngStream& s, double scale) {
  for (double& v : p.values()) v += scale * s.std_normal();
}

/// Central differences, independent of the library's checker.
inline std::vector<double> numeric_gradient(const std::function<double(std::span<const double>)>& f,
                                            std::span<const double> x, double h = 1e-5) {
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> g(x.size());
  for (std::size_t k = 0; k < probe.size(); ++k) {
    const double orig = probe[k];
    probe[k] = orig + h;
    const double fp = f(probe);
    probe[k] = orig - h;
    const double fm = f(probe);
    probe[k] = orig;
    g[k] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Largest |a - n| / max(|a|, |n|, floor).
inline double max_rel_error(std::span<const double> a, std::span<const double> n,
                            double floor = 1e-4) {
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = std::max({std::abs(a[k]), std::abs(n[k]), floor});
    worst = std::max(worst, std::abs(a[k] - n[k]) / d);
  }
  return worst;
}

inline std::vector<double> values_of(const ParamVector& p) {
  return {p.values().begin(), p.values().end()};
}

}  // namespace nasmc::test
