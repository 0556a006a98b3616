#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "slotflow/autograd.hpp"
#include "slotflow/types.hpp"

namespace testing {

using slotflow::Index;
using slotflow::Mat;

inline Mat<double> random_matrix(std::mt19937_64& rng, Index rows, Index cols, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Mat<double> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

inline slotflow::Points random_cloud(std::mt19937_64& rng, Index n, double lo = -0.5, double hi = 0.5) {
  std::uniform_real_distribution<double> u(lo, hi);
  slotflow::Points p(n, 3);
  for (Index i = 0; i < p.size(); ++i) p.data()[i] = u(rng);
  return p;
}

/// Central differences of f at x, step h, one coordinate at a time.
inline Mat<double> numeric_gradient(const std::function<double(const Mat<double>&)>& f, Mat<double> x,
                                    double h = 1e-4) {
  Mat<double> g(x.rows(), x.cols());
  for (Index i = 0; i < x.size(); ++i) {
    const double orig = x.data()[i];
    x.data()[i] = orig + h;
    const double up = f(x);
    x.data()[i] = orig - h;
    const double down = f(x);
    x.data()[i] = orig;
    g.data()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Largest entrywise |a - n| / max(|a|, |n|, floor). The floor keeps entries whose
/// true gradient is essentially zero from dominating through round-off.
inline double max_relative_error(const Mat<double>& analytic, const Mat<double>& numeric, double floor = 1e-3) {
  double worst = 0.0;
  for (Index i = 0; i < analytic.size(); ++i) {
    const double a = analytic.data()[i], n = numeric.data()[i];
    worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor}));
  }
  return worst;
}

}  // namespace testing
