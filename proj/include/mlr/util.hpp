#pragma once

#include <cmath>

namespace mlr {

// log(e^t + e^{-t}) = log(2 cosh t), overflow-free for any t.
inline double log2cosh(double t) {
  double a = std::abs(t);
  return a + std::log1p(std::exp(-2.0 * a));
}

// log(cosh t)
inline double log_cosh(double t) {
  constexpr double ln2 = 0.6931471805599453;
  return log2cosh(t) - ln2;
}

// 1 / (1 + e^{-t}) without overflow on either tail.
inline double logistic(double t) {
  if (t >= 0.0) {
    return 1.0 / (1.0 + std::exp(-t));
  }
  double e = std::exp(t);
  return e / (1.0 + e);
}

}  // namespace mlr
