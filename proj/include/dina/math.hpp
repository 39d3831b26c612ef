#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "dina/errors.hpp"

namespace dina {

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& v) {
  using S = typename Derived::Scalar;
  const S m = v.maxCoeff();
  if (!std::isfinite(m)) return m;  // all -inf (or a nan/inf poisoned input)
  return m + std::log((v.derived().array() - m).exp().sum());
}

inline double log_sum_exp2(double a, double b) {
  const double m = a > b ? a : b;
  if (!std::isfinite(m)) return m;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Max-subtracted softmax; safe for large-magnitude logits and for -inf entries
// as long as one entry is finite.
template <typename Derived>
Eigen::Vector<typename Derived::Scalar, Eigen::Dynamic> softmax(
    const Eigen::MatrixBase<Derived>& logits) {
  using S = typename Derived::Scalar;
  Eigen::Vector<S, Eigen::Dynamic> out =
      (logits.derived().array() - logits.maxCoeff()).exp().matrix();
  out /= out.sum();
  return out;
}

// Temperature sharpening: q_k proportional to p_k^(1/T), computed in the log
// domain so tiny probabilities do not underflow before exponentiation.
template <typename Derived>
Eigen::Vector<typename Derived::Scalar, Eigen::Dynamic> sharpen(
    const Eigen::MatrixBase<Derived>& p, typename Derived::Scalar temperature) {
  using S = typename Derived::Scalar;
  if (!(temperature > S(0))) throw ConfigError("sharpen: temperature must be positive");
  Eigen::Vector<S, Eigen::Dynamic> lp =
      (p.derived().array().max(S(0)).log() / temperature).matrix();
  return softmax(lp);
}

// Lowest index wins ties.
template <typename Derived>
int argmax(const Eigen::MatrixBase<Derived>& v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return best;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace dina
