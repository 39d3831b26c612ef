#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

namespace dina {

// Two-component 1-D Gaussian mixture over per-sample losses. Internally fit on
// min-max-normalized losses; mean_clean/mean_noisy are in that normalized
// domain, the *_raw accessors map back to the input loss scale.
struct LossGmm {
  double mean_clean = 0.0;
  double mean_noisy = 0.0;
  double var_clean = 0.0;
  double var_noisy = 0.0;
  double weight_clean = 0.5;
  double weight_noisy = 0.5;
  double norm_lo = 0.0;
  double norm_hi = 1.0;
  bool separated = false;              // false collapses co_divide to "all clean"
  Eigen::VectorXd clean_posterior;     // P(clean | loss_i), aligned with input
  std::vector<double> log_likelihoods;  // one entry per EM iteration

  double mean_clean_raw() const { return norm_lo + mean_clean * (norm_hi - norm_lo); }
  double mean_noisy_raw() const { return norm_lo + mean_noisy * (norm_hi - norm_lo); }
};

// EM fit: means initialized at the 0.25 / 0.75 quantiles, at most 100
// iterations, relative log-likelihood tolerance 1e-6, variance floor 1e-8.
// Mixtures whose means end up closer than 0.02 (normalized) are reported
// unseparated with every posterior forced to 1. Needs >= 10 finite samples.
LossGmm fit_loss_gmm(const Eigen::VectorXd& losses);

// Indices with clean posterior >= threshold, and the rest. Together they cover
// the input exactly once.
std::pair<std::vector<int>, std::vector<int>> co_divide(const LossGmm& gmm, double threshold);

}  // namespace dina
