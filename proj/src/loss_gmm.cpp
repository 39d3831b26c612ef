#include "dina/loss_gmm.hpp"

#include <algorithm>
#include <cmath>

#include "dina/errors.hpp"
#include "dina/math.hpp"

namespace dina {

namespace {
constexpr int kMaxIter = 100;
constexpr double kTol = 1e-6;
constexpr double kVarFloor = 1e-8;
constexpr double kMinGap = 0.02;

double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

double log_normal_pdf(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * std::log(2.0 * M_PI * var) - d * d / (2.0 * var);
}
}  // namespace

LossGmm fit_loss_gmm(const Eigen::VectorXd& losses) {
  const int n = static_cast<int>(losses.size());
  if (n < 10) throw ConfigError("fit_loss_gmm: need at least 10 samples");
  for (int i = 0; i < n; ++i) {
    if (!std::isfinite(losses(i))) throw ConfigError("fit_loss_gmm: losses must be finite");
  }

  LossGmm out;
  out.norm_lo = losses.minCoeff();
  out.norm_hi = losses.maxCoeff();

  if (out.norm_hi - out.norm_lo < 1e-12) {
    // Constant losses carry no split signal: everything is clean.
    out.mean_clean = out.mean_noisy = 0.0;
    out.var_clean = out.var_noisy = kVarFloor;
    out.separated = false;
    out.clean_posterior = Eigen::VectorXd::Ones(n);
    return out;
  }

  const Eigen::VectorXd x = (losses.array() - out.norm_lo) / (out.norm_hi - out.norm_lo);
  std::vector<double> sorted(x.data(), x.data() + n);
  std::sort(sorted.begin(), sorted.end());

  double mean[2] = {quantile_sorted(sorted, 0.25), quantile_sorted(sorted, 0.75)};
  const double global_var = std::max((x.array() - x.mean()).square().mean(), 1e-4);
  double var[2] = {global_var, global_var};
  double weight[2] = {0.5, 0.5};

  Eigen::MatrixXd resp(n, 2);
  for (int iter = 0; iter < kMaxIter; ++iter) {
    // E step
    double ll = 0.0;
    for (int i = 0; i < n; ++i) {
      const double l0 = std::log(weight[0]) + log_normal_pdf(x(i), mean[0], var[0]);
      const double l1 = std::log(weight[1]) + log_normal_pdf(x(i), mean[1], var[1]);
      const double lse = log_sum_exp2(l0, l1);
      resp(i, 0) = std::exp(l0 - lse);
      resp(i, 1) = std::exp(l1 - lse);
      ll += lse;
    }
    out.log_likelihoods.push_back(ll);
    // M step
    for (int c = 0; c < 2; ++c) {
      const double rc = resp.col(c).sum();
      if (rc <= 0.0) continue;  // dead component keeps its parameters
      weight[c] = rc / static_cast<double>(n);
      mean[c] = (resp.col(c).array() * x.array()).sum() / rc;
      var[c] = std::max(
          (resp.col(c).array() * (x.array() - mean[c]).square()).sum() / rc, kVarFloor);
    }
    const std::size_t t = out.log_likelihoods.size();
    if (t >= 2) {
      const double prev = out.log_likelihoods[t - 2];
      if (std::abs(ll - prev) / std::max(1.0, std::abs(prev)) < kTol) break;
    }
  }

  const int clean = mean[0] <= mean[1] ? 0 : 1;
  const int noisy = 1 - clean;
  out.mean_clean = mean[clean];
  out.mean_noisy = mean[noisy];
  out.var_clean = var[clean];
  out.var_noisy = var[noisy];
  out.weight_clean = weight[clean];
  out.weight_noisy = weight[noisy];

  if (out.mean_noisy - out.mean_clean < kMinGap) {
    out.separated = false;
    out.clean_posterior = Eigen::VectorXd::Ones(n);
    return out;
  }

  out.separated = true;
  out.clean_posterior.resize(n);
  for (int i = 0; i < n; ++i) {
    const double lc = std::log(out.weight_clean) + log_normal_pdf(x(i), out.mean_clean, out.var_clean);
    const double ln = std::log(out.weight_noisy) + log_normal_pdf(x(i), out.mean_noisy, out.var_noisy);
    out.clean_posterior(i) = std::exp(lc - log_sum_exp2(lc, ln));
  }
  return out;
}

std::pair<std::vector<int>, std::vector<int>> co_divide(const LossGmm& gmm, double threshold) {
  std::vector<int> clean, noisy;
  for (int i = 0; i < gmm.clean_posterior.size(); ++i) {
    if (gmm.clean_posterior(i) >= threshold) {
      clean.push_back(i);
    } else {
      noisy.push_back(i);
    }
  }
  return {std::move(clean), std::move(noisy)};
}

}  // namespace dina
