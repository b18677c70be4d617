#include "goblin/gp.hpp"

#include <algorithm>
#include <cmath>

namespace goblin {

GaussianProcess::GaussianProcess(GpConfig config) : config_(config) {}

double GaussianProcess::kernel(double a, double b) const {
  const double d = (a - b) / config_.length_scale;
  return std::exp(-0.5 * d * d);
}

void GaussianProcess::add(double x, double y) {
  xs_.push_back(x);
  ys_.push_back(y);
  refactor();
}

void GaussianProcess::refactor() {
  const auto n = static_cast<Eigen::Index>(xs_.size());
  Mat k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) k(i, j) = kernel(xs_[i], xs_[j]);
  }
  k.diagonal().array() += config_.noise_std * config_.noise_std;
  llt_.compute(k);
  for (int attempt = 0; llt_.info() != Eigen::Success; ++attempt) {
    if (attempt == 3) throw NumericalError("GP Cholesky failed after jitter");
    k.diagonal().array() += 1e-9;
    llt_.compute(k);
  }
  const Vec y = Eigen::Map<const Vec>(ys_.data(), n);
  alpha_ = llt_.solve(y);
}

GaussianProcess::Posterior GaussianProcess::posterior(double x) const {
  if (xs_.empty()) return {};
  const auto n = static_cast<Eigen::Index>(xs_.size());
  Vec kx(n);
  for (Eigen::Index i = 0; i < n; ++i) kx(i) = kernel(x, xs_[i]);
  const Vec v = llt_.matrixL().solve(kx);
  const double var = std::max(0.0, 1.0 - v.squaredNorm());
  return {kx.dot(alpha_), std::sqrt(var)};
}

}  // namespace goblin
