#pragma once

#include <vector>

#include <Eigen/Cholesky>

#include "goblin/types.hpp"

namespace goblin {

struct GpConfig {
  double length_scale = 1.0;
  double noise_std = 0.2;
};

// 1-D GP regression, zero prior mean, unit-variance RBF kernel
// k(x, x') = exp(-(x - x')^2 / (2 l^2)) plus white noise on the diagonal.
class GaussianProcess {
 public:
  struct Posterior {
    double mean = 0.0;
    double std = 1.0;
  };

  explicit GaussianProcess(GpConfig config = {});

  // Appends an observation and refactors K + noise^2 I. On a failed
  // Cholesky, 1e-9 is added to the diagonal up to three times before a
  // NumericalError.
  void add(double x, double y);

  Posterior posterior(double x) const;

  const std::vector<double>& inputs() const { return xs_; }
  const std::vector<double>& targets() const { return ys_; }
  std::size_t size() const { return xs_.size(); }
  const GpConfig& config() const { return config_; }

  double kernel(double a, double b) const;

 private:
  void refactor();

  GpConfig config_;
  std::vector<double> xs_;
  std::vector<double> ys_;
  Eigen::LLT<Mat> llt_;
  Vec alpha_;
};

}  // namespace goblin
