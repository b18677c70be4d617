#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "goblin/rng.hpp"
#include "goblin/types.hpp"

namespace goblin::nn {

// y = x W^T + b for a batch x (rows = samples). Biases are stored as
// out x 1 matrices so every parameter is a Mat.
struct DenseLayer {
  Mat weight;  // out x in
  Mat bias;    // out x 1
};

// Fully connected stack. ReLU (then dropout while training) follows every
// hidden layer, and the last layer too when activate_output is set.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<int> dims, bool activate_output, double dropout);

  // Kaiming-uniform weights (bound sqrt(6 / fan_in)), biases uniform in
  // +-1/sqrt(fan_in).
  void init(Rng& rng);

  struct Tape {
    std::vector<Mat> inputs;  // input to each layer
    std::vector<Mat> pre;     // pre-activation output of each layer
    std::vector<Mat> masks;   // dropout scale per activated layer (empty when off)
  };

  // dropout_rng == nullptr disables dropout (inference / gradient checks).
  Mat forward(const Mat& x, Tape* tape = nullptr, Rng* dropout_rng = nullptr) const;

  // Accumulates parameter gradients into grads (same order as
  // parameters()) and returns d loss / d input.
  Mat backward(const Tape& tape, const Mat& grad_out, std::vector<Mat>& grads) const;

  std::vector<Mat*> parameters();
  std::vector<const Mat*> parameters() const;
  std::vector<Mat> zero_grads() const;

  const std::vector<int>& dims() const { return dims_; }
  bool activate_output() const { return activate_output_; }
  double dropout() const { return dropout_; }
  std::size_t num_layers() const { return layers_.size(); }
  const DenseLayer& layer(std::size_t i) const { return layers_[i]; }

  void write(std::ostream& out, const std::string& name) const;
  static Mlp read(std::istream& in, const std::string& name);

 private:
  bool activated(std::size_t layer) const { return layer + 1 < layers_.size() || activate_output_; }

  std::vector<int> dims_;
  bool activate_output_ = false;
  double dropout_ = 0.0;
  std::vector<DenseLayer> layers_;
};

// Adam with bias-corrected first and second moments.
class Adam {
 public:
  Adam(std::vector<Mat*> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(const std::vector<Mat>& grads);
  long steps() const { return t_; }

 private:
  std::vector<Mat*> params_;
  std::vector<Mat> m_;
  std::vector<Mat> v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

// Per-column log1p (optional per column) followed by a z-score with frozen
// statistics.
struct Standardizer {
  std::vector<bool> log1p;
  Vec mean;
  Vec stddev;

  static Standardizer fit(const Mat& raw, std::vector<bool> log1p_columns);
  Mat apply(const Mat& raw) const;

  void write(std::ostream& out) const;
  static Standardizer read(std::istream& in);
};

// Row-wise softmax of logits / temperature restricted to active columns;
// inactive columns get exactly 0.
Mat masked_softmax(const Mat& logits, const std::vector<bool>& active, double temperature);

// Exact text form of a double (shortest round-trip representation).
std::string format_exact(double x);
double parse_exact(const std::string& s);

// Reads "<expected> <value...>" style header tokens; throws DataError on mismatch.
void expect_token(std::istream& in, const std::string& expected);

}  // namespace goblin::nn
