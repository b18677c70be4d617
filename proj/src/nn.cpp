#include "goblin/nn.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

namespace goblin::nn {

std::string format_exact(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

double parse_exact(const std::string& s) {
  double x = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) throw DataError("bad number '" + s + "' in checkpoint");
  return x;
}

void expect_token(std::istream& in, const std::string& expected) {
  std::string tok;
  if (!(in >> tok) || tok != expected) {
    throw DataError("checkpoint: expected '" + expected + "', found '" + tok + "'");
  }
}

namespace {

void write_matrix(std::ostream& out, const char* tag, const Mat& m) {
  out << tag << ' ' << m.rows() << ' ' << m.cols();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << ' ' << format_exact(m(i, j));
  }
  out << '\n';
}

Mat read_matrix(std::istream& in, const char* tag) {
  expect_token(in, tag);
  Eigen::Index r = 0;
  Eigen::Index c = 0;
  if (!(in >> r >> c) || r < 0 || c < 0) throw DataError(std::string("checkpoint: bad shape for ") + tag);
  Mat m(r, c);
  std::string tok;
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) {
      if (!(in >> tok)) throw DataError("checkpoint: truncated matrix");
      m(i, j) = parse_exact(tok);
    }
  }
  return m;
}

}  // namespace

Mlp::Mlp(std::vector<int> dims, bool activate_output, double dropout)
    : dims_(std::move(dims)), activate_output_(activate_output), dropout_(dropout) {
  if (dims_.size() < 2) throw DataError("MLP needs at least one layer");
  for (std::size_t i = 0; i + 1 < dims_.size(); ++i) {
    layers_.push_back({Mat::Zero(dims_[i + 1], dims_[i]), Mat::Zero(dims_[i + 1], 1)});
  }
}

void Mlp::init(Rng& rng) {
  for (auto& l : layers_) {
    const double fan_in = static_cast<double>(l.weight.cols());
    std::uniform_real_distribution<double> w(-std::sqrt(6.0 / fan_in), std::sqrt(6.0 / fan_in));
    std::uniform_real_distribution<double> b(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) l.weight(i, j) = w(rng);
    }
    for (Eigen::Index i = 0; i < l.bias.rows(); ++i) l.bias(i, 0) = b(rng);
  }
}

Mat Mlp::forward(const Mat& x, Tape* tape, Rng* dropout_rng) const {
  if (tape) *tape = Tape{};
  Mat h = x;
  const bool drop = dropout_rng != nullptr && dropout_ > 0.0;
  std::bernoulli_distribution keep(1.0 - dropout_);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    Mat z = h * l.weight.transpose();
    z.rowwise() += l.bias.col(0).transpose();
    if (tape) {
      tape->inputs.push_back(h);
      tape->pre.push_back(z);
    }
    if (activated(i)) {
      h = z.cwiseMax(0.0);
      if (drop) {
        Mat mask(h.rows(), h.cols());
        const double scale = 1.0 / (1.0 - dropout_);
        for (Eigen::Index r = 0; r < mask.rows(); ++r) {
          for (Eigen::Index c = 0; c < mask.cols(); ++c) mask(r, c) = keep(*dropout_rng) ? scale : 0.0;
        }
        h = h.cwiseProduct(mask);
        if (tape) tape->masks.push_back(std::move(mask));
      } else if (tape) {
        tape->masks.emplace_back();
      }
    } else {
      h = std::move(z);
      if (tape) tape->masks.emplace_back();
    }
  }
  return h;
}

Mat Mlp::backward(const Tape& tape, const Mat& grad_out, std::vector<Mat>& grads) const {
  Mat g = grad_out;
  for (std::size_t idx = layers_.size(); idx-- > 0;) {
    const auto& l = layers_[idx];
    if (activated(idx)) {
      if (tape.masks[idx].size()) g = g.cwiseProduct(tape.masks[idx]);
      g = g.cwiseProduct((tape.pre[idx].array() > 0.0).cast<double>().matrix());
    }
    grads[2 * idx] += g.transpose() * tape.inputs[idx];
    grads[2 * idx + 1] += g.colwise().sum().transpose();
    g = g * l.weight;
  }
  return g;
}

std::vector<Mat*> Mlp::parameters() {
  std::vector<Mat*> out;
  for (auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<const Mat*> Mlp::parameters() const {
  std::vector<const Mat*> out;
  for (const auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<Mat> Mlp::zero_grads() const {
  std::vector<Mat> out;
  for (const auto& l : layers_) {
    out.push_back(Mat::Zero(l.weight.rows(), l.weight.cols()));
    out.push_back(Mat::Zero(l.bias.rows(), 1));
  }
  return out;
}

void Mlp::write(std::ostream& out, const std::string& name) const {
  out << "mlp " << name << ' ' << layers_.size() << " activate_output " << (activate_output_ ? 1 : 0) << " dropout "
      << format_exact(dropout_) << '\n';
  for (const auto& l : layers_) {
    write_matrix(out, "weight", l.weight);
    write_matrix(out, "bias", l.bias);
  }
}

Mlp Mlp::read(std::istream& in, const std::string& name) {
  expect_token(in, "mlp");
  expect_token(in, name);
  std::size_t n = 0;
  int act = 0;
  std::string drop;
  if (!(in >> n)) throw DataError("checkpoint: bad layer count");
  expect_token(in, "activate_output");
  in >> act;
  expect_token(in, "dropout");
  in >> drop;
  Mlp m;
  m.activate_output_ = act != 0;
  m.dropout_ = parse_exact(drop);
  for (std::size_t i = 0; i < n; ++i) {
    DenseLayer l{read_matrix(in, "weight"), read_matrix(in, "bias")};
    if (l.bias.rows() != l.weight.rows() || l.bias.cols() != 1) throw DataError("checkpoint: bias shape mismatch");
    if (i == 0) m.dims_.push_back(static_cast<int>(l.weight.cols()));
    if (static_cast<int>(l.weight.cols()) != m.dims_.back()) throw DataError("checkpoint: layer shape mismatch");
    m.dims_.push_back(static_cast<int>(l.weight.rows()));
    m.layers_.push_back(std::move(l));
  }
  return m;
}

// ---------------------------------------------------------------------------

Adam::Adam(std::vector<Mat*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto* p : params_) {
    m_.push_back(Mat::Zero(p->rows(), p->cols()));
    v_.push_back(Mat::Zero(p->rows(), p->cols()));
  }
}

void Adam::step(const std::vector<Mat>& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseProduct(grads[i]);
    const Mat m_hat = m_[i] / c1;
    const Mat v_hat = v_[i] / c2;
    *params_[i] -= (lr_ * m_hat.array() / (v_hat.array().sqrt() + eps_)).matrix();
  }
}

// ---------------------------------------------------------------------------

Standardizer Standardizer::fit(const Mat& raw, std::vector<bool> log1p_columns) {
  if (static_cast<Eigen::Index>(log1p_columns.size()) != raw.cols()) throw DataError("standardizer column mismatch");
  Standardizer s;
  s.log1p = std::move(log1p_columns);
  s.mean = Vec::Zero(raw.cols());
  s.stddev = Vec::Ones(raw.cols());
  if (raw.rows() == 0) return s;
  Standardizer identity{s.log1p, Vec::Zero(raw.cols()), Vec::Ones(raw.cols())};
  const Mat t = identity.apply(raw);
  s.mean = t.colwise().mean().transpose();
  for (Eigen::Index c = 0; c < t.cols(); ++c) {
    const double var = (t.col(c).array() - s.mean(c)).square().mean();
    const double sd = std::sqrt(var);
    s.stddev(c) = sd > 1e-8 ? sd : 1.0;
  }
  return s;
}

Mat Standardizer::apply(const Mat& raw) const {
  Mat out(raw.rows(), raw.cols());
  for (Eigen::Index c = 0; c < raw.cols(); ++c) {
    if (log1p[static_cast<std::size_t>(c)]) {
      out.col(c) = raw.col(c).array().max(0.0).log1p();
    } else {
      out.col(c) = raw.col(c);
    }
    out.col(c) = (out.col(c).array() - mean(c)) / stddev(c);
  }
  return out;
}

void Standardizer::write(std::ostream& out) const {
  out << "standardizer " << mean.size() << '\n' << "log1p";
  for (bool b : log1p) out << ' ' << (b ? 1 : 0);
  out << "\nmean";
  for (Eigen::Index i = 0; i < mean.size(); ++i) out << ' ' << format_exact(mean(i));
  out << "\nstd";
  for (Eigen::Index i = 0; i < stddev.size(); ++i) out << ' ' << format_exact(stddev(i));
  out << '\n';
}

Standardizer Standardizer::read(std::istream& in) {
  expect_token(in, "standardizer");
  Eigen::Index n = 0;
  if (!(in >> n) || n < 0) throw DataError("checkpoint: bad standardizer size");
  Standardizer s;
  s.mean.resize(n);
  s.stddev.resize(n);
  expect_token(in, "log1p");
  for (Eigen::Index i = 0; i < n; ++i) {
    int b = 0;
    in >> b;
    s.log1p.push_back(b != 0);
  }
  std::string tok;
  expect_token(in, "mean");
  for (Eigen::Index i = 0; i < n; ++i) {
    in >> tok;
    s.mean(i) = parse_exact(tok);
  }
  expect_token(in, "std");
  for (Eigen::Index i = 0; i < n; ++i) {
    in >> tok;
    s.stddev(i) = parse_exact(tok);
  }
  if (!in) throw DataError("checkpoint: truncated standardizer");
  return s;
}

Mat masked_softmax(const Mat& logits, const std::vector<bool>& active, double temperature) {
  Mat out = Mat::Zero(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    double top = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      if (active[static_cast<std::size_t>(c)]) top = std::max(top, logits(r, c) / temperature);
    }
    double sum = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      if (!active[static_cast<std::size_t>(c)]) continue;
      out(r, c) = std::exp(logits(r, c) / temperature - top);
      sum += out(r, c);
    }
    out.row(r) /= sum;
  }
  return out;
}

}  // namespace goblin::nn
