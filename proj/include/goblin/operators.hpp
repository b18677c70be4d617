#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "goblin/graph.hpp"
#include "goblin/types.hpp"

namespace goblin {

enum class Family {
  Identity,
  AdjPower,     // A^k, A row-normalized
  PreciseHop,   // (A_k)_uv = 1[d(u,v) = k]
  RwLaplacian,  // (I - A)^p, p in {1, 2}
  LinGauss,     // exp(-(mu - d(u,v))^2 / (2 sigma^2))
  LinHeat,      // exp(-tau L_sym)
  HopBin,       // 1[lo <= d(u,v) <= hi]
};

enum class Provenance { Anchor, UcbSample, FixedBasis };

// Family tag plus parameters. Text form round-trips exactly, e.g.
// "lingauss:mu=3.25,sigma=0.5", "linheat:tau=2.89", "adjpow:k=2",
// "hopbin:lo=3,hi=inf".
struct OperatorSpec {
  Family family = Family::Identity;
  unsigned k = 0;  // AdjPower power, PreciseHop hop, RwLaplacian power
  double mu = 0.0;
  double sigma = 0.0;
  double tau = 0.0;
  unsigned lo = 0;
  std::optional<unsigned> hi;  // nullopt = unbounded
  Provenance provenance = Provenance::FixedBasis;

  static OperatorSpec identity();
  static OperatorSpec adj_power(unsigned k);
  static OperatorSpec precise_hop(unsigned k);
  static OperatorSpec rw_laplacian(unsigned p);
  static OperatorSpec lin_gauss(double mu, double sigma);
  static OperatorSpec lin_heat(double tau);
  static OperatorSpec hop_bin(unsigned lo, std::optional<unsigned> hi);

  OperatorSpec with_provenance(Provenance p) const {
    auto s = *this;
    s.provenance = p;
    return s;
  }

  // Throws DataError on negative or otherwise invalid parameters.
  void validate() const;

  std::string to_string() const;
  static OperatorSpec parse(std::string_view text);

  // Family and parameters equal to within 1e-12; provenance is ignored.
  bool operator==(const OperatorSpec& other) const;
};

std::string_view provenance_name(Provenance p);

// A realized N x N operator. Sparse for every family except LinHeat.
class OperatorMatrix {
 public:
  OperatorMatrix(OperatorSpec spec, SpMat m, std::optional<unsigned> radius = std::nullopt);
  OperatorMatrix(OperatorSpec spec, Mat m, double tolerance);

  const OperatorSpec& spec() const { return spec_; }
  Eigen::Index size() const;
  bool is_sparse() const { return std::holds_alternative<SpMat>(matrix_); }
  const SpMat& sparse() const { return std::get<SpMat>(matrix_); }
  const Mat& dense_ref() const { return std::get<Mat>(matrix_); }

  Mat dense() const;
  Mat apply(const Mat& x) const;

  // Calls f(v, value) for every stored entry in row u.
  template <class F>
  void for_each_in_row(Eigen::Index u, F&& f) const {
    if (is_sparse()) {
      for (SpMat::InnerIterator it(sparse(), u); it; ++it) f(static_cast<NodeId>(it.col()), it.value());
    } else {
      const Mat& m = dense_ref();
      for (Eigen::Index v = 0; v < m.cols(); ++v) f(static_cast<NodeId>(v), m(u, v));
    }
  }

  double tolerance() const { return tolerance_; }
  std::optional<unsigned> truncation_radius() const { return radius_; }

 private:
  OperatorSpec spec_;
  std::variant<SpMat, Mat> matrix_;
  double tolerance_ = 0.0;
  std::optional<unsigned> radius_;
};

enum class HeatMethod { Taylor, Spectral };

struct OperatorOptions {
  double heat_tolerance = 1e-7;
  HeatMethod heat_method = HeatMethod::Taylor;
};

OperatorMatrix build_operator(const Graph& g, const DistanceTable& distances, const OperatorSpec& spec,
                              const OperatorOptions& options = {});

// S X without materializing S where avoidable: LinHeat is applied through
// the Taylor action on X, every other family through its sparse matrix.
Mat apply_operator(const Graph& g, const DistanceTable& distances, const OperatorSpec& spec, const Mat& x,
                   const OperatorOptions& options = {});

struct HeatKernel {
  Mat matrix;
  unsigned terms = 0;      // Taylor terms J per sub-step
  unsigned squarings = 0;  // result = (sub-step kernel)^(2^squarings)
};

// exp(-tau L) by truncated Taylor series. The series is evaluated at
// tau / 2^s with s the smallest integer giving tau ||L|| / 2^s <= 1
// (||L_sym|| <= 2), then squared s times; for tau <= 0.5 this is the plain
// series with no squaring. J is the smallest count whose next-term bound
// (2h)^(J+1) / (J+1)! is <= tol / 2^s. Symmetrized on return.
// Throws DataError on tol <= 0 or tau < 0, NumericalError if J would exceed 200.
HeatKernel heat_kernel_taylor(const SpMat& laplacian, double tau, double tol);

// exp(-tau L) X by sub-stepped Taylor series: ceil(2 tau) equal steps, each
// truncated at the same next-term bound.
Mat heat_apply_taylor(const SpMat& laplacian, double tau, const Mat& x, double tol);

// Dense eigendecomposition route, limited to N <= 512.
Mat heat_kernel_spectral(const SpMat& laplacian, double tau);

// {I, A, A^2, (I - A), (I - A)^2}.
std::vector<OperatorSpec> graphany_basis_specs();
std::vector<OperatorMatrix> graphany_basis(const Graph& g);

// {I, A_1, A_2, A_{3:d*}, A_{>d*}} with d* the lower median finite pair
// distance. Throws DataError when fewer than 2 distinct finite distances
// exist or when d* < 3 leaves the middle bin empty.
std::vector<OperatorSpec> hopbins_basis_specs(const DistanceTable& distances);
std::vector<OperatorMatrix> hopbins_basis(const Graph& g, const DistanceTable& distances);

// exp(-tau L) at tau = 1, dbar^2, 4 dbar^2 (dbar = mean hop distance);
// optionally followed by I and A_1.
std::vector<OperatorSpec> heatkernel_basis_specs(const DistanceTable& distances, bool include_short = false);
std::vector<OperatorMatrix> heatkernel_fixed_basis(const Graph& g, const DistanceTable& distances,
                                                   bool include_short = false);

}  // namespace goblin
