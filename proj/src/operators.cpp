#include "goblin/operators.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <string>

#include <Eigen/Eigenvalues>

namespace goblin {

namespace {

constexpr unsigned kMaxTaylorTerms = 200;

std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s) {
  double x = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) throw DataError("bad number '" + std::string(s) + "'");
  return x;
}

unsigned parse_unsigned(std::string_view s) {
  unsigned x = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) throw DataError("bad integer '" + std::string(s) + "'");
  return x;
}

bool close(double a, double b) { return std::abs(a - b) <= 1e-12; }

SpMat sparse_identity(Eigen::Index n) {
  SpMat m(n, n);
  m.setIdentity();
  return m;
}

SpMat sparse_power(const SpMat& base, unsigned k) {
  SpMat out = sparse_identity(base.rows());
  for (unsigned i = 0; i < k; ++i) out = (out * base).pruned();
  return out;
}

// Smallest J with bound^(J+1)/(J+1)! <= tol.
unsigned taylor_terms(double bound, double tol) {
  if (bound == 0.0) return 0;
  double term = bound;  // bound^1 / 1!
  unsigned j = 0;
  while (term > tol) {
    ++j;
    if (j > kMaxTaylorTerms) {
      throw NumericalError("heat kernel Taylor series needs more than " + std::to_string(kMaxTaylorTerms) + " terms");
    }
    term *= bound / static_cast<double>(j + 1);
  }
  return j;
}

// Matrix of 1[pred(d(u,v))] over stored pairs.
template <class Pred>
SpMat distance_indicator(const DistanceTable& distances, Pred pred) {
  const auto n = static_cast<Eigen::Index>(distances.num_nodes());
  std::vector<Eigen::Triplet<double>> trip;
  for (Eigen::Index u = 0; u < n; ++u) {
    auto t = distances.row_targets(static_cast<NodeId>(u));
    auto d = distances.row_distances(static_cast<NodeId>(u));
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (pred(d[i])) trip.emplace_back(u, t[i], 1.0);
    }
  }
  SpMat m(n, n);
  m.setFromTriplets(trip.begin(), trip.end());
  return m;
}

void require_cover(const DistanceTable& distances, double r, const OperatorSpec& spec) {
  if (!distances.covers(r)) {
    throw DataError("distance table radius " + std::to_string(*distances.radius()) + " does not cover " +
                    format_double(r) + " hops needed by " + spec.to_string());
  }
}

}  // namespace

OperatorSpec OperatorSpec::identity() { return {}; }

OperatorSpec OperatorSpec::adj_power(unsigned k) {
  OperatorSpec s;
  s.family = Family::AdjPower;
  s.k = k;
  return s;
}

OperatorSpec OperatorSpec::precise_hop(unsigned k) {
  OperatorSpec s;
  s.family = Family::PreciseHop;
  s.k = k;
  return s;
}

OperatorSpec OperatorSpec::rw_laplacian(unsigned p) {
  OperatorSpec s;
  s.family = Family::RwLaplacian;
  s.k = p;
  return s;
}

OperatorSpec OperatorSpec::lin_gauss(double mu, double sigma) {
  OperatorSpec s;
  s.family = Family::LinGauss;
  s.mu = mu;
  s.sigma = sigma;
  return s;
}

OperatorSpec OperatorSpec::lin_heat(double tau) {
  OperatorSpec s;
  s.family = Family::LinHeat;
  s.tau = tau;
  return s;
}

OperatorSpec OperatorSpec::hop_bin(unsigned lo, std::optional<unsigned> hi) {
  OperatorSpec s;
  s.family = Family::HopBin;
  s.lo = lo;
  s.hi = hi;
  return s;
}

void OperatorSpec::validate() const {
  switch (family) {
    case Family::RwLaplacian:
      if (k != 1 && k != 2) throw DataError("rwlap power must be 1 or 2");
      break;
    case Family::LinGauss:
      if (!(mu >= 0.0) || !(sigma >= 0.0) || !std::isfinite(mu) || !std::isfinite(sigma)) {
        throw DataError("lingauss needs finite mu >= 0 and sigma >= 0");
      }
      break;
    case Family::LinHeat:
      if (!(tau >= 0.0) || !std::isfinite(tau)) throw DataError("linheat needs finite tau >= 0");
      break;
    case Family::HopBin:
      if (hi && *hi < lo) throw DataError("hopbin needs lo <= hi");
      break;
    default:
      break;
  }
}

std::string OperatorSpec::to_string() const {
  switch (family) {
    case Family::Identity:
      return "identity";
    case Family::AdjPower:
      return "adjpow:k=" + std::to_string(k);
    case Family::PreciseHop:
      return "precisehop:k=" + std::to_string(k);
    case Family::RwLaplacian:
      return "rwlap:p=" + std::to_string(k);
    case Family::LinGauss:
      return "lingauss:mu=" + format_double(mu) + ",sigma=" + format_double(sigma);
    case Family::LinHeat:
      return "linheat:tau=" + format_double(tau);
    case Family::HopBin:
      return "hopbin:lo=" + std::to_string(lo) + ",hi=" + (hi ? std::to_string(*hi) : std::string("inf"));
  }
  return {};
}

OperatorSpec OperatorSpec::parse(std::string_view text) {
  const auto colon = text.find(':');
  const std::string_view name = text.substr(0, colon);
  std::map<std::string, std::string, std::less<>> kv;
  if (colon != std::string_view::npos) {
    std::string_view rest = text.substr(colon + 1);
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      const std::string_view item = rest.substr(0, comma);
      const auto eq = item.find('=');
      if (eq == std::string_view::npos) throw DataError("bad operator parameter '" + std::string(item) + "'");
      kv.emplace(std::string(item.substr(0, eq)), std::string(item.substr(eq + 1)));
      rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
    }
  }
  auto need = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw DataError("operator '" + std::string(text) + "' missing " + key);
    return it->second;
  };
  OperatorSpec s;
  std::size_t expected = 0;
  if (name == "identity") {
    s = identity();
  } else if (name == "adjpow") {
    s = adj_power(parse_unsigned(need("k")));
    expected = 1;
  } else if (name == "precisehop") {
    s = precise_hop(parse_unsigned(need("k")));
    expected = 1;
  } else if (name == "rwlap") {
    s = rw_laplacian(parse_unsigned(need("p")));
    expected = 1;
  } else if (name == "lingauss") {
    s = lin_gauss(parse_double(need("mu")), parse_double(need("sigma")));
    expected = 2;
  } else if (name == "linheat") {
    s = lin_heat(parse_double(need("tau")));
    expected = 1;
  } else if (name == "hopbin") {
    const auto& hi = need("hi");
    s = hop_bin(parse_unsigned(need("lo")), hi == "inf" ? std::nullopt : std::optional<unsigned>(parse_unsigned(hi)));
    expected = 2;
  } else {
    throw DataError("unknown operator family '" + std::string(name) + "'");
  }
  if (kv.size() != expected) throw DataError("unexpected parameters in operator '" + std::string(text) + "'");
  s.validate();
  return s;
}

bool OperatorSpec::operator==(const OperatorSpec& o) const {
  if (family != o.family) return false;
  switch (family) {
    case Family::Identity:
      return true;
    case Family::AdjPower:
    case Family::PreciseHop:
    case Family::RwLaplacian:
      return k == o.k;
    case Family::LinGauss:
      return close(mu, o.mu) && close(sigma, o.sigma);
    case Family::LinHeat:
      return close(tau, o.tau);
    case Family::HopBin:
      return lo == o.lo && hi == o.hi;
  }
  return false;
}

std::string_view provenance_name(Provenance p) {
  switch (p) {
    case Provenance::Anchor:
      return "anchor";
    case Provenance::UcbSample:
      return "ucb-sample";
    case Provenance::FixedBasis:
      return "fixed-basis";
  }
  return "";
}

// ---------------------------------------------------------------------------

OperatorMatrix::OperatorMatrix(OperatorSpec spec, SpMat m, std::optional<unsigned> radius)
    : spec_(std::move(spec)), matrix_(std::move(m)), radius_(radius) {}

OperatorMatrix::OperatorMatrix(OperatorSpec spec, Mat m, double tolerance)
    : spec_(std::move(spec)), matrix_(std::move(m)), tolerance_(tolerance) {}

Eigen::Index OperatorMatrix::size() const { return is_sparse() ? sparse().rows() : dense_ref().rows(); }

Mat OperatorMatrix::dense() const { return is_sparse() ? Mat(sparse()) : dense_ref(); }

Mat OperatorMatrix::apply(const Mat& x) const {
  if (is_sparse()) return sparse() * x;
  return dense_ref() * x;
}

// ---------------------------------------------------------------------------

HeatKernel heat_kernel_taylor(const SpMat& laplacian, double tau, double tol) {
  if (!(tol > 0.0)) throw DataError("heat kernel tolerance must be positive");
  if (!(tau >= 0.0)) throw DataError("heat kernel needs tau >= 0");
  const Eigen::Index n = laplacian.rows();
  HeatKernel out;
  if (tau == 0.0) {
    out.matrix = Mat::Identity(n, n);
    return out;
  }
  unsigned s = 0;
  while (2.0 * tau / std::ldexp(1.0, static_cast<int>(s)) > 1.0) ++s;
  const double h = tau / std::ldexp(1.0, static_cast<int>(s));
  out.squarings = s;
  out.terms = taylor_terms(2.0 * h, tol / std::ldexp(1.0, static_cast<int>(s)));

  Mat term = Mat::Identity(n, n);
  Mat sum = term;
  for (unsigned j = 1; j <= out.terms; ++j) {
    term = (laplacian * term) * (-h / static_cast<double>(j));
    sum += term;
  }
  for (unsigned i = 0; i < s; ++i) sum = sum * sum;
  out.matrix = 0.5 * (sum + sum.transpose());
  return out;
}

Mat heat_apply_taylor(const SpMat& laplacian, double tau, const Mat& x, double tol) {
  if (!(tol > 0.0)) throw DataError("heat kernel tolerance must be positive");
  if (!(tau >= 0.0)) throw DataError("heat kernel needs tau >= 0");
  if (tau == 0.0) return x;
  const auto steps = static_cast<unsigned>(std::max(1.0, std::ceil(2.0 * tau)));
  const double h = tau / steps;
  const unsigned terms = taylor_terms(2.0 * h, tol / steps);
  Mat y = x;
  for (unsigned s = 0; s < steps; ++s) {
    Mat term = y;
    for (unsigned j = 1; j <= terms; ++j) {
      term = (laplacian * term) * (-h / static_cast<double>(j));
      y += term;
    }
  }
  return y;
}

Mat heat_kernel_spectral(const SpMat& laplacian, double tau) {
  if (laplacian.rows() > 512) throw DataError("spectral heat kernel limited to N <= 512");
  const Mat dense_l(laplacian);
  Eigen::SelfAdjointEigenSolver<Mat> eig(dense_l);
  const Vec decay = (-tau * eig.eigenvalues().array()).exp();
  return eig.eigenvectors() * decay.asDiagonal() * eig.eigenvectors().transpose();
}

// ---------------------------------------------------------------------------

OperatorMatrix build_operator(const Graph& g, const DistanceTable& distances, const OperatorSpec& spec,
                              const OperatorOptions& options) {
  spec.validate();
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  const SpMat& a = g.normalized_adjacency();
  switch (spec.family) {
    case Family::Identity:
      return {spec, sparse_identity(n)};
    case Family::AdjPower:
      return {spec, sparse_power(a, spec.k)};
    case Family::RwLaplacian: {
      SpMat base = sparse_identity(n) - a;
      return {spec, sparse_power(base, spec.k)};
    }
    case Family::PreciseHop: {
      if (spec.k == 0) return {spec, sparse_identity(n), distances.radius()};
      require_cover(distances, spec.k, spec);
      const unsigned k = spec.k;
      return {spec, distance_indicator(distances, [k](unsigned d) { return d == k; }), distances.radius()};
    }
    case Family::HopBin: {
      if (spec.hi) {
        require_cover(distances, *spec.hi, spec);
      } else if (distances.truncated()) {
        throw DataError("unbounded hop bin needs an untruncated distance table");
      }
      const unsigned lo = spec.lo;
      const auto hi = spec.hi;
      return {spec, distance_indicator(distances, [lo, hi](unsigned d) { return d >= lo && (!hi || d <= *hi); }),
              distances.radius()};
    }
    case Family::LinGauss: {
      require_cover(distances, spec.mu + 3.0 * spec.sigma, spec);
      std::vector<Eigen::Triplet<double>> trip;
      const double inv = spec.sigma > 0.0 ? 1.0 / (2.0 * spec.sigma * spec.sigma) : 0.0;
      for (Eigen::Index u = 0; u < n; ++u) {
        auto t = distances.row_targets(static_cast<NodeId>(u));
        auto d = distances.row_distances(static_cast<NodeId>(u));
        for (std::size_t i = 0; i < t.size(); ++i) {
          const double delta = spec.mu - d[i];
          double w = 0.0;
          if (spec.sigma > 0.0) {
            w = std::exp(-delta * delta * inv);
          } else {
            w = delta == 0.0 ? 1.0 : 0.0;
          }
          if (w != 0.0) trip.emplace_back(u, t[i], w);
        }
      }
      SpMat m(n, n);
      m.setFromTriplets(trip.begin(), trip.end());
      return {spec, std::move(m), distances.radius()};
    }
    case Family::LinHeat: {
      if (options.heat_method == HeatMethod::Spectral) {
        return {spec, heat_kernel_spectral(g.sym_laplacian(), spec.tau), 0.0};
      }
      auto hk = heat_kernel_taylor(g.sym_laplacian(), spec.tau, options.heat_tolerance);
      return {spec, std::move(hk.matrix), options.heat_tolerance};
    }
  }
  throw DataError("unhandled operator family");
}

Mat apply_operator(const Graph& g, const DistanceTable& distances, const OperatorSpec& spec, const Mat& x,
                   const OperatorOptions& options) {
  if (spec.family == Family::LinHeat && options.heat_method == HeatMethod::Taylor) {
    spec.validate();
    return heat_apply_taylor(g.sym_laplacian(), spec.tau, x, options.heat_tolerance);
  }
  return build_operator(g, distances, spec, options).apply(x);
}

// ---------------------------------------------------------------------------

std::vector<OperatorSpec> graphany_basis_specs() {
  return {OperatorSpec::identity(), OperatorSpec::adj_power(1), OperatorSpec::adj_power(2),
          OperatorSpec::rw_laplacian(1), OperatorSpec::rw_laplacian(2)};
}

std::vector<OperatorMatrix> graphany_basis(const Graph& g) {
  std::vector<OperatorMatrix> out;
  const DistanceTable none;
  for (const auto& s : graphany_basis_specs()) out.push_back(build_operator(g, none, s));
  return out;
}

std::vector<OperatorSpec> hopbins_basis_specs(const DistanceTable& distances) {
  const auto& hist = distances.histogram();
  const auto distinct = std::count_if(hist.begin() + (hist.empty() ? 0 : 1), hist.end(), [](std::size_t c) { return c > 0; });
  if (distinct < 2) throw DataError("hop-bin basis needs at least 2 distinct finite pair distances");
  const unsigned median = *distances.median_distance();
  if (median < 3) {
    throw DataError("hop-bin basis: median distance " + std::to_string(median) + " leaves the 3..d* bin empty");
  }
  return {OperatorSpec::identity(), OperatorSpec::precise_hop(1), OperatorSpec::precise_hop(2),
          OperatorSpec::hop_bin(3, median), OperatorSpec::hop_bin(median + 1, std::nullopt)};
}

std::vector<OperatorMatrix> hopbins_basis(const Graph& g, const DistanceTable& distances) {
  std::vector<OperatorMatrix> out;
  for (const auto& s : hopbins_basis_specs(distances)) out.push_back(build_operator(g, distances, s));
  return out;
}

std::vector<OperatorSpec> heatkernel_basis_specs(const DistanceTable& distances, bool include_short) {
  const double dbar = distances.mean_distance();
  std::vector<OperatorSpec> out = {OperatorSpec::lin_heat(1.0), OperatorSpec::lin_heat(dbar * dbar),
                                   OperatorSpec::lin_heat(4.0 * dbar * dbar)};
  if (include_short) {
    out.push_back(OperatorSpec::identity());
    out.push_back(OperatorSpec::precise_hop(1));
  }
  return out;
}

std::vector<OperatorMatrix> heatkernel_fixed_basis(const Graph& g, const DistanceTable& distances, bool include_short) {
  std::vector<OperatorMatrix> out;
  for (const auto& s : heatkernel_basis_specs(distances, include_short)) out.push_back(build_operator(g, distances, s));
  return out;
}

}  // namespace goblin
