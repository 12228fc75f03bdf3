#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "knit/cooccur.hpp"
#include "knit/error.hpp"
#include "knit/rng.hpp"

namespace knit {

enum class PmiKind { Empirical, LowRank };

inline std::string to_string(PmiKind kind) { return kind == PmiKind::Empirical ? "empirical" : "lowrank"; }

struct PmiEstimate {
  Matrix matrix;
  PmiKind kind = PmiKind::Empirical;
  std::optional<std::size_t> rank;
  Vector eigenvalues;   // sorted by |lambda| descending (LowRank only)
  Matrix eigenvectors;  // d x p (LowRank only)
  std::vector<std::string> warnings;

  std::size_t d() const { return static_cast<std::size_t>(matrix.rows()); }

  /// Row w of the projector U U^T.
  Vector projector_row(std::size_t w) const {
    return eigenvectors * eigenvectors.row(static_cast<Eigen::Index>(w)).transpose();
  }

  Matrix projector() const { return eigenvectors * eigenvectors.transpose(); }

  /// U |Lambda|^{1/2}, a convenience embedding export.
  Matrix embedding() const {
    return eigenvectors * eigenvalues.cwiseAbs().cwiseSqrt().asDiagonal();
  }
};

struct SpectraOptions {
  double pmi_floor = 1e-6;
  bool allow_large = false;             // lifts the d <= 2 * 10^4 memory guard
  std::size_t full_decomposition_limit = 2000;
  std::size_t iterative_margin = 10;
  double iterative_tolerance = 1e-10;
  std::size_t iterative_max_iterations = 5000;
  std::uint64_t iterative_seed = 7;
};

inline constexpr std::size_t kDenseVocabularyLimit = 20'000;

/// Dense entries log(max(C-bar C_{w,w'} / (C_w C_{w'}), eta)).
inline PmiEstimate empirical_pmi(const CooccurrenceSummary& summary, const SpectraOptions& opts = {}) {
  detail::require(opts.pmi_floor > 0.0, "PMI floor eta must be positive");
  const std::size_t d = summary.d();
  detail::require(opts.allow_large || d <= kDenseVocabularyLimit,
                  "vocabulary of " + std::to_string(d) + " codes exceeds the dense PMI limit; pass the override flag");
  detail::require(summary.marginals.size() == d, "summary marginals are missing");
  for (std::size_t w = 0; w < d; ++w)
    if (summary.marginals[w] <= 0) throw InputError("code " + std::to_string(w) + " has zero marginal count");
  const auto di = static_cast<Eigen::Index>(d);
  const double total = static_cast<double>(summary.total);
  const double floor_log = std::log(opts.pmi_floor);
  PmiEstimate out;
  out.kind = PmiKind::Empirical;
  out.matrix = Matrix::Constant(di, di, floor_log);
  for (const auto& e : summary.counts.entries()) {
    if (e.w > e.w_prime) continue;
    const double ratio = total * static_cast<double>(e.count) /
                         (static_cast<double>(summary.marginals[e.w]) * static_cast<double>(summary.marginals[e.w_prime]));
    const double v = std::log(std::max(ratio, opts.pmi_floor));
    out.matrix(e.w, e.w_prime) = v;
    out.matrix(e.w_prime, e.w) = v;
  }
  return out;
}

/// alpha_p = sqrt(a) (1 - a^{q/2}) / (q p (1 - sqrt(a))), evaluated through
/// the geometric sum sum_{k<q} a^{k/2} so the a -> 1 limit (1/p) is stable.
inline double alpha_p(double alpha, std::size_t q, std::size_t p) {
  detail::require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
  detail::require(q >= 1 && p >= 1, "alpha_p needs q >= 1 and p >= 1");
  const double s = std::sqrt(alpha);
  double geometric = 0.0;
  double power = 1.0;
  for (std::size_t k = 0; k < q; ++k) {
    geometric += power;
    power *= s;
  }
  return s * geometric / (static_cast<double>(q) * static_cast<double>(p));
}

struct EigenPairs {
  Vector values;   // sorted by |lambda| descending, ties by signed value then index
  Matrix vectors;  // columns match `values`
};

namespace detail {

inline EigenPairs order_by_magnitude(const Vector& values, const Matrix& vectors) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(values.size()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
    const double ma = std::abs(values(a));
    const double mb = std::abs(values(b));
    if (ma != mb) return ma > mb;
    if (values(a) != values(b)) return values(a) > values(b);
    return a < b;
  });
  EigenPairs out{Vector(values.size()), Matrix(vectors.rows(), values.size())};
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    out.values(kk) = values(idx[k]);
    Vector v = vectors.col(idx[k]);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    out.vectors.col(kk) = v;
  }
  return out;
}

}  // namespace detail

/// Full symmetric eigendecomposition of (A + A^T) / 2 ordered by magnitude;
/// each eigenvector's largest-magnitude coordinate is made positive.
inline EigenPairs eig_sym(const Matrix& a) {
  detail::require(a.rows() == a.cols(), "eig_sym needs a square matrix");
  const Matrix sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> solver(sym);
  if (solver.info() != Eigen::Success) throw NumericalError("symmetric eigensolver did not converge");
  return detail::order_by_magnitude(solver.eigenvalues(), solver.eigenvectors());
}

/// Top-k eigenpairs by magnitude via block subspace iteration with
/// Rayleigh-Ritz extraction. Stops when every requested residual
/// ||A x - lambda x|| falls below tol * max(1, |lambda_1|).
inline EigenPairs top_eigenpairs(const Matrix& a, std::size_t k, std::size_t margin, double tol,
                                 std::size_t max_iterations, std::uint64_t seed) {
  const auto d = static_cast<std::size_t>(a.rows());
  detail::require(k >= 1 && k <= d, "requested eigenpair count out of range");
  const auto block = static_cast<Eigen::Index>(std::min(d, k + margin));
  const auto ki = static_cast<Eigen::Index>(k);
  Rng rng = make_stream(seed, d, StreamPurpose::Eigensolver);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix q(a.rows(), block);
  for (Eigen::Index j = 0; j < block; ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i) q(i, j) = normal(rng);
  Eigen::HouseholderQR<Matrix> qr(q);
  q = qr.householderQ() * Matrix::Identity(a.rows(), block);
  for (std::size_t it = 0; it < max_iterations; ++it) {
    const Matrix aq = a * q;
    const Matrix h = q.transpose() * aq;
    Eigen::SelfAdjointEigenSolver<Matrix> small(0.5 * (h + h.transpose()));
    if (small.info() != Eigen::Success) throw NumericalError("Rayleigh-Ritz eigensolver did not converge");
    EigenPairs ritz = detail::order_by_magnitude(small.eigenvalues(), small.eigenvectors());
    const Matrix x = q * ritz.vectors.leftCols(ki);
    const Matrix residual = aq * ritz.vectors.leftCols(ki) - x * ritz.values.head(ki).asDiagonal();
    const double scale = std::max(1.0, std::abs(ritz.values(0)));
    if (residual.colwise().norm().maxCoeff() <= tol * scale) {
      return detail::order_by_magnitude(ritz.values.head(ki), x);
    }
    Eigen::HouseholderQR<Matrix> next(aq);
    q = next.householderQ() * Matrix::Identity(a.rows(), block);
  }
  throw NumericalError("iterative eigensolver did not reach the residual tolerance");
}

/// Rank-p truncation U Lambda U^T of an empirical PMI matrix.
inline PmiEstimate lowrank_pmi(const PmiEstimate& pmi_hat, std::size_t p, const SpectraOptions& opts = {}) {
  detail::require(pmi_hat.kind == PmiKind::Empirical, "low-rank truncation expects an empirical PMI estimate");
  const std::size_t d = pmi_hat.d();
  detail::require(p >= 1 && p <= d, "rank p must lie in [1, d]");
  const auto pi = static_cast<Eigen::Index>(p);
  PmiEstimate out;
  out.kind = PmiKind::LowRank;
  out.rank = p;
  Vector next_value;
  if (d <= opts.full_decomposition_limit) {
    EigenPairs all = eig_sym(pmi_hat.matrix);
    out.eigenvalues = all.values.head(pi);
    out.eigenvectors = all.vectors.leftCols(pi);
    if (p < d) next_value = all.values.segment(pi, 1);
  } else {
    const std::size_t want = std::min(d, p + 1);
    EigenPairs top = top_eigenpairs(0.5 * (pmi_hat.matrix + pmi_hat.matrix.transpose()), want, opts.iterative_margin,
                                    opts.iterative_tolerance, opts.iterative_max_iterations, opts.iterative_seed);
    out.eigenvalues = top.values.head(pi);
    out.eigenvectors = top.vectors.leftCols(pi);
    if (p < d) next_value = top.values.segment(pi, 1);
  }
  if (next_value.size() == 1 && std::abs(std::abs(out.eigenvalues(pi - 1)) - std::abs(next_value(0))) <= 1e-12)
    out.warnings.push_back("eigenvalue magnitude tie at the truncation rank; kept the larger signed value");
  Matrix m = out.eigenvectors * out.eigenvalues.asDiagonal() * out.eigenvectors.transpose();
  out.matrix = 0.5 * (m + m.transpose());
  return out;
}

/// Largest k with lambda_k >= eta0 over magnitude-ordered (signed) eigenvalues;
/// 0 when no eigenvalue reaches the threshold.
inline std::size_t estimate_rank(const Vector& eigenvalues, double eta0) {
  detail::require(eta0 > 0.0, "rank threshold eta0 must be positive");
  std::size_t r = 0;
  for (Eigen::Index k = 0; k < eigenvalues.size(); ++k)
    if (eigenvalues(k) >= eta0) r = static_cast<std::size_t>(k) + 1;
  return r;
}

/// eta0 = 8 d^3 p log^2 d / sqrt(n T).
inline double default_eta0(double d, double p, double n, double T) {
  detail::require(d > 0 && p > 0 && n > 0 && T > 0, "eta0 inputs must be positive");
  const double ld = std::log(d);
  return 8.0 * d * d * d * p * ld * ld / std::sqrt(n * T);
}

struct RankFixedPoint {
  std::size_t rank = 0;
  double eta0 = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Resolves the circular dependence of eta0 on p: start from p0 = d and
/// iterate p <- estimate_rank(lambda, eta0(p)) until the rank repeats.
inline RankFixedPoint estimate_rank_fixed_point(const Vector& eigenvalues, std::size_t n, double mean_length) {
  const auto d = static_cast<std::size_t>(eigenvalues.size());
  detail::require(d >= 1, "no eigenvalues supplied");
  RankFixedPoint out;
  std::size_t current = d;
  for (std::size_t it = 1; it <= d + 1; ++it) {
    out.iterations = it;
    out.eta0 = default_eta0(static_cast<double>(d), static_cast<double>(current), static_cast<double>(n), mean_length);
    if (out.eta0 <= 0.0) {
      out.rank = d;
      out.converged = true;
      return out;
    }
    const std::size_t next = estimate_rank(eigenvalues, out.eta0);
    if (next == current || next == 0) {
      out.rank = next;
      out.converged = next == current;
      return out;
    }
    current = next;
  }
  out.rank = current;
  return out;
}

}  // namespace knit
