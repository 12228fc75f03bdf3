#pragma once

// Entrywise variance of the low-rank PMI estimator. The leading error term of
// the rank-p truncation is P W + W P, with W = PMI-hat - alpha_p V V^T and
// P the projector onto the estimated eigenspace, so
//
//   Var(PMI~(w,w')) = P_w S_{w'w'} P_w^T + P_{w'} S_{ww} P_{w'}^T + 2 P_w S_{w'w} P_{w'}^T
//
// where S_{a,b} = Cov(W_{a,.}, W_{b,.}). S comes either from patient-level
// residual rows or from the closed form under the global null.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "knit/cooccur.hpp"
#include "knit/error.hpp"
#include "knit/spectra.hpp"

namespace knit {

/// Counts variances that came out slightly negative from rounding.
struct ClampStats {
  std::size_t clamped = 0;
};

inline constexpr double kNegativeVarianceTolerance = 1e-9;

inline double finalize_variance(double raw, ClampStats* stats) {
  if (!std::isfinite(raw)) throw NumericalError("non-finite variance");
  if (raw < -kNegativeVarianceTolerance)
    throw NumericalError("negative variance " + std::to_string(raw) + " from inconsistent covariance blocks");
  if (raw < 0.0) {
    if (stats) ++stats->clamped;
    return 0.0;
  }
  return raw;
}

/// P = U U^T kept in factored form.
class Projector {
 public:
  Projector() = default;
  explicit Projector(Matrix basis) : basis_(std::move(basis)) {}

  static Projector from_estimate(const PmiEstimate& est) {
    detail::require(est.kind == PmiKind::LowRank, "projector needs a low-rank PMI estimate");
    return Projector(est.eigenvectors);
  }

  std::size_t d() const { return static_cast<std::size_t>(basis_.rows()); }
  std::size_t rank() const { return static_cast<std::size_t>(basis_.cols()); }
  const Matrix& basis() const { return basis_; }

  Vector row(std::size_t w) const { return basis_ * basis_.row(static_cast<Eigen::Index>(w)).transpose(); }
  double entry(std::size_t a, std::size_t b) const {
    return basis_.row(static_cast<Eigen::Index>(a)).dot(basis_.row(static_cast<Eigen::Index>(b)));
  }
  Vector apply(const Vector& x) const { return basis_ * (basis_.transpose() * x); }
  Matrix dense() const { return basis_ * basis_.transpose(); }

 private:
  Matrix basis_;
};

/// Generic covariance-block form: any callable (a, b) -> d x d matrix
/// S_{a,b} = Cov(W_{a,.}, W_{b,.}). One block is held at a time.
template <typename CovProvider>
double var_lowrank_entry(const Projector& proj, CovProvider&& cov, std::size_t w, std::size_t w_prime,
                         ClampStats* stats = nullptr) {
  const Vector pw = proj.row(w);
  const Vector pv = proj.row(w_prime);
  double total = 0.0;
  {
    const Matrix block = cov(w_prime, w_prime);
    total += pw.dot(block * pw);
  }
  {
    const Matrix block = cov(w, w);
    total += pv.dot(block * pv);
  }
  {
    const Matrix block = cov(w_prime, w);
    total += 2.0 * pw.dot(block * pv);
  }
  return finalize_variance(total, stats);
}

// ---------------------------------------------------------------------------
// Global-null covariance
// ---------------------------------------------------------------------------

/// Parameters of the summary-only covariance: marginal probabilities
/// p-hat_w = C_w / C-bar, n, mean length T and window q (T0 = T q - q^2).
struct NullCovarianceModel {
  Vector p_hat;
  std::size_t n = 0;
  double T = 0.0;
  std::size_t q = 0;

  double T0() const { return T * static_cast<double>(q) - static_cast<double>(q * q); }
  double n_T0() const { return static_cast<double>(n) * T0(); }
  std::size_t d() const { return static_cast<std::size_t>(p_hat.size()); }

  void validate() const {
    detail::require(n >= 1, "null model needs n >= 1");
    detail::require(T0() > 0.0, "null model needs T q - q^2 > 0");
    detail::require(p_hat.size() >= 1, "null model needs marginal probabilities");
    detail::require((p_hat.array() >= 0.0).all(), "marginal probabilities must be non-negative");
    detail::require(std::abs(p_hat.sum() - 1.0) <= 1e-9, "marginal probabilities must sum to 1");
  }

  static NullCovarianceModel from_summary(const CooccurrenceSummary& s) {
    NullCovarianceModel m;
    m.p_hat = Vector(static_cast<Eigen::Index>(s.d()));
    for (std::size_t w = 0; w < s.d(); ++w)
      m.p_hat(static_cast<Eigen::Index>(w)) = static_cast<double>(s.marginals[w]) / static_cast<double>(s.total);
    m.n = s.n;
    m.T = s.mean_length();
    m.q = s.q;
    m.validate();
    return m;
  }
};

/// A d x d matrix of the form
///   scale * ( c_ones 1 1^T + c_col 1 e_col^T + c_row e_row 1^T
///             + c_diag diag(p)^{-1} + c_outer e_orow e_ocol^T ).
/// The probability vector is referenced, not copied.
struct NullCovBlock {
  double scale = 0.0;
  double c_ones = 0.0;
  std::size_t col = 0;
  double c_col = 0.0;
  std::size_t row = 0;
  double c_row = 0.0;
  double c_diag = 0.0;
  std::size_t outer_row = 0;
  std::size_t outer_col = 0;
  double c_outer = 0.0;
  const Vector* p = nullptr;

  double entry(std::size_t a, std::size_t b) const {
    double v = c_ones;
    if (b == col) v += c_col;
    if (a == row) v += c_row;
    if (a == b) v += c_diag / (*p)(static_cast<Eigen::Index>(a));
    if (a == outer_row && b == outer_col) v += c_outer;
    return scale * v;
  }

  /// x^T B y in O(d).
  double bilinear(const Vector& x, const Vector& y) const {
    const double weighted = (x.array() * y.array() / p->array()).sum();
    const auto ix = [](std::size_t k) { return static_cast<Eigen::Index>(k); };
    return scale * (c_ones * x.sum() * y.sum() + c_col * x.sum() * y(ix(col)) + c_row * x(ix(row)) * y.sum() +
                    c_diag * weighted + c_outer * x(ix(outer_row)) * y(ix(outer_col)));
  }

  Matrix dense() const {
    const auto d = p->size();
    Matrix m(d, d);
    for (Eigen::Index a = 0; a < d; ++a)
      for (Eigen::Index b = 0; b < d; ++b) m(a, b) = entry(static_cast<std::size_t>(a), static_cast<std::size_t>(b));
    return m;
  }
};

/// Cov(W_{w,.}, W_{w',.}) under the global null; the w == w' case uses the
/// dedicated diagonal-block coefficients.
inline NullCovBlock null_cov_block(const NullCovarianceModel& model, std::size_t w, std::size_t w_prime) {
  const std::size_t d = model.d();
  detail::require(w < d && w_prime < d, "covariance block index out of range");
  const double pw = model.p_hat(static_cast<Eigen::Index>(w));
  const double pv = model.p_hat(static_cast<Eigen::Index>(w_prime));
  if (pw <= 0.0) throw InputError("code " + std::to_string(w) + " has zero marginal probability");
  if (pv <= 0.0) throw InputError("code " + std::to_string(w_prime) + " has zero marginal probability");
  NullCovBlock b;
  b.p = &model.p_hat;
  if (w == w_prime) {
    b.scale = 1.0 / (model.n_T0() * pw);
    b.c_ones = pw - 0.5;
    b.col = w;
    b.c_col = -0.5;
    b.row = w;
    b.c_row = -0.5;
    b.c_diag = 0.5 * (1.0 - pw);
    b.outer_row = w;
    b.outer_col = w;
    b.c_outer = 0.5 / pw;
  } else {
    b.scale = 1.0 / model.n_T0();
    b.c_ones = 1.0;
    b.col = w;
    b.c_col = -0.5 / pw;
    b.row = w_prime;
    b.c_row = -0.5 / pv;
    b.c_diag = -0.5;
    b.outer_row = w_prime;
    b.outer_col = w;
    b.c_outer = 0.5 / (pw * pv);
  }
  return b;
}

/// Var(PMI-hat(w,w')) under the null, i.e. entry (w', w') of Cov(W_{w,.}).
inline double var_empirical_entry_null(const NullCovarianceModel& model, std::size_t w, std::size_t w_prime) {
  return null_cov_block(model, w, w).entry(w_prime, w_prime);
}

/// Low-rank entry variance with null covariance blocks, O(d) per entry.
inline double var_lowrank_entry_null(const Projector& proj, const NullCovarianceModel& model, std::size_t w,
                                     std::size_t w_prime, ClampStats* stats = nullptr) {
  const Vector pw = proj.row(w);
  const Vector pv = proj.row(w_prime);
  const double total = null_cov_block(model, w_prime, w_prime).bilinear(pw, pw) +
                       null_cov_block(model, w, w).bilinear(pv, pv) +
                       2.0 * null_cov_block(model, w_prime, w).bilinear(pw, pv);
  return finalize_variance(total, stats);
}

/// Precomputes P 1, U^T D U (D = diag(p)^{-1}) and friends so that every
/// low-rank null variance costs O(p) once the projector is factored.
class NullVarianceEngine {
 public:
  NullVarianceEngine(const Projector& proj, const NullCovarianceModel& model) : proj_(proj), model_(model) {
    model_.validate();
    detail::require(proj_.d() == model_.d(), "projector and null model disagree on d");
    const Matrix& u = proj_.basis();
    const Vector inv_p = model_.p_hat.cwiseInverse();
    row_sums_ = u * u.colwise().sum().transpose();
    u_gram_ = u * (u.transpose() * inv_p.asDiagonal() * u);
  }

  double bilinear_rows(const NullCovBlock& b, std::size_t x, std::size_t y) const {
    const auto ix = [](std::size_t k) { return static_cast<Eigen::Index>(k); };
    const double rx = row_sums_(ix(x));
    const double ry = row_sums_(ix(y));
    const double weighted = u_gram_.row(ix(x)).dot(proj_.basis().row(ix(y)));
    return b.scale * (b.c_ones * rx * ry + b.c_col * rx * proj_.entry(y, b.col) + b.c_row * proj_.entry(x, b.row) * ry +
                      b.c_diag * weighted + b.c_outer * proj_.entry(x, b.outer_row) * proj_.entry(y, b.outer_col));
  }

  double variance(std::size_t w, std::size_t w_prime, ClampStats* stats = nullptr) const {
    const double total = bilinear_rows(null_cov_block(model_, w_prime, w_prime), w, w) +
                         bilinear_rows(null_cov_block(model_, w, w), w_prime, w_prime) +
                         2.0 * bilinear_rows(null_cov_block(model_, w_prime, w), w, w_prime);
    return finalize_variance(total, stats);
  }

 private:
  const Projector& proj_;
  const NullCovarianceModel& model_;
  Vector row_sums_;
  Matrix u_gram_;
};

/// Cov(PMI~_{i,.}) under the null, assembled from four closed-form parts
/// using only the factored projector: P Cov(E_i) P, the squared-weight sum
/// of diagonal blocks, the j != l cross-block sum, and the mixed terms.
inline Matrix row_cov_null_fast(const Projector& proj, const NullCovarianceModel& model, std::size_t i) {
  model.validate();
  const std::size_t d = model.d();
  detail::require(proj.d() == d, "projector and null model disagree on d");
  detail::require(i < d, "row index out of range");
  const auto di = static_cast<Eigen::Index>(d);
  const auto ii = static_cast<Eigen::Index>(i);
  const Matrix& u = proj.basis();
  const Vector& prob = model.p_hat;
  if ((prob.array() <= 0.0).any()) throw InputError("null model has a zero marginal probability");
  const Vector inv_p = prob.cwiseInverse();
  const double c = 1.0 / model.n_T0();
  const double pi = prob(ii);

  const Vector ones = Vector::Ones(di);
  const Vector r = u * (u.transpose() * ones);  // P 1
  const Vector col = proj.row(i);                // P e_i
  const double s = col.sum();
  const double sq = col.squaredNorm();           // sum_j P_ji^2
  const Vector a = col.cwiseAbs2().cwiseProduct(inv_p);
  const Vector b = a.cwiseProduct(inv_p);
  const double sum_a = a.sum();
  const Matrix ut_d_u = u.transpose() * inv_p.asDiagonal() * u;
  const Matrix p_dense = proj.dense();
  const Matrix pdp = u * ut_d_u * u.transpose();
  const Vector dcol = inv_p.cwiseProduct(col);  // D P e_i

  // (1) P Cov(E_i) P
  Matrix out = (c / (2.0 * pi)) * ((2.0 * pi - 1.0) * r * r.transpose() - r * col.transpose() - col * r.transpose() +
                                   (1.0 - pi) * pdp + (1.0 / pi) * col * col.transpose());

  // (2) sum_j P_ji^2 Cov(E_j)
  {
    Matrix part = ones * ones.transpose() * (2.0 * sq - sum_a) - ones * a.transpose() - a * ones.transpose();
    part.diagonal() += inv_p * (sum_a - sq) + b;
    out += (c / 2.0) * part;
  }

  // (3) sum_{j != l} P_ji P_li Cov(E_j, E_l)
  {
    const Vector g = col.cwiseProduct((s - col.array()).matrix()).cwiseProduct(inv_p);
    Matrix part = ones * ones.transpose() * (2.0 * s * s - 2.0 * sq) - ones * g.transpose() - g * ones.transpose() +
                  dcol * dcol.transpose();
    part.diagonal() += -(s * s - sq) * inv_p - b;
    out += (c / 2.0) * part;
  }

  // (4) sum_j P_ji (Cov(E_j, E_i) P + P Cov(E_i, E_j)); the cross-block form
  // is used for every j, then the j = i term is switched to the diagonal block.
  {
    const Vector h = 0.5 * dcol;  // P_ji / (2 p_j)
    const Vector ph = u * (u.transpose() * h);
    const Vector pdcol = u * (u.transpose() * dcol);
    Matrix half = s * ones * r.transpose() - ones * ph.transpose() - (s / (2.0 * pi)) * Vector::Unit(di, ii) * r.transpose();
    half -= (s / 2.0) * inv_p.asDiagonal() * p_dense;
    half.row(ii) += (1.0 / (2.0 * pi)) * pdcol.transpose();
    // diagonal-block correction for j = i: P_ii / (2 p_i) (D - 1 1^T) P
    const double pii = col(ii);
    half += (pii / (2.0 * pi)) * (inv_p.asDiagonal() * p_dense - ones * r.transpose());
    out += c * (half + half.transpose());
  }
  return out;
}

/// Same four parts evaluated with a dense d x d projector and dense
/// products; O(d^3). Used as the timing baseline for the factored path.
inline Matrix row_cov_null_dense(const Matrix& p_dense, const NullCovarianceModel& model, std::size_t i) {
  model.validate();
  const auto di = p_dense.rows();
  const auto ii = static_cast<Eigen::Index>(i);
  const Vector& prob = model.p_hat;
  const Matrix dmat = prob.cwiseInverse().asDiagonal();
  const double c = 1.0 / model.n_T0();
  const double pi = prob(ii);
  const Matrix ones = Matrix::Ones(di, di);
  const Matrix e_i = Matrix::Identity(di, di).col(ii);
  const Vector col = p_dense.col(ii);
  const double s = col.sum();
  const double sq = col.squaredNorm();
  const Vector a = col.cwiseAbs2().cwiseProduct(prob.cwiseInverse());
  const Vector b = a.cwiseProduct(prob.cwiseInverse());
  const Vector one_v = Vector::Ones(di);

  Matrix cov_i = (ones * (pi - 0.5) - 0.5 * one_v * e_i.transpose() - 0.5 * e_i * one_v.transpose() +
                  dmat * (0.5 * (1.0 - pi)) + (0.5 / pi) * e_i * e_i.transpose()) /
                 (model.n_T0() * pi);
  Matrix out = p_dense * cov_i * p_dense;

  Matrix part2 = ones * (2.0 * sq - a.sum()) - one_v * a.transpose() - a * one_v.transpose() +
                 dmat * (a.sum() - sq) + Matrix(b.asDiagonal());
  out += (c / 2.0) * part2;

  const Vector g = col.cwiseProduct((s - col.array()).matrix()).cwiseProduct(prob.cwiseInverse());
  const Vector dcol = dmat * col;
  Matrix part3 = ones * (2.0 * s * s - 2.0 * sq) - one_v * g.transpose() - g * one_v.transpose() -
                 dmat * (s * s - sq) + dcol * dcol.transpose() - Matrix(b.asDiagonal());
  out += (c / 2.0) * part3;

  const Vector h = 0.5 * dcol;
  Matrix half = s * ones * p_dense - one_v * (h.transpose() * p_dense) - (s / (2.0 * pi)) * e_i * one_v.transpose() * p_dense -
                (s / 2.0) * dmat * p_dense + (1.0 / (2.0 * pi)) * e_i * (dcol.transpose() * p_dense);
  half += (col(ii) / (2.0 * pi)) * (dmat * p_dense - ones * p_dense);
  out += c * (half + half.transpose());
  return out;
}

// ---------------------------------------------------------------------------
// Patient-level covariance
// ---------------------------------------------------------------------------

/// Residual rows W-hat^(i)_{w,a} = C^(i)_{wa} / (C_{wa}/n) - C^(i)_w / (C_w/n)
/// - C^(i)_a / (C_a/n) + c_i, with c_i = 1 for equal lengths and
/// (T_i - q) / (T-bar - q) otherwise, so rows sum to zero over patients.
class PatientResiduals {
 public:
  PatientResiduals(const CooccurrenceSummary& summary, std::span<const PatientCooccurrence> patients)
      : summary_(summary), patients_(patients.begin(), patients.end()) {
    detail::require(patients_.size() == summary.n, "patient count does not match the summary");
    detail::require(summary.n >= 1, "summary has no patients");
    const std::size_t d = summary.d();
    const bool uniform = summary.uniform_lengths();
    const double tbar = summary.mean_length();
    const double q = static_cast<double>(summary.q);
    marginals_.reserve(patients_.size());
    constants_.reserve(patients_.size());
    for (std::size_t i = 0; i < patients_.size(); ++i) {
      const auto& pc = patients_[i];
      detail::require(pc.d() == d && pc.q == summary.q, "patient matrix does not match summary d or q");
      detail::require(pc.length == summary.lengths[i], "patient length does not match the summary length list");
      marginals_.push_back(pc.counts.row_sums());
      constants_.push_back(uniform ? 1.0 : (static_cast<double>(pc.length) - q) / (tbar - q));
    }
  }

  std::size_t n() const { return patients_.size(); }
  std::size_t d() const { return summary_.d(); }
  double constant(std::size_t i) const { return constants_[i]; }

  /// Fails when C_{w,a} = 0: the pair has to be excluded upstream.
  double entry(std::size_t i, std::size_t w, std::size_t a) const {
    const Count pair_total = summary_.counts.at(w, a);
    if (pair_total == 0)
      throw InputError("zero co-occurrence for pair (" + std::to_string(w) + ", " + std::to_string(a) +
                       "); exclude it before residual computation");
    const double n = static_cast<double>(patients_.size());
    return static_cast<double>(patients_[i].counts.at(w, a)) * n / static_cast<double>(pair_total) -
           static_cast<double>(marginals_[i][w]) * n / static_cast<double>(summary_.marginals[w]) -
           static_cast<double>(marginals_[i][a]) * n / static_cast<double>(summary_.marginals[a]) + constants_[i];
  }

  Vector row(std::size_t i, std::size_t w) const {
    const std::size_t d = summary_.d();
    const double n = static_cast<double>(patients_.size());
    Vector out(static_cast<Eigen::Index>(d));
    const double own = static_cast<double>(marginals_[i][w]) * n / static_cast<double>(summary_.marginals[w]);
    for (std::size_t a = 0; a < d; ++a)
      out(static_cast<Eigen::Index>(a)) =
          -own - static_cast<double>(marginals_[i][a]) * n / static_cast<double>(summary_.marginals[a]) + constants_[i];
    const auto pooled = summary_.counts.row(w);
    std::size_t k = 0;
    for (std::size_t a = 0; a < d; ++a) {
      while (k < pooled.size() && pooled[k].w_prime < a) ++k;
      if (k >= pooled.size() || pooled[k].w_prime != a)
        throw InputError("zero co-occurrence for pair (" + std::to_string(w) + ", " + std::to_string(a) +
                         "); exclude it before residual computation");
    }
    for (const auto& e : patients_[i].counts.row(w))
      out(e.w_prime) += static_cast<double>(e.count) * n / static_cast<double>(summary_.counts.at(w, e.w_prime));
    return out;
  }

  /// True when every C_{w,a} in row w is positive.
  bool row_complete(std::size_t w) const { return summary_.counts.row(w).size() == summary_.d(); }

 private:
  const CooccurrenceSummary& summary_;
  std::vector<PatientCooccurrence> patients_;
  std::vector<std::vector<Count>> marginals_;
  std::vector<double> constants_;
};

inline Vector patient_residual_row(std::size_t i, std::size_t w, const PatientResiduals& residuals) {
  return residuals.row(i, w);
}

/// S-hat_{w,w'} = 1/(n(n-1)) sum_i W-hat^(i)T_{w,.} W-hat^(i)_{w',.}.
inline Matrix cov_rows_patient(std::size_t w, std::size_t w_prime, const PatientResiduals& residuals) {
  const std::size_t n = residuals.n();
  detail::require(n >= 2, "patient-level covariance needs n >= 2");
  const auto d = static_cast<Eigen::Index>(residuals.d());
  Matrix acc = Matrix::Zero(d, d);
  for (std::size_t i = 0; i < n; ++i) acc.noalias() += residuals.row(i, w) * residuals.row(i, w_prime).transpose();
  return acc / (static_cast<double>(n) * static_cast<double>(n - 1));
}

/// Patient-path low-rank variance in O(n d): the three quadratic forms
/// collapse to 1/(n(n-1)) sum_i (P_w . W^(i)_{w'} + P_{w'} . W^(i)_w)^2.
inline double var_lowrank_entry_patient(const Projector& proj, const PatientResiduals& residuals, std::size_t w,
                                        std::size_t w_prime, ClampStats* stats = nullptr) {
  const std::size_t n = residuals.n();
  detail::require(n >= 2, "patient-level covariance needs n >= 2");
  const Vector pw = proj.row(w);
  const Vector pv = proj.row(w_prime);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = pw.dot(residuals.row(i, w_prime)) + pv.dot(residuals.row(i, w));
    acc += x * x;
  }
  return finalize_variance(acc / (static_cast<double>(n) * static_cast<double>(n - 1)), stats);
}

/// Var(PMI-hat(w,w')) from patient data: 1/(n(n-1)) sum_i W-hat^(i)_{w,w'}^2.
inline double var_empirical_entry_patient(const PatientResiduals& residuals, std::size_t w, std::size_t w_prime) {
  const std::size_t n = residuals.n();
  detail::require(n >= 2, "patient-level covariance needs n >= 2");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = residuals.entry(i, w, w_prime);
    acc += x * x;
  }
  return acc / (static_cast<double>(n) * static_cast<double>(n - 1));
}

/// Var(PMI-hat(w,w')) from patient data for every pair at once, in
/// O(n d^2 + nnz): the residual splits into a sparse pair term and a dense
/// marginal term whose squares and cross products are accumulated
/// separately. Pairs with C_{w,w'} = 0 are NaN.
inline Matrix empirical_variance_matrix_patient(const CooccurrenceSummary& summary,
                                                std::span<const PatientCooccurrence> patients) {
  const std::size_t n = patients.size();
  detail::require(n >= 2, "patient-level covariance needs n >= 2");
  detail::require(n == summary.n, "patient count does not match the summary");
  const std::size_t d = summary.d();
  const auto di = static_cast<Eigen::Index>(d);
  const double nn = static_cast<double>(n);
  const bool uniform = summary.uniform_lengths();
  const double tbar = summary.mean_length();
  const double q = static_cast<double>(summary.q);
  for (std::size_t w = 0; w < d; ++w)
    if (summary.marginals[w] <= 0) throw InputError("code " + std::to_string(w) + " has zero marginal count");

  // y_i(w, w') = c_i - a_i(w) - a_i(w'), a_i(w) = n C^(i)_w / C_w
  Matrix gram = Matrix::Zero(di, di);  // sum_i a_i a_i^T
  Vector ca = Vector::Zero(di);        // sum_i c_i a_i
  double cc = 0.0;                     // sum_i c_i^2
  Matrix sparse = Matrix::Zero(di, di);  // sum_i x^2 + 2 x y over stored entries
  Vector a(di);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& pc = patients[i];
    detail::require(pc.d() == d && pc.q == summary.q, "patient matrix does not match summary d or q");
    const double c = uniform ? 1.0 : (static_cast<double>(pc.length) - q) / (tbar - q);
    const auto row_sums = pc.counts.row_sums();
    for (std::size_t w = 0; w < d; ++w)
      a(static_cast<Eigen::Index>(w)) = nn * static_cast<double>(row_sums[w]) / static_cast<double>(summary.marginals[w]);
    gram.selfadjointView<Eigen::Lower>().rankUpdate(a);
    ca += c * a;
    cc += c * c;
    for (const auto& e : pc.counts.entries()) {
      const double x = nn * static_cast<double>(e.count) / static_cast<double>(summary.counts.at(e.w, e.w_prime));
      const double y = c - a(e.w) - a(e.w_prime);
      sparse(e.w, e.w_prime) += x * x + 2.0 * x * y;
    }
  }
  gram = gram.selfadjointView<Eigen::Lower>();
  Matrix out(di, di);
  const double norm = nn * (nn - 1.0);
  for (Eigen::Index w = 0; w < di; ++w)
    for (Eigen::Index v = 0; v < di; ++v) {
      if (summary.counts.at(static_cast<std::size_t>(w), static_cast<std::size_t>(v)) == 0) {
        out(w, v) = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      const double yy = cc + gram(w, w) + gram(v, v) + 2.0 * gram(w, v) - 2.0 * ca(w) - 2.0 * ca(v);
      out(w, v) = std::max(0.0, (yy + sparse(w, v)) / norm);
    }
  return out;
}

}  // namespace knit
