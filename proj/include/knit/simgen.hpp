#pragma once

// Synthetic cohorts from the dynamic log-linear topic model: code w is drawn
// with probability softmax(V c)_w where the discourse vector c follows a slow
// AR(1) process (or one of two robustness alternatives).

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "knit/error.hpp"
#include "knit/parallel.hpp"
#include "knit/rng.hpp"

namespace knit {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Code = std::uint32_t;

enum class ProcessKind { AR1, SphereWalk, ARMA13 };

inline std::string to_string(ProcessKind kind) {
  switch (kind) {
    case ProcessKind::AR1: return "ar1";
    case ProcessKind::SphereWalk: return "sphere";
    case ProcessKind::ARMA13: return "arma13";
  }
  return "unknown";
}

inline ProcessKind parse_process(const std::string& name) {
  if (name == "ar1") return ProcessKind::AR1;
  if (name == "sphere") return ProcessKind::SphereWalk;
  if (name == "arma13") return ProcessKind::ARMA13;
  throw InputError("unknown discourse process '" + name + "' (expected ar1, sphere or arma13)");
}

/// AR coefficient alpha = 1 - log(d) / p^2 tied to the vocabulary size.
inline double default_ar_alpha(std::size_t d, std::size_t p) {
  return 1.0 - std::log(static_cast<double>(d)) / (static_cast<double>(p) * static_cast<double>(p));
}

/// Tangent step of the sphere walk, matched to the AR(1) per-step displacement.
inline double default_sphere_step(std::size_t d, std::size_t p) {
  return std::sqrt(std::log(static_cast<double>(d))) / static_cast<double>(p);
}

struct SimConfig {
  std::size_t d = 100;
  std::size_t p = 22;
  std::size_t n = 1000;
  std::size_t T = 1000;
  std::vector<std::size_t> lengths;  // per-patient T_i; overrides T when non-empty
  std::size_t q = 2;
  std::optional<double> kappa_exponent;
  std::uint64_t seed = 1;
  std::size_t mc_samples = 1'000'000;
  ProcessKind process = ProcessKind::AR1;
  std::optional<double> alpha;        // defaults to 1 - log d / p^2
  std::optional<double> sphere_step;  // defaults to sqrt(log d) / p
  std::size_t arma_burn_in = 100;

  double ar_alpha() const { return alpha.value_or(default_ar_alpha(d, p)); }

  std::size_t length_of(std::size_t patient) const { return lengths.empty() ? T : lengths[patient]; }

  void validate() const {
    detail::require(d >= 2, "vocabulary size d must be at least 2");
    detail::require(p >= 1, "embedding dimension p must be at least 1");
    detail::require(n >= 1, "cohort size n must be at least 1");
    detail::require(q >= 1, "window size q must be at least 1");
    detail::require(mc_samples >= 10'000, "mc_samples must be at least 10^4");
    detail::require(lengths.empty() || lengths.size() == n, "lengths list must have n entries");
    for (std::size_t i = 0; i < n; ++i)
      detail::require(length_of(i) > 2 * q, "every sequence length must exceed 2q");
    const double a = ar_alpha();
    detail::require(a > 0.0 && a < 1.0 + 1e-15,
                    "AR coefficient alpha must lie in (0, 1]; increase p or set alpha explicitly");
  }
};

/// d x p knowledge-graph embedding with the vector that was subtracted
/// during centering (zero for uncentered constructions).
struct EmbeddingMatrix {
  Matrix values;
  Vector centering_vector;

  std::size_t d() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t p() const { return static_cast<std::size_t>(values.cols()); }

  /// alpha_p V V^T, the population target of the PMI estimators.
  Matrix scaled_gram(double alpha_p) const { return alpha_p * values * values.transpose(); }

  /// kappa = sqrt(alpha_p) * largest singular value of V.
  double kappa(double alpha_p) const {
    Eigen::JacobiSVD<Matrix> svd(values);
    return std::sqrt(alpha_p) * svd.singularValues()(0);
  }

  /// xi = smallest / largest singular value of V.
  double xi() const {
    Eigen::JacobiSVD<Matrix> svd(values);
    const auto& s = svd.singularValues();
    return s(s.size() - 1) / s(0);
  }
};

struct CodeSequence {
  std::vector<Code> codes;

  std::size_t size() const { return codes.size(); }
  bool operator==(const CodeSequence&) const = default;
};

struct Cohort {
  std::size_t d = 0;
  std::size_t q = 0;  // window size the cohort was generated for (informational)
  std::vector<CodeSequence> sequences;

  std::size_t n() const { return sequences.size(); }
  bool operator==(const Cohort&) const = default;
};

struct DiscourseProcess {
  ProcessKind kind = ProcessKind::AR1;
  double alpha = 0.9;
  std::size_t p = 1;
  double sphere_step = 0.1;
  std::size_t arma_burn_in = 100;

  static DiscourseProcess from_config(const SimConfig& cfg) {
    return {cfg.process, cfg.ar_alpha(), cfg.p,
            cfg.sphere_step.value_or(default_sphere_step(cfg.d, cfg.p)), cfg.arma_burn_in};
  }
};

inline constexpr std::array<double, 3> kArmaCoefficients{0.2, 0.1, 0.05};

/// Discourse vector plus the last three innovations (used by ARMA13 only).
struct DiscourseState {
  Vector c;
  std::array<Vector, 3> innovations;
};

namespace detail {

inline Vector gaussian_vector(std::size_t p, double sd, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(static_cast<Eigen::Index>(p));
  for (Eigen::Index k = 0; k < v.size(); ++k) v(k) = sd * normal(rng);
  return v;
}

inline Matrix orthonormal_gaussian(std::size_t d, std::size_t p, Rng& rng) {
  detail::require(p <= d, "embedding dimension p cannot exceed d");
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix g(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(p));
  for (Eigen::Index j = 0; j < g.cols(); ++j)
    for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = normal(rng);
  if (!g.allFinite()) throw NumericalError("non-finite Gaussian draw while building embeddings");
  Eigen::HouseholderQR<Matrix> qr(g);
  return qr.householderQ() * Matrix::Identity(g.rows(), g.cols());
}

}  // namespace detail

/// Normalized probabilities softmax(logits), computed with max subtraction.
inline Vector softmax(const Vector& logits) {
  if (!logits.allFinite()) throw NumericalError("non-finite logits in softmax");
  Vector e = (logits.array() - logits.maxCoeff()).exp().matrix();
  return e / e.sum();
}

inline DiscourseState initial_discourse(const DiscourseProcess& process, Rng& rng);

inline DiscourseState step_discourse(DiscourseState state, const DiscourseProcess& process, Rng& rng) {
  const auto p = process.p;
  detail::require(static_cast<std::size_t>(state.c.size()) == p, "discourse state has wrong dimension");
  const double inv_sqrt_p = 1.0 / std::sqrt(static_cast<double>(p));
  switch (process.kind) {
    case ProcessKind::AR1: {
      const Vector r = detail::gaussian_vector(p, inv_sqrt_p, rng);
      state.c = std::sqrt(process.alpha) * state.c + std::sqrt(1.0 - process.alpha) * r;
      break;
    }
    case ProcessKind::SphereWalk: {
      // Gaussian step projected onto the tangent plane, then back to the unit sphere.
      Vector g = detail::gaussian_vector(p, process.sphere_step * inv_sqrt_p, rng);
      g -= g.dot(state.c) * state.c;
      state.c += g;
      state.c.normalize();
      break;
    }
    case ProcessKind::ARMA13: {
      const Vector r = detail::gaussian_vector(p, inv_sqrt_p, rng);
      Vector next = std::sqrt(process.alpha) * state.c + std::sqrt(1.0 - process.alpha) * r;
      for (std::size_t k = 0; k < kArmaCoefficients.size(); ++k)
        next += kArmaCoefficients[k] * state.innovations[k];
      state.c = std::move(next);
      state.innovations[2] = std::move(state.innovations[1]);
      state.innovations[1] = std::move(state.innovations[0]);
      state.innovations[0] = r;
      break;
    }
  }
  return state;
}

/// c_1 from the stationary law (AR1), uniform on the sphere (SphereWalk), or
/// after a zero-innovation start and burn-in (ARMA13).
inline DiscourseState initial_discourse(const DiscourseProcess& process, Rng& rng) {
  const auto p = process.p;
  const Eigen::Index pi = static_cast<Eigen::Index>(p);
  const double inv_sqrt_p = 1.0 / std::sqrt(static_cast<double>(p));
  DiscourseState state;
  for (auto& r : state.innovations) r = Vector::Zero(pi);
  switch (process.kind) {
    case ProcessKind::AR1:
      state.c = detail::gaussian_vector(p, inv_sqrt_p, rng);
      break;
    case ProcessKind::SphereWalk:
      do {
        state.c = detail::gaussian_vector(p, 1.0, rng);
      } while (state.c.norm() == 0.0);
      state.c.normalize();
      break;
    case ProcessKind::ARMA13:
      state.c = detail::gaussian_vector(p, inv_sqrt_p, rng);
      for (std::size_t t = 0; t < process.arma_burn_in; ++t) state = step_discourse(std::move(state), process, rng);
      break;
  }
  return state;
}

/// Averages softmax(V c) over c ~ N(0, I_p / p).
inline Vector estimate_marginals_mc(const EmbeddingMatrix& embedding, std::size_t samples, std::uint64_t seed) {
  detail::require(samples >= 1, "Monte-Carlo marginals need at least one sample");
  const Matrix& V = embedding.values;
  const Eigen::Index d = V.rows();
  const Eigen::Index p = V.cols();
  const double inv_sqrt_p = 1.0 / std::sqrt(static_cast<double>(p));
  Rng rng = make_stream(seed, 0, StreamPurpose::MarginalsMC);
  std::normal_distribution<double> normal(0.0, 1.0);

  constexpr std::size_t kBatch = 4096;
  Vector acc = Vector::Zero(d);
  Matrix c(p, static_cast<Eigen::Index>(kBatch));
  for (std::size_t done = 0; done < samples; done += kBatch) {
    const auto b = static_cast<Eigen::Index>(std::min(kBatch, samples - done));
    for (Eigen::Index j = 0; j < b; ++j)
      for (Eigen::Index k = 0; k < p; ++k) c(k, j) = inv_sqrt_p * normal(rng);
    Matrix logits = V * c.leftCols(b);
    if (!logits.allFinite()) throw NumericalError("non-finite logits in marginal estimation");
    const Eigen::RowVectorXd col_max = logits.colwise().maxCoeff();
    logits.rowwise() -= col_max;
    logits = logits.array().exp().matrix();
    const Eigen::RowVectorXd col_sum = logits.colwise().sum();
    logits.array().rowwise() /= col_sum.array();
    acc += logits.rowwise().sum();
  }
  return acc / acc.sum();
}

/// Orthonormal Gaussian basis, Monte-Carlo marginals, then centering
/// V_w = V_init_w - V_init^T p_mc.
inline EmbeddingMatrix build_embeddings(const SimConfig& cfg) {
  cfg.validate();
  Rng rng = make_stream(cfg.seed, 0, StreamPurpose::Embedding);
  EmbeddingMatrix init{detail::orthonormal_gaussian(cfg.d, cfg.p, rng), Vector::Zero(static_cast<Eigen::Index>(cfg.p))};
  const Vector p_mc = estimate_marginals_mc(init, cfg.mc_samples, cfg.seed);
  EmbeddingMatrix out;
  out.centering_vector = init.values.transpose() * p_mc;
  out.values = init.values.rowwise() - out.centering_vector.transpose();
  if (!out.values.allFinite()) throw NumericalError("non-finite embedding after centering");
  return out;
}

/// V = d^{-kappa} U with U an orthonormalized Gaussian matrix; no centering.
inline EmbeddingMatrix scaled_embeddings(const SimConfig& cfg) {
  detail::require(cfg.kappa_exponent.has_value(), "scaled embeddings need kappa_exponent");
  detail::require(cfg.d >= 2 && cfg.p >= 1, "invalid embedding dimensions");
  Rng rng = make_stream(cfg.seed, 0, StreamPurpose::Embedding);
  const double scale = std::pow(static_cast<double>(cfg.d), -*cfg.kappa_exponent);
  EmbeddingMatrix out;
  out.values = scale * detail::orthonormal_gaussian(cfg.d, cfg.p, rng);
  out.centering_vector = Vector::Zero(static_cast<Eigen::Index>(cfg.p));
  return out;
}

/// Draws one patient's codes: w_t ~ softmax(V c_t), c_t following `process`.
inline CodeSequence sample_sequence(const EmbeddingMatrix& embedding, std::size_t length,
                                    const DiscourseProcess& process, Rng& rng) {
  const Matrix& V = embedding.values;
  detail::require(static_cast<std::size_t>(V.cols()) == process.p, "process dimension does not match embedding");
  detail::require(length >= 1, "sequence length must be at least 1");
  const Eigen::Index d = V.rows();
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  CodeSequence seq;
  seq.codes.reserve(length);
  DiscourseState state = initial_discourse(process, rng);
  Vector logits(d);
  std::vector<double> cumulative(static_cast<std::size_t>(d));
  for (std::size_t t = 0; t < length; ++t) {
    logits.noalias() = V * state.c;
    if (!logits.allFinite()) throw NumericalError("non-finite logits while sampling a sequence");
    const double top = logits.maxCoeff();
    double running = 0.0;
    for (Eigen::Index w = 0; w < d; ++w) {
      running += std::exp(logits(w) - top);
      cumulative[static_cast<std::size_t>(w)] = running;
    }
    const double u = unif(rng) * running;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    if (it == cumulative.end()) --it;
    seq.codes.push_back(static_cast<Code>(it - cumulative.begin()));
    if (t + 1 < length) state = step_discourse(std::move(state), process, rng);
  }
  return seq;
}

/// Full cohort from the topic model; patient i uses stream (seed, i).
inline Cohort simulate_cohort(const SimConfig& cfg, const EmbeddingMatrix& embedding, std::size_t threads = 1) {
  cfg.validate();
  detail::require(embedding.d() == cfg.d && embedding.p() == cfg.p, "embedding shape does not match config");
  const auto process = DiscourseProcess::from_config(cfg);
  Cohort cohort{cfg.d, cfg.q, std::vector<CodeSequence>(cfg.n)};
  parallel_for(cfg.n, threads, [&](std::size_t i) {
    Rng rng = make_stream(cfg.seed, i, StreamPurpose::Sequence);
    cohort.sequences[i] = sample_sequence(embedding, cfg.length_of(i), process, rng);
  });
  return cohort;
}

/// n sequences of i.i.d. Multinomial(1, probs) draws, each of length T.
inline Cohort sample_null_cohort(std::span<const double> probs, std::size_t n, std::size_t length,
                                 std::uint64_t seed, std::size_t threads = 1) {
  detail::require(probs.size() >= 1, "probability vector must be non-empty");
  double total = 0.0;
  for (double v : probs) {
    detail::require(std::isfinite(v) && v >= 0.0, "probabilities must be finite and non-negative");
    total += v;
  }
  detail::require(std::abs(total - 1.0) <= 1e-9, "probability vector must sum to 1");
  std::vector<double> cumulative(probs.size());
  std::partial_sum(probs.begin(), probs.end(), cumulative.begin());
  Cohort cohort{probs.size(), 0, std::vector<CodeSequence>(n)};
  parallel_for(n, threads, [&](std::size_t i) {
    Rng rng = make_stream(seed, i, StreamPurpose::NullSequence);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    auto& codes = cohort.sequences[i].codes;
    codes.resize(length);
    for (auto& code : codes) {
      const double u = unif(rng) * cumulative.back();
      auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
      if (it == cumulative.end()) --it;
      code = static_cast<Code>(it - cumulative.begin());
    }
  });
  return cohort;
}

/// Population PMI log(p_{w,w'} / (p_w p_{w'})) for the stationary AR(1)
/// model, with p_{w,w'} averaged over lags 1..q. Expectations are Monte-Carlo
/// averages over `samples` stationary draws of (c_t, c_{t+u}).
inline Matrix population_pmi_ar1(const EmbeddingMatrix& embedding, double alpha, std::size_t q,
                                 std::size_t samples, std::uint64_t seed) {
  detail::require(samples >= 1 && q >= 1, "population PMI needs samples >= 1 and q >= 1");
  detail::require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
  const Matrix& V = embedding.values;
  const Eigen::Index d = V.rows();
  const Eigen::Index p = V.cols();
  const double inv_sqrt_p = 1.0 / std::sqrt(static_cast<double>(p));
  Rng rng = make_stream(seed, 0, StreamPurpose::PopulationMC);
  std::normal_distribution<double> normal(0.0, 1.0);

  auto column_softmax = [](Matrix logits) {
    const Eigen::RowVectorXd col_max = logits.colwise().maxCoeff();
    logits.rowwise() -= col_max;
    logits = logits.array().exp().matrix();
    const Eigen::RowVectorXd col_sum = logits.colwise().sum();
    logits.array().rowwise() /= col_sum.array();
    return logits;
  };

  constexpr std::size_t kBatch = 2048;
  Vector marginal = Vector::Zero(d);
  Matrix joint = Matrix::Zero(d, d);
  Matrix c(p, static_cast<Eigen::Index>(kBatch));
  Matrix r(p, static_cast<Eigen::Index>(kBatch));
  for (std::size_t done = 0; done < samples; done += kBatch) {
    const auto b = static_cast<Eigen::Index>(std::min(kBatch, samples - done));
    for (Eigen::Index j = 0; j < b; ++j)
      for (Eigen::Index k = 0; k < p; ++k) c(k, j) = inv_sqrt_p * normal(rng);
    const Matrix s0 = column_softmax(V * c.leftCols(b));
    marginal += s0.rowwise().sum();
    for (std::size_t u = 1; u <= q; ++u) {
      for (Eigen::Index j = 0; j < b; ++j)
        for (Eigen::Index k = 0; k < p; ++k) r(k, j) = inv_sqrt_p * normal(rng);
      const double rho = std::pow(alpha, 0.5 * static_cast<double>(u));
      const Matrix cu = rho * c.leftCols(b) + std::sqrt(1.0 - rho * rho) * r.leftCols(b);
      joint.noalias() += s0 * column_softmax(V * cu).transpose();
    }
  }
  const double m = static_cast<double>(samples);
  marginal /= m;
  joint /= m * static_cast<double>(q);
  joint = 0.5 * (joint + joint.transpose()).eval();
  Matrix pmi(d, d);
  for (Eigen::Index a = 0; a < d; ++a)
    for (Eigen::Index b = 0; b < d; ++b) pmi(a, b) = std::log(joint(a, b) / (marginal(a) * marginal(b)));
  return pmi;
}

}  // namespace knit
