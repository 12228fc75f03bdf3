#include <gtest/gtest.h>

#include <boost/rational.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "knit/knit.hpp"
#include "oracles.hpp"

using namespace knit;

namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return m;
}

Projector random_projector(Eigen::Index d, Eigen::Index p, std::uint64_t seed) {
  Eigen::HouseholderQR<Matrix> qr(random_matrix(d, p, seed));
  return Projector(qr.householderQ() * Matrix::Identity(d, p));
}

Vector random_probabilities(Eigen::Index d, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.5, 2.0);
  Vector p(d);
  for (Eigen::Index k = 0; k < d; ++k) p(k) = unif(rng);
  return p / p.sum();
}

NullCovarianceModel model_for(const Vector& p, std::size_t n, double T, std::size_t q) {
  NullCovarianceModel m;
  m.p_hat = p;
  m.n = n;
  m.T = T;
  m.q = q;
  return m;
}

double rel_err(const Matrix& a, const Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1e-300, b.cwiseAbs().maxCoeff());
}

/// Patients whose pooled matrix has every pair observed.
struct PatientFixture {
  std::vector<PatientCooccurrence> patients;
  CooccurrenceSummary summary;
};

PatientFixture complete_patients(std::size_t d, std::size_t n, std::vector<std::size_t> lengths, std::size_t q,
                                 std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<Code> code(0, static_cast<Code>(d - 1));
  for (int attempt = 0; attempt < 100; ++attempt) {
    PatientFixture f;
    for (std::size_t i = 0; i < n; ++i) {
      CodeSequence s;
      for (std::size_t t = 0; t < lengths[i]; ++t) s.codes.push_back(code(rng));
      f.patients.push_back(accumulate_patient(s, d, q));
    }
    f.summary = merge(std::span<const PatientCooccurrence>(f.patients));
    if (f.summary.counts.nnz() == d * d) return f;
  }
  throw std::runtime_error("could not draw a complete fixture");
}

}  // namespace

// ---------------------------------------------------------------------------
// Patient-level residuals and covariance
// ---------------------------------------------------------------------------

TEST(PatientResiduals, SinglePatientIsItsOwnMean) {
  const auto f = complete_patients(3, 1, {80}, 2, 1);
  const PatientResiduals res(f.summary, f.patients);
  for (std::size_t w = 0; w < 3; ++w) EXPECT_LE(patient_residual_row(0, w, res).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(PatientResiduals, IdenticalPatientsGiveZeroRows) {
  const auto f = complete_patients(4, 1, {90}, 2, 2);
  const std::vector<PatientCooccurrence> twice{f.patients[0], f.patients[0]};
  const auto s = merge(std::span<const PatientCooccurrence>(twice));
  const PatientResiduals res(s, twice);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t w = 0; w < 4; ++w) EXPECT_LE(res.row(i, w).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(PatientResiduals, MatchesExactRationalTranscription) {
  using Q = boost::rational<long long>;
  const std::size_t d = 4, n = 3;
  const auto f = complete_patients(d, n, {40, 40, 40}, 2, 3);
  const PatientResiduals res(f.summary, f.patients);
  const auto& s = f.summary;
  for (std::size_t i = 0; i < n; ++i) {
    const auto m_i = f.patients[i].counts.row_sums();
    for (std::size_t w = 0; w < d; ++w) {
      const Vector row = res.row(i, w);
      for (std::size_t a = 0; a < d; ++a) {
        const Q exact = Q(f.patients[i].counts.at(w, a) * static_cast<long long>(n), s.counts.at(w, a)) -
                        Q(m_i[w] * static_cast<long long>(n), s.marginals[w]) -
                        Q(m_i[a] * static_cast<long long>(n), s.marginals[a]) + Q(1);
        const double value = boost::rational_cast<double>(exact);
        EXPECT_NEAR(row(static_cast<Eigen::Index>(a)), value, 1e-13);
        EXPECT_NEAR(res.entry(i, w, a), value, 1e-13);
      }
    }
  }
}

TEST(PatientResiduals, HeterogeneousLengthsUseScaledConstantAndStayCentered) {
  const std::size_t d = 3, q = 2;
  const auto f = complete_patients(d, 3, {30, 50, 70}, q, 4);
  const PatientResiduals res(f.summary, f.patients);
  EXPECT_NEAR(res.constant(0), (30.0 - 2.0) / (50.0 - 2.0), 1e-15);
  EXPECT_NEAR(res.constant(2), (70.0 - 2.0) / (50.0 - 2.0), 1e-15);
  for (std::size_t w = 0; w < d; ++w) {
    Vector sum = Vector::Zero(d);
    for (std::size_t i = 0; i < 3; ++i) sum += res.row(i, w);
    EXPECT_LE(sum.cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(PatientResiduals, ZeroPooledCountIsRejected) {
  std::vector<PatientCooccurrence> patients{accumulate_patient(CodeSequence{{0, 0, 0, 0, 1}}, 3, 1),
                                            accumulate_patient(CodeSequence{{2, 2, 2, 2, 2}}, 3, 1)};
  const auto s = merge(std::span<const PatientCooccurrence>(patients));
  const PatientResiduals res(s, patients);
  EXPECT_THROW(res.row(0, 0), InputError);
  EXPECT_THROW(res.entry(0, 0, 2), InputError);
  EXPECT_FALSE(res.row_complete(0));
}

TEST(CovRowsPatient, ZeroResidualsGiveZeroMatrix) {
  const auto f = complete_patients(3, 1, {60}, 2, 5);
  const std::vector<PatientCooccurrence> twice{f.patients[0], f.patients[0]};
  const auto s = merge(std::span<const PatientCooccurrence>(twice));
  const PatientResiduals res(s, twice);
  EXPECT_EQ(cov_rows_patient(0, 1, res), Matrix::Zero(3, 3));
}

TEST(CovRowsPatient, RequiresTwoPatients) {
  const auto f = complete_patients(3, 1, {60}, 2, 6);
  const PatientResiduals res(f.summary, f.patients);
  EXPECT_THROW(cov_rows_patient(0, 0, res), InputError);
}

TEST(CovRowsPatient, OuterProductAverageAndGramProperty) {
  const std::size_t d = 3, n = 4;
  const auto f = complete_patients(d, n, {40, 40, 40, 40}, 2, 7);
  const PatientResiduals res(f.summary, f.patients);
  for (std::size_t w = 0; w < d; ++w) {
    const Matrix s = cov_rows_patient(w, w, res);
    EXPECT_LE((s - s.transpose()).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_TRUE((s.diagonal().array() >= 0.0).all());
    Eigen::SelfAdjointEigenSolver<Matrix> eig(s);
    EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-10);
  }
  // One-patient-term check: the sum of single-term contributions equals the block.
  Matrix manual = Matrix::Zero(d, d);
  for (std::size_t i = 0; i < n; ++i) manual += res.row(i, 0) * res.row(i, 2).transpose() / double(n * (n - 1));
  EXPECT_LE(rel_err(cov_rows_patient(0, 2, res), manual), 1e-14);
}

TEST(VarLowrankPatient, CollapsedFormMatchesBlockQuadraticForm) {
  const std::size_t d = 5, n = 6;
  const auto f = complete_patients(d, n, std::vector<std::size_t>(n, 50), 2, 8);
  const PatientResiduals res(f.summary, f.patients);
  const Projector proj = random_projector(d, 2, 9);
  for (std::size_t w = 0; w < d; ++w)
    for (std::size_t v = 0; v < d; ++v) {
      const double block = var_lowrank_entry(proj, [&](std::size_t a, std::size_t b) { return cov_rows_patient(a, b, res); }, w, v);
      EXPECT_NEAR(var_lowrank_entry_patient(proj, res, w, v), block, 1e-12 * std::max(1.0, block));
    }
}

TEST(VarEmpiricalPatient, AllPairsMatrixMatchesPerEntry) {
  const std::size_t d = 5, n = 7;
  const auto f = complete_patients(d, n, {40, 45, 50, 55, 60, 65, 70}, 2, 10);
  const PatientResiduals res(f.summary, f.patients);
  const Matrix all = empirical_variance_matrix_patient(f.summary, f.patients);
  for (std::size_t w = 0; w < d; ++w)
    for (std::size_t v = 0; v < d; ++v) {
      const double one = var_empirical_entry_patient(res, w, v);
      EXPECT_NEAR(all(w, v), one, 1e-12 * std::max(1.0, one));
    }
}

// ---------------------------------------------------------------------------
// Generic quadratic form
// ---------------------------------------------------------------------------

TEST(VarLowrankEntry, ZeroBlocksGiveZero) {
  const Projector proj = random_projector(4, 2, 1);
  EXPECT_EQ(var_lowrank_entry(proj, [](std::size_t, std::size_t) { return Matrix::Zero(4, 4).eval(); }, 0, 1), 0.0);
}

TEST(VarLowrankEntry, IdentityProjectorDiagonalEntry) {
  const Eigen::Index d = 4;
  const Matrix g = random_matrix(d * d, d * d, 2);
  const Matrix full = g * g.transpose();
  const auto block = [&](std::size_t a, std::size_t b) {
    return full.block(static_cast<Eigen::Index>(a) * d, static_cast<Eigen::Index>(b) * d, d, d).eval();
  };
  const Projector eye(Matrix::Identity(d, d));
  for (std::size_t w = 0; w < 4; ++w)
    EXPECT_NEAR(var_lowrank_entry(eye, block, w, w), 4.0 * block(w, w)(w, w), 1e-10);
}

TEST(VarLowrankEntry, MatchesDensePropagationOracle) {
  // Covariance of a random symmetric W: vec W = A z with rows (j, a) and
  // (a, j) sharing coefficients.
  const Eigen::Index d = 5, m = 40;
  Matrix a = random_matrix(d * d, m, 3);
  for (Eigen::Index j = 0; j < d; ++j)
    for (Eigen::Index k = j + 1; k < d; ++k) a.row(k * d + j) = a.row(j * d + k);
  const Matrix full = a * a.transpose();
  const oracle::BlockFn block = [&](std::size_t x, std::size_t y) {
    return Matrix(full.block(static_cast<Eigen::Index>(x) * d, static_cast<Eigen::Index>(y) * d, d, d));
  };
  const Projector proj = random_projector(d, 2, 4);
  for (std::size_t w = 0; w < 5; ++w)
    for (std::size_t v = 0; v < 5; ++v) {
      const double dense = oracle::dense_propagation_variance(proj.dense(), full, w, v);
      EXPECT_NEAR(var_lowrank_entry(proj, block, w, v), dense, 1e-10 * std::max(1.0, dense));
    }
}

TEST(VarLowrankEntry, NegativeBeyondToleranceIsAnError) {
  const Projector proj(Matrix::Identity(2, 2));
  const auto negative = [](std::size_t, std::size_t) { return (-Matrix::Identity(2, 2)).eval(); };
  EXPECT_THROW(var_lowrank_entry(proj, negative, 0, 0), NumericalError);
  const auto tiny = [](std::size_t, std::size_t) { return (-1e-12 * Matrix::Identity(2, 2)).eval(); };
  ClampStats stats;
  EXPECT_EQ(var_lowrank_entry(proj, tiny, 0, 0, &stats), 0.0);
  EXPECT_EQ(stats.clamped, 1u);
}

// ---------------------------------------------------------------------------
// Global-null covariance
// ---------------------------------------------------------------------------

TEST(NullCovBlock, TwoCodeHandValue) {
  const auto m = model_for((Vector(2) << 0.5, 0.5).finished(), 1, 2.0, 1);  // n T0 = 1
  EXPECT_EQ(m.n_T0(), 1.0);
  EXPECT_NEAR(null_cov_block(m, 0, 0).entry(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(var_empirical_entry_null(m, 1, 1), 1.0, 1e-15);
}

TEST(NullCovBlock, DoublingNHalvesEveryEntry) {
  const Vector p = random_probabilities(5, 1);
  const auto a = model_for(p, 100, 50.0, 2);
  const auto b = model_for(p, 200, 50.0, 2);
  for (std::size_t w : {0u, 3u})
    for (std::size_t v : {0u, 2u}) EXPECT_LE(rel_err(2.0 * null_cov_block(b, w, v).dense(), null_cov_block(a, w, v).dense()), 1e-15);
}

TEST(NullCovBlock, StructuredEqualsDenseTranscription) {
  const Vector p = random_probabilities(6, 2);
  const auto m = model_for(p, 30, 40.0, 3);
  for (std::size_t w = 0; w < 6; ++w)
    for (std::size_t v = 0; v < 6; ++v)
      EXPECT_LE(rel_err(null_cov_block(m, w, v).dense(), oracle::dense_null_block(p, m.n_T0(), w, v)), 1e-14);
}

TEST(NullCovBlock, BilinearMatchesDense) {
  const Vector p = random_probabilities(7, 3);
  const auto m = model_for(p, 30, 40.0, 3);
  const Vector x = random_matrix(7, 1, 4), y = random_matrix(7, 1, 5);
  for (std::size_t w = 0; w < 7; ++w)
    for (std::size_t v = 0; v < 7; ++v) {
      const auto b = null_cov_block(m, w, v);
      EXPECT_NEAR(b.bilinear(x, y), x.dot(b.dense() * y), 1e-12);
    }
}

TEST(NullCovBlock, ZeroProbabilityIsRejected) {
  const auto m = model_for((Vector(3) << 0.5, 0.5, 0.0).finished(), 10, 10.0, 1);
  EXPECT_THROW(null_cov_block(m, 2, 0), InputError);
}

TEST(VarLowrankNull, MatchesDensifiedBlocksAndEngine) {
  const Vector p = random_probabilities(6, 6);
  const auto m = model_for(p, 50, 100.0, 2);
  const Projector proj = random_projector(6, 2, 7);
  const NullVarianceEngine engine(proj, m);
  const auto dense_block = [&](std::size_t a, std::size_t b) { return null_cov_block(m, a, b).dense(); };
  for (std::size_t w = 0; w < 6; ++w)
    for (std::size_t v = 0; v < 6; ++v) {
      const double ref = var_lowrank_entry(proj, dense_block, w, v);
      EXPECT_NEAR(var_lowrank_entry_null(proj, m, w, v), ref, 1e-12 * ref);
      EXPECT_NEAR(engine.variance(w, v), ref, 1e-12 * ref);
    }
}

TEST(VarLowrankNull, ClosedFormReductionAtFourCodes) {
  // Uniform p with P block diagonal: the entry reduces to
  // W_02 - W_12 / 2 - W_03 / 2, whose variances are 5 / (n T0) and whose
  // covariances are -1, -1, +1 in the same units. Var = 10 / (n T0).
  Matrix u = Matrix::Zero(4, 2);
  u(0, 0) = u(2, 1) = 1.0 / std::sqrt(2.0);
  u(1, 0) = u(3, 1) = -1.0 / std::sqrt(2.0);
  const Projector proj(u);
  const auto m = model_for(Vector::Constant(4, 0.25), 10, 12.0, 2);
  EXPECT_NEAR(var_lowrank_entry_null(proj, m, 0, 2), 10.0 / m.n_T0(), 1e-15);
  EXPECT_NEAR(NullVarianceEngine(proj, m).variance(0, 2), 10.0 / m.n_T0(), 1e-15);
}

TEST(VarLowrankNull, VanishesAsNGrows) {
  const Vector p = random_probabilities(5, 8);
  const Projector proj = random_projector(5, 2, 9);
  const double small = var_lowrank_entry_null(proj, model_for(p, 100, 50.0, 2), 0, 1);
  const double big = var_lowrank_entry_null(proj, model_for(p, 100'000'000, 50.0, 2), 0, 1);
  EXPECT_NEAR(big / small, 1e-6, 1e-12);
  EXPECT_LT(big, 1e-8);
}

TEST(VarLowrankNull, MatchesFullCovarianceOracle) {
  const Vector p = random_probabilities(5, 10);
  const auto m = model_for(p, 20, 30.0, 2);
  const Projector proj = random_projector(5, 3, 11);
  const oracle::BlockFn block = [&](std::size_t a, std::size_t b) { return oracle::dense_null_block(p, m.n_T0(), a, b); };
  const Matrix full = oracle::full_covariance(5, block);
  for (std::size_t w = 0; w < 5; ++w)
    for (std::size_t v = 0; v < 5; ++v) {
      const double ref = oracle::dense_propagation_variance(proj.dense(), full, w, v);
      EXPECT_NEAR(var_lowrank_entry_null(proj, m, w, v), ref, 1e-10 * std::abs(ref));
    }
}

TEST(RowCovNullFast, MatchesNaiveFourSumForEveryD) {
  std::uint64_t seed = 100;
  for (Eigen::Index d = 2; d <= 8; ++d)
    for (Eigen::Index p = 1; p <= std::min<Eigen::Index>(d, 3); ++p)
      for (int rep = 0; rep < 3; ++rep) {
        const Vector prob = random_probabilities(d, ++seed);
        const auto m = model_for(prob, 25, 40.0, 3);
        const Projector proj = random_projector(d, p, ++seed);
        const oracle::BlockFn block = [&](std::size_t a, std::size_t b) { return oracle::dense_null_block(prob, m.n_T0(), a, b); };
        for (std::size_t i = 0; i < static_cast<std::size_t>(d); ++i) {
          const Matrix naive = oracle::naive_row_cov(proj.dense(), block, i);
          ASSERT_LE(rel_err(row_cov_null_fast(proj, m, i), naive), 1e-10) << "d=" << d << " p=" << p << " i=" << i;
          ASSERT_LE(rel_err(row_cov_null_dense(proj.dense(), m, i), naive), 1e-10);
        }
      }
}

TEST(RowCovNullFast, ZeroProjectorGivesZero) {
  const auto m = model_for(random_probabilities(5, 1), 10, 20.0, 2);
  const Projector zero(Matrix::Zero(5, 2));
  EXPECT_LE(row_cov_null_fast(zero, m, 3).cwiseAbs().maxCoeff(), 1e-300);
}

TEST(RowCovNullFast, SymmetricAndConsistentWithEntryVariance) {
  const Vector prob = random_probabilities(12, 3);
  const auto m = model_for(prob, 40, 60.0, 2);
  const Projector proj = random_projector(12, 3, 4);
  const NullVarianceEngine engine(proj, m);
  for (std::size_t i : {0u, 5u, 11u}) {
    const Matrix c = row_cov_null_fast(proj, m, i);
    EXPECT_LE((c - c.transpose()).cwiseAbs().maxCoeff(), 1e-10 * c.cwiseAbs().maxCoeff());
    for (std::size_t v = 0; v < 12; ++v) EXPECT_NEAR(c(v, v), engine.variance(i, v), 1e-10 * c(v, v));
  }
}

// ---------------------------------------------------------------------------
// Calibration under the global null (d = 50, n = 400, T = 200, q = 2)
// ---------------------------------------------------------------------------

TEST(NullCalibration, LowrankVarianceMatchesMonteCarloAndPatientPath) {
  const std::size_t d = 50, n = 400, T = 200, q = 2, p = 10, reps = 200, agree_reps = 3;
  const std::vector<double> probs(d, 1.0 / d);
  Rng rng(5);
  std::uniform_int_distribution<std::size_t> code(0, d - 1);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  while (pairs.size() < 50) {
    const std::size_t a = code(rng), b = code(rng);
    if (a != b) pairs.emplace_back(std::min(a, b), std::max(a, b));
  }
  std::vector<std::vector<double>> values(pairs.size(), std::vector<double>(reps));
  std::vector<std::vector<double>> var_null(pairs.size(), std::vector<double>(reps));
  std::vector<double> agreement(pairs.size() * agree_reps);
  parallel_for(reps, resolve_threads(4), [&](std::size_t r) {
    const auto cohort = sample_null_cohort(probs, n, T, derive_seed(77, 1, r));
    const auto patients = accumulate_cohort(cohort, q);
    const auto s = merge(std::span<const PatientCooccurrence>(patients));
    const auto tilde = lowrank_pmi(empirical_pmi(s), p);
    const Projector proj = Projector::from_estimate(tilde);
    const auto model = NullCovarianceModel::from_summary(s);
    const NullVarianceEngine engine(proj, model);
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      auto [w, v] = pairs[k];
      values[k][r] = tilde.matrix(static_cast<Eigen::Index>(w), static_cast<Eigen::Index>(v));
      var_null[k][r] = engine.variance(w, v);
    }
    if (r < agree_reps) {
      const PatientResiduals res(s, patients);
      for (std::size_t k = 0; k < pairs.size(); ++k) {
        auto [w, v] = pairs[k];
        const double a = var_null[k][r], b = var_lowrank_entry_patient(proj, res, w, v);
        agreement[r * pairs.size() + k] = std::max(a / b, b / a);
      }
    }
  });
  std::size_t calibrated = 0;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const double ratio = stats::mean(var_null[k]) / stats::variance(values[k]);
    calibrated += ratio >= 0.6 && ratio <= 1.6;
  }
  const auto agreeing = std::count_if(agreement.begin(), agreement.end(), [](double x) { return x <= 1.5; });
  EXPECT_GE(calibrated, 45u) << calibrated << "/50 pairs within [0.6, 1.6]";
  EXPECT_GE(static_cast<double>(agreeing), 0.9 * static_cast<double>(agreement.size()));
}
