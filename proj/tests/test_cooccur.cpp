#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "knit/cooccur.hpp"
#include "oracles.hpp"

using namespace knit;

namespace {

CodeSequence random_sequence(std::size_t d, std::size_t T, Rng& rng) {
  std::uniform_int_distribution<Code> code(0, static_cast<Code>(d - 1));
  CodeSequence s;
  for (std::size_t t = 0; t < T; ++t) s.codes.push_back(code(rng));
  return s;
}

Count expected_mass(std::size_t T, std::size_t q) { return static_cast<Count>(2 * q * (T - q)); }

}  // namespace

TEST(AccumulatePatient, HandEnumeratedThreeTokenSequence) {
  const CodeSequence seq{{0, 1, 0}};
  const auto pc = accumulate_patient(seq, 2, 1);
  EXPECT_EQ(pc.counts.at(0, 1), 2);
  EXPECT_EQ(pc.counts.at(1, 0), 2);
  EXPECT_EQ(pc.counts.at(0, 0), 0);
  EXPECT_EQ(pc.counts.at(1, 1), 0);
  EXPECT_EQ(pc.total(), 4);
  EXPECT_EQ(pc, oracle::naive_count(seq, 2, 1));
}

TEST(AccumulatePatient, ConstantSequenceFillsDiagonal) {
  for (std::size_t q : {1u, 2u, 5u}) {
    const CodeSequence seq{std::vector<Code>(23, 3)};
    const auto pc = accumulate_patient(seq, 4, q);
    EXPECT_EQ(pc.counts.nnz(), 1u);
    EXPECT_EQ(pc.counts.at(3, 3), expected_mass(23, q));
    EXPECT_EQ(pc, oracle::naive_count(seq, 4, q));
  }
}

TEST(AccumulatePatient, MatchesOracleOnRandomSequence) {
  Rng rng(6);
  const auto seq = random_sequence(6, 50, rng);
  EXPECT_EQ(accumulate_patient(seq, 6, 3), oracle::naive_count(seq, 6, 3));
}

TEST(AccumulatePatient, ThousandRandomInstancesMatchOracle) {
  Rng rng(2024);
  std::uniform_int_distribution<std::size_t> dd(1, 8), qq(1, 5);
  for (int k = 0; k < 1000; ++k) {
    const std::size_t d = dd(rng), q = qq(rng);
    std::uniform_int_distribution<std::size_t> tt(2 * q + 1, 60);
    const std::size_t T = tt(rng);
    const auto seq = random_sequence(d, T, rng);
    const auto fast = accumulate_patient(seq, d, q);
    ASSERT_EQ(fast, oracle::naive_count(seq, d, q)) << "d=" << d << " T=" << T << " q=" << q;
    ASSERT_EQ(fast.total(), expected_mass(T, q));
    ASSERT_TRUE(fast.counts.is_symmetric());
  }
}

TEST(AccumulatePatient, ShortestLegalSequence) {
  Rng rng(1);
  for (std::size_t q = 1; q <= 4; ++q) {
    const auto seq = random_sequence(3, 2 * q + 1, rng);
    const auto pc = accumulate_patient(seq, 3, q);
    EXPECT_EQ(pc, oracle::naive_count(seq, 3, q));
    EXPECT_EQ(pc.total(), expected_mass(2 * q + 1, q));
  }
}

TEST(AccumulatePatient, RejectsShortSequencesAndEmptyWindow) {
  const CodeSequence seq{{0, 1, 0, 1}};
  EXPECT_THROW(accumulate_patient(seq, 2, 2), InputError);
  EXPECT_THROW(accumulate_patient(seq, 2, 0), InputError);
  EXPECT_THROW(oracle::naive_count(seq, 2, 0), InputError);
  EXPECT_THROW(accumulate_patient(CodeSequence{{0, 5, 0}}, 2, 1), InputError);
}

TEST(Merge, SinglePatientIsIdentity) {
  Rng rng(3);
  const auto pc = accumulate_patient(random_sequence(5, 30, rng), 5, 2);
  const auto s = merge(std::span<const PatientCooccurrence>(&pc, 1));
  EXPECT_EQ(s.counts, pc.counts);
  EXPECT_EQ(s.n, 1u);
  EXPECT_EQ(s.lengths, std::vector<std::size_t>{30});
  EXPECT_EQ(s.total, pc.total());
  EXPECT_EQ(s, to_summary(pc));
}

TEST(Merge, CommutativeAndAssociative) {
  Rng rng(4);
  std::vector<CooccurrenceSummary> parts;
  for (std::size_t T : {20u, 33u, 41u}) parts.push_back(to_summary(accumulate_patient(random_sequence(6, T, rng), 6, 3)));
  const std::vector<CooccurrenceSummary> ab{parts[0], parts[1]}, ba{parts[1], parts[0]};
  EXPECT_EQ(merge(std::span<const CooccurrenceSummary>(ab)).counts, merge(std::span<const CooccurrenceSummary>(ba)).counts);
  const std::vector<CooccurrenceSummary> left{merge(std::span<const CooccurrenceSummary>(ab)), parts[2]};
  const std::vector<CooccurrenceSummary> bc{parts[1], parts[2]};
  const std::vector<CooccurrenceSummary> right{parts[0], merge(std::span<const CooccurrenceSummary>(bc))};
  EXPECT_EQ(merge(std::span<const CooccurrenceSummary>(left)), merge(std::span<const CooccurrenceSummary>(right)));
}

TEST(Merge, MassIdentityAndSymmetry) {
  Rng rng(5);
  std::uniform_int_distribution<std::size_t> tt(7, 90);
  std::vector<PatientCooccurrence> patients;
  Count expected = 0;
  for (int i = 0; i < 10; ++i) {
    const std::size_t T = tt(rng);
    patients.push_back(accumulate_patient(random_sequence(7, T, rng), 7, 3));
    expected += expected_mass(T, 3);
  }
  const auto s = merge(std::span<const PatientCooccurrence>(patients));
  EXPECT_EQ(s.total, expected);
  EXPECT_TRUE(s.counts.is_symmetric());
  Count marg = 0;
  for (Count c : s.marginals) marg += c;
  EXPECT_EQ(marg, s.total);
  EXPECT_FALSE(s.uniform_lengths());
}

TEST(Merge, RejectsMismatchedShapes) {
  Rng rng(6);
  const auto a = accumulate_patient(random_sequence(4, 20, rng), 4, 2);
  const auto b = accumulate_patient(random_sequence(4, 20, rng), 5, 2);
  const auto c = accumulate_patient(random_sequence(4, 20, rng), 4, 3);
  EXPECT_THROW(merge(std::vector<PatientCooccurrence>{a, b}), InputError);
  EXPECT_THROW(merge(std::vector<PatientCooccurrence>{a, c}), InputError);
  EXPECT_THROW(merge(std::span<const PatientCooccurrence>()), InputError);
}

TEST(Merge, OverflowIsDetected) {
  EXPECT_THROW(detail::checked_add(std::numeric_limits<Count>::max(), 1), NumericalError);
}

TEST(Summary, FinalizeChecksMassIdentity) {
  Rng rng(7);
  auto s = to_summary(accumulate_patient(random_sequence(4, 20, rng), 4, 2));
  s.lengths = {21};
  EXPECT_THROW(s.finalize(), FormatError);
}

TEST(Summary, CohortCountingIndependentOfThreads) {
  Rng rng(8);
  Cohort cohort{9, 2, {}};
  for (int i = 0; i < 25; ++i) cohort.sequences.push_back(random_sequence(9, 40 + i, rng));
  EXPECT_EQ(summarize_cohort(cohort, 2, 1), summarize_cohort(cohort, 2, 5));
}
