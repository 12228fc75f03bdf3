#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "knit/knit.hpp"

using namespace knit;
using namespace knit::bench;
namespace fs = std::filesystem;

namespace {

BenchSpec tiny(Study study) {
  BenchSpec s = BenchSpec::defaults(study);
  s.d_grid = {study == Study::Power ? std::size_t{4} : std::size_t{10}};
  s.p = 2;
  s.n_grid = study == Study::DecayRate || study == Study::Robustness ? std::vector<std::size_t>{40, 80}
                                                                     : std::vector<std::size_t>{60};
  s.T_grid = {30};
  s.mc_samples = 10'000;
  s.replicates = 3;
  s.entries = 4;
  s.seed = 17;
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::path(::testing::TempDir()) / ("knit_bench_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST(DefaultRank, LogSquaredRule) {
  EXPECT_EQ(default_rank(100), 22u);
  EXPECT_EQ(default_rank(50), 16u);
  EXPECT_EQ(default_rank(2), 1u);
}

TEST(BenchSpec, ValidationRejectsBadGrids) {
  auto s = tiny(Study::TypeI);
  s.replicates = 0;
  EXPECT_THROW(s.validate(), InputError);
  s = tiny(Study::TypeI);
  s.T_grid = {4};
  EXPECT_THROW(s.validate(), InputError);
  s = tiny(Study::TypeI);
  s.p = 11;
  EXPECT_THROW(s.validate(), InputError);
  s = tiny(Study::Power);
  s.kappa_grid.clear();
  EXPECT_THROW(s.validate(), InputError);
  s = tiny(Study::TypeI);
  s.n_grid.clear();
  EXPECT_THROW(s.validate(), InputError);
  EXPECT_THROW(parse_study("nonsense"), InputError);
}

TEST(BenchSpec, StudyNamesRoundTrip) {
  for (Study s : {Study::TypeI, Study::DecayRate, Study::QQ, Study::CIWidth, Study::Power, Study::Robustness})
    EXPECT_EQ(parse_study(to_string(s)), s);
}

class EveryStudy : public ::testing::TestWithParam<Study> {};

TEST_P(EveryStudy, RunsAtTinyScaleAndIsReproducible) {
  const BenchSpec spec = tiny(GetParam());
  const std::string name = to_string(spec.study);
  const auto a = run_bench(spec, scratch(name + "_a"));
  BenchSpec threaded = spec;
  threaded.threads = 3;
  const auto b = run_bench(threaded, scratch(name + "_b"));
  ASSERT_EQ(a.size(), b.size());
  ASSERT_GE(a.size(), 2u);
  EXPECT_EQ(a.back().filename(), name + "_manifest.json");
  for (std::size_t k = 0; k + 1 < a.size(); ++k) {
    const std::string text = slurp(a[k]);
    EXPECT_GT(std::count(text.begin(), text.end(), '\n'), 1) << a[k];
    EXPECT_EQ(text, slurp(b[k])) << a[k].filename();
  }
  const auto manifest = io::detail::parse_json(a.back());
  EXPECT_EQ(manifest["seed"], 17);
  EXPECT_EQ(manifest["files"].size(), a.size() - 1);
}

INSTANTIATE_TEST_SUITE_P(Bench, EveryStudy,
                         ::testing::Values(Study::TypeI, Study::DecayRate, Study::QQ, Study::CIWidth, Study::Power,
                                           Study::Robustness),
                         [](const auto& info) { return to_string(info.param); });

TEST(Bench, DifferentSeedsGiveDifferentTables) {
  auto s = tiny(Study::DecayRate);
  const auto a = run_bench(s, scratch("seed_a"));
  s.seed = 18;
  const auto b = run_bench(s, scratch("seed_b"));
  EXPECT_NE(slurp(a.front()), slurp(b.front()));
}

TEST(Bench, PlantedEdgesAreOffDiagonalUpperPairs) {
  ModelDesign design;
  design.d = 6;
  design.p = 2;
  design.kappa = 1.0;
  design.mc_samples = 10'000;
  const auto model = make_model(design, 3);
  for (auto [w, v] : planted_edges(model.centered)) {
    EXPECT_LT(w, v);
    EXPECT_LT(v, 6u);
  }
}

TEST(Bench, NullReplicateCountsTests) {
  const auto r = null_replicate(8, 60, 30, 2, 0.05, 5);
  EXPECT_EQ(r.tests, 28u);
  EXPECT_LE(r.rejections_null, r.tests);
  EXPECT_LE(r.rejections_patient, r.tests);
}
