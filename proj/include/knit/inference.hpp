#pragma once

// Edge testing on the low-rank PMI estimate: z-scores, p-values and the
// step-up selection under dependence (KNIT).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "knit/cooccur.hpp"
#include "knit/error.hpp"
#include "knit/parallel.hpp"
#include "knit/spectra.hpp"
#include "knit/stats.hpp"
#include "knit/variance.hpp"

namespace knit {

using Json = nlohmann::json;

enum class Sidedness { TwoSided, PaperLiteral };

struct ZP {
  double z = 0.0;
  double p = 1.0;
};

inline ZP z_and_p(double statistic, double variance, Sidedness sidedness = Sidedness::TwoSided) {
  if (!(variance > 0.0)) throw InputError("variance must be positive to form a z-score");
  const double z = statistic / std::sqrt(variance);
  const double p = sidedness == Sidedness::TwoSided ? stats::normal_two_sided(z) : stats::normal_cdf(z);
  return {z, std::clamp(p, 0.0, 1.0)};
}

struct StepUpResult {
  std::size_t j_max = 0;
  double threshold = 0.0;  // p-value of the last rejected test, 0 when none
  std::vector<bool> selected;
};

namespace detail {

/// Step-up scan against the line slope * j; ties broken by input position.
inline StepUpResult step_up(std::span<const double> p_values, double slope) {
  require(!p_values.empty(), "no p-values to test");
  std::vector<std::size_t> order(p_values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });
  StepUpResult out;
  for (std::size_t j = order.size(); j >= 1; --j)
    if (p_values[order[j - 1]] <= slope * static_cast<double>(j)) {
      out.j_max = j;
      out.threshold = p_values[order[j - 1]];
      break;
    }
  out.selected.assign(p_values.size(), false);
  for (std::size_t j = 0; j < out.j_max; ++j) out.selected[order[j]] = true;
  return out;
}

inline void require_level(double alpha) { require(alpha > 0.0 && alpha < 1.0, "nominal level must lie in (0, 1)"); }

}  // namespace detail

/// Benjamini-Yekutieli: j_max = max{j : p_(j) <= alpha j / J / (ln J + 1)}.
inline StepUpResult bh_dependent(std::span<const double> p_values, double alpha) {
  detail::require_level(alpha);
  const double J = static_cast<double>(p_values.size());
  return detail::step_up(p_values, alpha / J / (std::log(std::max(J, 1.0)) + 1.0));
}

/// Plain Benjamini-Hochberg (independent tests).
inline StepUpResult bh_independent(std::span<const double> p_values, double alpha) {
  detail::require_level(alpha);
  return detail::step_up(p_values, alpha / static_cast<double>(p_values.size()));
}

inline double bonferroni_cutoff(std::size_t tests, double alpha) {
  detail::require(tests >= 1, "Bonferroni needs at least one test");
  return alpha / static_cast<double>(tests);
}

inline std::vector<bool> bonferroni(std::span<const double> p_values, double alpha) {
  detail::require_level(alpha);
  const double cutoff = bonferroni_cutoff(std::max<std::size_t>(p_values.size(), 1), alpha);
  std::vector<bool> out(p_values.size());
  for (std::size_t k = 0; k < p_values.size(); ++k) out[k] = p_values[k] <= cutoff;
  return out;
}

enum class Correction { ByFdr, Bonferroni };

struct PairTest {
  std::size_t w = 0;
  std::size_t w_prime = 0;
  double statistic = 0.0;
  double variance = 0.0;
  double z = 0.0;
  double p_value = 1.0;
  bool selected = false;
};

struct Exclusion {
  std::size_t w = 0;
  std::size_t w_prime = 0;
  std::string reason;
};

struct EdgeTestResult {
  std::vector<PairTest> pairs;  // w < w', tested pairs only
  std::vector<Exclusion> excluded;
  double alpha = 0.05;
  Correction correction = Correction::ByFdr;
  Sidedness sidedness = Sidedness::TwoSided;
  std::size_t J = 0;
  std::size_t j_max = 0;
  double threshold = 0.0;
  std::size_t clamped = 0;

  std::size_t selected_count() const {
    return static_cast<std::size_t>(std::count_if(pairs.begin(), pairs.end(), [](const PairTest& t) { return t.selected; }));
  }
};

struct KnitOptions {
  std::optional<std::size_t> rank;  // unset: fixed-point rank estimation
  std::optional<double> eta0;       // fixed threshold for rank estimation
  double alpha = 0.05;
  Correction correction = Correction::ByFdr;
  Sidedness sidedness = Sidedness::TwoSided;
  SpectraOptions spectra;
  std::size_t threads = 1;
};

struct KnitOutput {
  PmiEstimate pmi;
  EdgeTestResult edges;
  Json meta;  // estimation metadata: d, q, n, T, eta and how the rank was chosen
};

/// Applies a multiplicity correction to already-computed pair tests.
inline void select_edges(EdgeTestResult& result) {
  result.J = result.pairs.size();
  result.j_max = 0;
  result.threshold = 0.0;
  if (result.pairs.empty()) return;
  std::vector<double> p(result.pairs.size());
  for (std::size_t k = 0; k < p.size(); ++k) p[k] = result.pairs[k].p_value;
  if (result.correction == Correction::ByFdr) {
    const auto s = bh_dependent(p, result.alpha);
    result.j_max = s.j_max;
    result.threshold = s.threshold;
    for (std::size_t k = 0; k < p.size(); ++k) result.pairs[k].selected = s.selected[k];
  } else {
    const auto s = bonferroni(p, result.alpha);
    result.threshold = bonferroni_cutoff(p.size(), result.alpha);
    for (std::size_t k = 0; k < p.size(); ++k) result.pairs[k].selected = s[k];
    result.j_max = result.selected_count();
  }
}

/// Tests every off-diagonal pair of a low-rank estimate with null variances.
/// Pairs with C_{w,w'} = 0 are excluded and do not enter J.
inline EdgeTestResult test_edges(const PmiEstimate& lowrank, const CooccurrenceSummary& summary, const KnitOptions& opts) {
  const std::size_t d = lowrank.d();
  detail::require(d == summary.d(), "estimate and summary disagree on d");
  const Projector proj = Projector::from_estimate(lowrank);
  const NullCovarianceModel model = NullCovarianceModel::from_summary(summary);
  const NullVarianceEngine engine(proj, model);

  EdgeTestResult out;
  out.alpha = opts.alpha;
  out.correction = opts.correction;
  out.sidedness = opts.sidedness;
  std::vector<std::pair<std::size_t, std::size_t>> todo;
  for (std::size_t w = 0; w < d; ++w)
    for (std::size_t v = w + 1; v < d; ++v) {
      if (summary.counts.at(w, v) == 0)
        out.excluded.push_back({w, v, "zero co-occurrence"});
      else
        todo.emplace_back(w, v);
    }
  out.pairs.resize(todo.size());
  std::vector<ClampStats> clamps(todo.size());
  std::vector<std::string> failures(todo.size());
  parallel_for(todo.size(), opts.threads, [&](std::size_t k) {
    auto [w, v] = todo[k];
    PairTest t;
    t.w = w;
    t.w_prime = v;
    t.statistic = lowrank.matrix(static_cast<Eigen::Index>(w), static_cast<Eigen::Index>(v));
    t.variance = engine.variance(w, v, &clamps[k]);
    if (t.variance > 0.0) {
      const auto zp = z_and_p(t.statistic, t.variance, opts.sidedness);
      t.z = zp.z;
      t.p_value = zp.p;
    } else {
      failures[k] = "zero variance";
    }
    out.pairs[k] = t;
  });
  std::vector<PairTest> kept;
  kept.reserve(out.pairs.size());
  for (std::size_t k = 0; k < out.pairs.size(); ++k) {
    out.clamped += clamps[k].clamped;
    if (failures[k].empty())
      kept.push_back(out.pairs[k]);
    else
      out.excluded.push_back({out.pairs[k].w, out.pairs[k].w_prime, failures[k]});
  }
  out.pairs = std::move(kept);
  std::sort(out.excluded.begin(), out.excluded.end(), [](const Exclusion& a, const Exclusion& b) {
    return a.w != b.w ? a.w < b.w : a.w_prime < b.w_prime;
  });
  select_edges(out);
  return out;
}

struct RankChoice {
  std::optional<std::size_t> rank;
  std::optional<double> eta0;  // used only when rank is unset
};

struct EstimateOutput {
  PmiEstimate pmi;
  Json meta;
};

/// empirical PMI followed by a rank-p truncation, p given or estimated.
inline EstimateOutput estimate(const CooccurrenceSummary& s, const RankChoice& choice, const SpectraOptions& opts) {
  const PmiEstimate hat = empirical_pmi(s, opts);
  Json meta{{"d", s.d()}, {"q", s.q}, {"n", s.n}, {"T", s.mean_length()}, {"eta", opts.pmi_floor}};
  std::size_t rank = 0;
  if (choice.rank) {
    rank = *choice.rank;
    meta["rank_source"] = "user";
  } else {
    const EigenPairs all = eig_sym(hat.matrix);
    if (choice.eta0) {
      rank = estimate_rank(all.values, *choice.eta0);
      meta["rank_source"] = "threshold";
      meta["eta0"] = *choice.eta0;
    } else {
      const RankFixedPoint fp = estimate_rank_fixed_point(all.values, s.n, s.mean_length());
      rank = fp.rank;
      meta["rank_source"] = "fixed-point";
      meta["eta0"] = fp.eta0;
      meta["fixed_point_iterations"] = fp.iterations;
      meta["fixed_point_converged"] = fp.converged;
    }
    if (rank == 0)
      throw NumericalError("rank estimation found no eigenvalue above eta0 = " +
                           meta["eta0"].dump() + "; pass --rank or a smaller --eta0");
  }
  return {lowrank_pmi(hat, rank, opts), std::move(meta)};
}

/// empirical PMI -> rank-p truncation -> null variances -> z, p -> selection.
inline KnitOutput knit(const CooccurrenceSummary& summary, const KnitOptions& opts = {}) {
  EstimateOutput est = estimate(summary, {opts.rank, opts.eta0}, opts.spectra);
  KnitOutput out;
  out.pmi = std::move(est.pmi);
  out.meta = std::move(est.meta);
  out.edges = test_edges(out.pmi, summary, opts);
  return out;
}

}  // namespace knit
