#pragma once

// Simulation studies: estimation error and its decay, type-I error under the
// global null, normality of standardized entries, confidence-interval
// widths, power against signal strength, and robustness to the discourse
// process. Each study returns plain tables; run_bench writes them as CSV
// together with a manifest.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "knit/cooccur.hpp"
#include "knit/error.hpp"
#include "knit/inference.hpp"
#include "knit/io.hpp"
#include "knit/parallel.hpp"
#include "knit/rng.hpp"
#include "knit/simgen.hpp"
#include "knit/spectra.hpp"
#include "knit/stats.hpp"
#include "knit/variance.hpp"

namespace knit::bench {

using Json = nlohmann::json;

enum class Study { TypeI, DecayRate, QQ, CIWidth, Power, Robustness };

inline std::string to_string(Study s) {
  switch (s) {
    case Study::TypeI: return "typei";
    case Study::DecayRate: return "decay";
    case Study::QQ: return "qq";
    case Study::CIWidth: return "ciwidth";
    case Study::Power: return "power";
    case Study::Robustness: return "robustness";
  }
  return "unknown";
}

inline Study parse_study(const std::string& name) {
  for (Study s : {Study::TypeI, Study::DecayRate, Study::QQ, Study::CIWidth, Study::Power, Study::Robustness})
    if (to_string(s) == name) return s;
  throw InputError("unknown study '" + name + "' (expected typei, decay, qq, ciwidth, power or robustness)");
}

/// Which covariance feeds a variance estimate.
enum class VariancePath { Patient, Null };

inline std::string to_string(VariancePath v) { return v == VariancePath::Patient ? "patient" : "null"; }

/// p = floor(log^2 d) + 1.
inline std::size_t default_rank(std::size_t d) {
  const double l = std::log(static_cast<double>(d));
  return static_cast<std::size_t>(std::floor(l * l)) + 1;
}

struct BenchSpec {
  Study study = Study::DecayRate;
  std::vector<std::size_t> n_grid;
  std::vector<std::size_t> T_grid;
  std::vector<std::size_t> d_grid;
  std::vector<double> kappa_grid;
  std::vector<ProcessKind> processes;
  std::size_t replicates = 1;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  std::size_t p = 0;  // 0: default_rank(d)
  std::size_t q = 2;
  std::size_t mc_samples = 200'000;
  std::optional<double> ar_alpha;  // overrides 1 - log d / p^2
  double level = 0.05;
  std::size_t entries = 10;  // CIWidth: entries (0, 0..entries-1)
  VariancePath variance_path = VariancePath::Null;

  std::size_t rank_for(std::size_t d) const { return p > 0 ? p : default_rank(d); }

  /// Desk-scale grid, or the full-scale grid when `paper_scale` is set.
  static BenchSpec defaults(Study study, bool paper_scale = false) {
    BenchSpec s;
    s.study = study;
    switch (study) {
      case Study::TypeI:
        s.d_grid = {paper_scale ? std::size_t{100} : std::size_t{50}};
        s.n_grid = {400, 800, 1600};
        s.T_grid = {paper_scale ? std::size_t{1000} : std::size_t{200}};
        s.replicates = 100;
        break;
      case Study::DecayRate:
      case Study::Robustness:
        s.d_grid = {100};
        s.n_grid = paper_scale ? std::vector<std::size_t>{200, 400, 600, 800, 1000, 2000}
                               : std::vector<std::size_t>{200, 400, 800, 1600};
        s.T_grid = {1000};
        s.replicates = paper_scale ? 100 : 20;
        s.processes = study == Study::Robustness
                          ? std::vector<ProcessKind>{ProcessKind::AR1, ProcessKind::SphereWalk, ProcessKind::ARMA13}
                          : std::vector<ProcessKind>{ProcessKind::AR1};
        if (paper_scale) s.mc_samples = 10'000'000;
        break;
      case Study::QQ:
        s.d_grid = {100};
        s.n_grid = {1000};
        s.T_grid = {800, 1200};
        s.kappa_grid = {1.0};
        s.replicates = 100;
        s.variance_path = VariancePath::Patient;
        break;
      case Study::CIWidth:
        s.d_grid = {100};
        s.n_grid = {1000};
        s.T_grid = {1000};
        s.kappa_grid = {1.0, 2.0};
        s.replicates = paper_scale ? 100 : 5;
        s.variance_path = VariancePath::Patient;
        break;
      case Study::Power:
        // A small vocabulary keeps adjacent kappa values a factor d apart in
        // signal, so the whole grid spans the power curve at desk cost.
        s.d_grid = {paper_scale ? std::size_t{100} : std::size_t{4}};
        s.p = 2;
        s.n_grid = {paper_scale ? std::size_t{1000} : std::size_t{2000}};
        s.T_grid = {paper_scale ? std::size_t{1000} : std::size_t{2000}};
        s.kappa_grid = {2.0, 1.5, 1.0, 0.5};
        s.replicates = 20;
        break;
    }
    if (s.processes.empty()) s.processes = {ProcessKind::AR1};
    return s;
  }

  void validate() const {
    detail::require(replicates >= 1, "replicates must be at least 1");
    detail::require(q >= 1, "window size q must be at least 1");
    detail::require(!n_grid.empty() && !T_grid.empty() && !d_grid.empty(), "grid lists must be non-empty");
    for (auto n : n_grid) detail::require(n >= 2, "grid values of n must be at least 2");
    for (auto T : T_grid) detail::require(T > 2 * q, "infeasible grid: T must exceed 2q");
    for (auto d : d_grid) {
      detail::require(d >= 2, "grid values of d must be at least 2");
      detail::require(rank_for(d) <= d, "rank exceeds vocabulary size");
    }
    for (double k : kappa_grid) detail::require(std::isfinite(k) && k >= 0.0, "kappa values must be non-negative");
    detail::require(level > 0.0 && level < 1.0, "level must lie in (0, 1)");
    if (study == Study::QQ || study == Study::CIWidth || study == Study::Power)
      detail::require(!kappa_grid.empty(), "this study needs a kappa grid");
  }

  Json to_json() const {
    Json procs = Json::array();
    for (auto k : processes) procs.push_back(knit::to_string(k));
    Json j{{"study", to_string(study)}, {"n", n_grid},       {"T", T_grid},         {"d", d_grid},
           {"kappa", kappa_grid},       {"processes", procs}, {"replicates", replicates}, {"seed", seed},
           {"p", p},                    {"q", q},             {"mc_samples", mc_samples}, {"level", level},
           {"entries", entries},        {"variance_path", to_string(variance_path)}};
    if (ar_alpha) j["alpha"] = *ar_alpha;
    return j;
  }
};

struct Table {
  std::string name;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string csv() const {
    std::ostringstream out;
    for (std::size_t k = 0; k < header.size(); ++k) out << (k ? "," : "") << header[k];
    out << '\n';
    for (const auto& r : rows) {
      for (std::size_t k = 0; k < r.size(); ++k) out << (k ? "," : "") << r[k];
      out << '\n';
    }
    return out.str();
  }
};

inline std::string num(double v) { return io::detail::format_double(v); }
inline std::string num(std::size_t v) { return std::to_string(v); }

struct StudyReport {
  std::vector<Table> tables;
  Json summary = Json::object();
};

// ---------------------------------------------------------------------------
// Building blocks shared by the studies and the acceptance harness
// ---------------------------------------------------------------------------

inline double max_abs_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

struct ModelDesign {
  std::size_t d = 100;
  std::size_t p = 22;
  std::size_t n = 1000;
  std::size_t T = 1000;
  std::size_t q = 2;
  ProcessKind process = ProcessKind::AR1;
  std::optional<double> kappa;  // set: V = d^{-kappa} U, otherwise the centered construction
  std::optional<double> alpha;
  std::size_t mc_samples = 200'000;

  SimConfig config(std::uint64_t seed) const {
    SimConfig c;
    c.d = d;
    c.p = p;
    c.n = n;
    c.T = T;
    c.q = q;
    c.process = process;
    c.kappa_exponent = kappa;
    c.alpha = alpha;
    c.mc_samples = mc_samples;
    c.seed = seed;
    return c;
  }
};

/// Embedding plus the estimation target alpha_p V_c V_c^T, where V_c is V
/// centered against its Monte-Carlo marginals (V itself for the three-step
/// construction, which is already centered).
struct PlantedModel {
  EmbeddingMatrix embedding;
  Matrix centered;
  double alpha_p = 0.0;
  Matrix target;
};

inline PlantedModel make_model(const ModelDesign& design, std::uint64_t seed) {
  const SimConfig cfg = design.config(seed);
  PlantedModel m;
  if (design.kappa) {
    m.embedding = scaled_embeddings(cfg);
    const Vector p_mc = estimate_marginals_mc(m.embedding, cfg.mc_samples, seed);
    const Vector mu = m.embedding.values.transpose() * p_mc;
    m.centered = m.embedding.values.rowwise() - mu.transpose();
  } else {
    m.embedding = build_embeddings(cfg);
    m.centered = m.embedding.values;
  }
  m.alpha_p = alpha_p(cfg.ar_alpha(), cfg.q, cfg.p);
  m.target = m.alpha_p * m.centered * m.centered.transpose();
  return m;
}

struct EstimationReplicate {
  double err_hat = 0.0;
  double err_tilde = 0.0;
  Vector eigenvalues;  // full spectrum of PMI-hat, magnitude order
};

inline EstimationReplicate estimation_replicate(const ModelDesign& design, const PlantedModel& model,
                                                std::uint64_t seed) {
  SimConfig cfg = design.config(seed);
  const Cohort cohort = simulate_cohort(cfg, model.embedding);
  const CooccurrenceSummary s = summarize_cohort(cohort, design.q);
  const PmiEstimate hat = empirical_pmi(s);
  EigenPairs eig = eig_sym(hat.matrix);
  const auto pi = static_cast<Eigen::Index>(design.p);
  const Matrix tilde = eig.vectors.leftCols(pi) * eig.values.head(pi).asDiagonal() * eig.vectors.leftCols(pi).transpose();
  return {max_abs_diff(hat.matrix, model.target), max_abs_diff(tilde, model.target), std::move(eig.values)};
}

/// Replicates of one design with a shared embedding (cell seed) and
/// independent cohorts; slot r depends only on (seed, cell, r).
inline std::vector<EstimationReplicate> estimation_replicates(const ModelDesign& design, const PlantedModel& model,
                                                              std::uint64_t seed, std::uint64_t cell,
                                                              std::size_t replicates, std::size_t threads) {
  std::vector<EstimationReplicate> out(replicates);
  parallel_for(replicates, threads,
               [&](std::size_t r) { out[r] = estimation_replicate(design, model, derive_seed(seed, cell, r)); });
  return out;
}

/// ||PMI - alpha_p V V^T||_max with the population PMI from Monte-Carlo.
inline double population_bias(const ModelDesign& design, const PlantedModel& model, std::size_t samples,
                              std::uint64_t seed) {
  const SimConfig cfg = design.config(seed);
  const Matrix pop = population_pmi_ar1(model.embedding, cfg.ar_alpha(), cfg.q, samples, seed);
  return max_abs_diff(pop, model.target);
}

// ---------------------------------------------------------------------------
// Studies
// ---------------------------------------------------------------------------

struct DecayRow {
  ProcessKind process = ProcessKind::AR1;
  std::size_t n = 0;
  std::size_t T = 0;
  double median_hat = 0.0;
  double median_tilde = 0.0;
  double q20_tilde = 0.0;
  double q80_tilde = 0.0;
};

struct DecayResult {
  std::vector<DecayRow> rows;
  std::vector<stats::LinearFit> fits;  // one per process: log median tilde error vs log n
};

inline DecayResult decay_study(const BenchSpec& spec) {
  spec.validate();
  DecayResult out;
  const std::size_t d = spec.d_grid.front();
  const std::size_t T = spec.T_grid.front();
  std::uint64_t cell = 0;
  for (ProcessKind proc : spec.processes) {
    ModelDesign design{d, spec.rank_for(d), spec.n_grid.front(), T, spec.q, proc, std::nullopt, spec.ar_alpha,
                       spec.mc_samples};
    const PlantedModel model = make_model(design, derive_seed(spec.seed, 0, 0));
    std::vector<double> log_n, log_err;
    for (std::size_t n : spec.n_grid) {
      design.n = n;
      const auto reps = estimation_replicates(design, model, spec.seed, ++cell, spec.replicates, spec.threads);
      std::vector<double> hat, tilde;
      for (const auto& r : reps) {
        hat.push_back(r.err_hat);
        tilde.push_back(r.err_tilde);
      }
      DecayRow row{proc, n, T, stats::median(hat), stats::median(tilde), stats::quantile(tilde, 0.2),
                   stats::quantile(tilde, 0.8)};
      out.rows.push_back(row);
      log_n.push_back(std::log(static_cast<double>(n)));
      log_err.push_back(std::log(row.median_tilde));
    }
    out.fits.push_back(log_n.size() >= 2 ? stats::ols(log_n, log_err) : stats::LinearFit{});
  }
  return out;
}

struct TypeIRow {
  std::size_t n = 0;
  VariancePath path = VariancePath::Null;
  std::size_t replicates = 0;
  std::size_t any_rejection = 0;
  double fwer = 0.0;
};

/// Numbers of Bonferroni rejections for one null replicate under both
/// variance paths, testing every off-diagonal entry of PMI-hat.
struct NullReplicate {
  std::size_t rejections_patient = 0;
  std::size_t rejections_null = 0;
  std::size_t tests = 0;
};

inline NullReplicate null_replicate(std::size_t d, std::size_t n, std::size_t T, std::size_t q, double level,
                                    std::uint64_t seed) {
  const std::vector<double> probs(d, 1.0 / static_cast<double>(d));
  const Cohort cohort = sample_null_cohort(probs, n, T, seed);
  const auto patients = accumulate_cohort(cohort, q);
  const CooccurrenceSummary s = merge(std::span<const PatientCooccurrence>(patients));
  const PmiEstimate hat = empirical_pmi(s);
  const Matrix var_patient = empirical_variance_matrix_patient(s, patients);
  const NullCovarianceModel model = NullCovarianceModel::from_summary(s);
  NullReplicate out;
  std::vector<double> p_patient, p_null;
  for (std::size_t w = 0; w < d; ++w)
    for (std::size_t v = w + 1; v < d; ++v) {
      const auto wi = static_cast<Eigen::Index>(w);
      const auto vi = static_cast<Eigen::Index>(v);
      if (s.counts.at(w, v) == 0 || !(var_patient(wi, vi) > 0.0)) continue;
      const double stat = hat.matrix(wi, vi);
      p_patient.push_back(z_and_p(stat, var_patient(wi, vi)).p);
      p_null.push_back(z_and_p(stat, var_empirical_entry_null(model, w, v)).p);
    }
  out.tests = p_patient.size();
  if (out.tests == 0) return out;
  const auto sel_patient = bonferroni(p_patient, level);
  const auto sel_null = bonferroni(p_null, level);
  out.rejections_patient = static_cast<std::size_t>(std::count(sel_patient.begin(), sel_patient.end(), true));
  out.rejections_null = static_cast<std::size_t>(std::count(sel_null.begin(), sel_null.end(), true));
  return out;
}

inline std::vector<TypeIRow> type_i_study(const BenchSpec& spec) {
  spec.validate();
  const std::size_t d = spec.d_grid.front();
  const std::size_t T = spec.T_grid.front();
  std::vector<TypeIRow> rows;
  std::uint64_t cell = 0;
  for (std::size_t n : spec.n_grid) {
    ++cell;
    std::vector<NullReplicate> reps(spec.replicates);
    parallel_for(spec.replicates, spec.threads, [&](std::size_t r) {
      reps[r] = null_replicate(d, n, T, spec.q, spec.level, derive_seed(spec.seed, cell, r));
    });
    for (VariancePath path : {VariancePath::Patient, VariancePath::Null}) {
      TypeIRow row{n, path, spec.replicates, 0, 0.0};
      for (const auto& r : reps)
        row.any_rejection += (path == VariancePath::Patient ? r.rejections_patient : r.rejections_null) > 0 ? 1 : 0;
      row.fwer = static_cast<double>(row.any_rejection) / static_cast<double>(spec.replicates);
      rows.push_back(row);
    }
  }
  return rows;
}

/// Per-replicate estimates for entries (w, v) of PMI-hat and PMI-tilde with
/// their estimated variances.
struct EntryEstimates {
  std::vector<std::pair<std::size_t, std::size_t>> entries;
  std::vector<double> hat, tilde, var_hat, var_tilde;
};

inline EntryEstimates entry_replicate(const ModelDesign& design, const PlantedModel& model,
                                      const std::vector<std::pair<std::size_t, std::size_t>>& entries,
                                      VariancePath path, std::uint64_t seed) {
  const SimConfig cfg = design.config(seed);
  const Cohort cohort = simulate_cohort(cfg, model.embedding);
  const auto patients = accumulate_cohort(cohort, design.q);
  const CooccurrenceSummary s = merge(std::span<const PatientCooccurrence>(patients));
  const PmiEstimate hat = empirical_pmi(s);
  const PmiEstimate tilde = lowrank_pmi(hat, design.p);
  const Projector proj = Projector::from_estimate(tilde);
  EntryEstimates out;
  out.entries = entries;
  if (path == VariancePath::Patient) {
    const PatientResiduals residuals(s, patients);
    for (auto [w, v] : entries) {
      out.var_hat.push_back(var_empirical_entry_patient(residuals, w, v));
      out.var_tilde.push_back(var_lowrank_entry_patient(proj, residuals, w, v));
    }
  } else {
    const NullCovarianceModel nm = NullCovarianceModel::from_summary(s);
    for (auto [w, v] : entries) {
      out.var_hat.push_back(var_empirical_entry_null(nm, w, v));
      out.var_tilde.push_back(var_lowrank_entry_null(proj, nm, w, v));
    }
  }
  for (auto [w, v] : entries) {
    out.hat.push_back(hat.matrix(static_cast<Eigen::Index>(w), static_cast<Eigen::Index>(v)));
    out.tilde.push_back(tilde.matrix(static_cast<Eigen::Index>(w), static_cast<Eigen::Index>(v)));
  }
  return out;
}

struct QQResult {
  std::size_t T = 0;
  std::vector<double> standardized_hat;
  std::vector<double> standardized_tilde;
  double ks_hat = 0.0;
  double ks_tilde = 0.0;
  double ks_p_hat = 0.0;
  double ks_p_tilde = 0.0;
};

/// Entry (0, 0) standardized as (estimate - alpha_p V_c V_c^T) / sqrt(estimated variance).
inline std::vector<QQResult> qq_study(const BenchSpec& spec) {
  spec.validate();
  const std::size_t d = spec.d_grid.front();
  const std::size_t n = spec.n_grid.front();
  std::vector<QQResult> out;
  std::uint64_t cell = 0;
  for (std::size_t T : spec.T_grid) {
    ++cell;
    ModelDesign design{d, spec.rank_for(d), n, T, spec.q, ProcessKind::AR1, spec.kappa_grid.front(), spec.ar_alpha,
                       spec.mc_samples};
    const PlantedModel model = make_model(design, derive_seed(spec.seed, 0, 0));
    const double truth = model.target(0, 0);
    std::vector<EntryEstimates> reps(spec.replicates);
    parallel_for(spec.replicates, spec.threads, [&](std::size_t r) {
      reps[r] = entry_replicate(design, model, {{0, 0}}, spec.variance_path, derive_seed(spec.seed, cell, r));
    });
    QQResult res;
    res.T = T;
    for (const auto& r : reps) {
      res.standardized_hat.push_back((r.hat[0] - truth) / std::sqrt(r.var_hat[0]));
      res.standardized_tilde.push_back((r.tilde[0] - truth) / std::sqrt(r.var_tilde[0]));
    }
    res.ks_hat = stats::ks_statistic_normal(res.standardized_hat);
    res.ks_tilde = stats::ks_statistic_normal(res.standardized_tilde);
    res.ks_p_hat = stats::ks_pvalue(res.ks_hat, spec.replicates);
    res.ks_p_tilde = stats::ks_pvalue(res.ks_tilde, spec.replicates);
    out.push_back(std::move(res));
  }
  return out;
}

struct CIRow {
  double kappa = 0.0;
  std::size_t w = 0;
  std::size_t w_prime = 0;
  double half_width_hat = 0.0;
  double half_width_tilde = 0.0;
};

/// Average 95% half-widths 1.96 sqrt(Var) over replicates for entries (0, k).
inline std::vector<CIRow> ci_width_study(const BenchSpec& spec) {
  spec.validate();
  const std::size_t d = spec.d_grid.front();
  std::vector<std::pair<std::size_t, std::size_t>> entries;
  for (std::size_t k = 0; k < std::min(spec.entries, d); ++k) entries.emplace_back(0, k);
  const double z = 1.959963984540054;
  std::vector<CIRow> rows;
  std::uint64_t cell = 0;
  for (double kappa : spec.kappa_grid) {
    ++cell;
    ModelDesign design{d, spec.rank_for(d), spec.n_grid.front(), spec.T_grid.front(), spec.q, ProcessKind::AR1, kappa,
                       spec.ar_alpha, spec.mc_samples};
    const PlantedModel model = make_model(design, derive_seed(spec.seed, 0, 0));
    std::vector<EntryEstimates> reps(spec.replicates);
    parallel_for(spec.replicates, spec.threads, [&](std::size_t r) {
      reps[r] = entry_replicate(design, model, entries, spec.variance_path, derive_seed(spec.seed, cell, r));
    });
    for (std::size_t k = 0; k < entries.size(); ++k) {
      CIRow row{kappa, entries[k].first, entries[k].second, 0.0, 0.0};
      for (const auto& r : reps) {
        row.half_width_hat += z * std::sqrt(r.var_hat[k]);
        row.half_width_tilde += z * std::sqrt(r.var_tilde[k]);
      }
      row.half_width_hat /= static_cast<double>(reps.size());
      row.half_width_tilde /= static_cast<double>(reps.size());
      rows.push_back(row);
    }
  }
  return rows;
}

struct PowerRow {
  double kappa = 0.0;
  double signal = 0.0;  // d^{-kappa}
  std::size_t planted = 0;
  std::size_t detected = 0;
  std::size_t false_selected = 0;
  std::size_t null_pairs = 0;
  double power = 0.0;
};

/// Planted edges are pairs whose centered embeddings have |cos| >= 0.5.
inline std::vector<std::pair<std::size_t, std::size_t>> planted_edges(const Matrix& centered) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  const auto d = static_cast<std::size_t>(centered.rows());
  for (std::size_t w = 0; w < d; ++w)
    for (std::size_t v = w + 1; v < d; ++v) {
      const auto a = centered.row(static_cast<Eigen::Index>(w));
      const auto b = centered.row(static_cast<Eigen::Index>(v));
      const double denom = a.norm() * b.norm();
      if (denom > 0.0 && std::abs(a.dot(b)) / denom >= 0.5) out.emplace_back(w, v);
    }
  return out;
}

/// KNIT (null-path variances, BY selection) on cohorts with V = d^{-kappa} U;
/// U is shared across the kappa grid within a replicate.
inline std::vector<PowerRow> power_study(const BenchSpec& spec) {
  spec.validate();
  const std::size_t d = spec.d_grid.front();
  const std::size_t p = spec.rank_for(d);
  std::vector<PowerRow> rows;
  std::uint64_t cell = 0;
  for (double kappa : spec.kappa_grid) {
    ++cell;
    ModelDesign design{d, p, spec.n_grid.front(), spec.T_grid.front(), spec.q, ProcessKind::AR1, kappa, spec.ar_alpha,
                       spec.mc_samples};
    struct Rep {
      std::size_t planted = 0, detected = 0, false_selected = 0, null_pairs = 0;
    };
    std::vector<Rep> reps(spec.replicates);
    parallel_for(spec.replicates, spec.threads, [&](std::size_t r) {
      const PlantedModel model = make_model(design, derive_seed(spec.seed, 0, r));
      const SimConfig cfg = design.config(derive_seed(spec.seed, cell, r));
      const CooccurrenceSummary s = summarize_cohort(simulate_cohort(cfg, model.embedding), design.q);
      KnitOptions opts;
      opts.rank = p;
      opts.alpha = spec.level;
      const KnitOutput result = knit(s, opts);
      const auto edges = planted_edges(model.centered);
      Rep rep;
      rep.planted = edges.size();
      for (const auto& t : result.edges.pairs) {
        const bool is_edge = std::find(edges.begin(), edges.end(), std::make_pair(t.w, t.w_prime)) != edges.end();
        if (is_edge) {
          rep.detected += t.selected ? 1 : 0;
        } else {
          ++rep.null_pairs;
          rep.false_selected += t.selected ? 1 : 0;
        }
      }
      reps[r] = rep;
    });
    PowerRow row{kappa, std::pow(static_cast<double>(d), -kappa), 0, 0, 0, 0, 0.0};
    for (const auto& r : reps) {
      row.planted += r.planted;
      row.detected += r.detected;
      row.false_selected += r.false_selected;
      row.null_pairs += r.null_pairs;
    }
    row.power = row.planted ? static_cast<double>(row.detected) / static_cast<double>(row.planted) : 0.0;
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

inline StudyReport run_study(const BenchSpec& spec) {
  StudyReport rep;
  switch (spec.study) {
    case Study::DecayRate:
    case Study::Robustness: {
      const DecayResult r = decay_study(spec);
      Table t{"errors", {"process", "n", "T", "median_err_hat", "median_err_tilde", "q20_err_tilde", "q80_err_tilde"}, {}};
      for (const auto& row : r.rows)
        t.rows.push_back({knit::to_string(row.process), num(row.n), num(row.T), num(row.median_hat), num(row.median_tilde),
                          num(row.q20_tilde), num(row.q80_tilde)});
      Table f{"fit", {"process", "intercept", "slope"}, {}};
      for (std::size_t k = 0; k < r.fits.size(); ++k)
        f.rows.push_back({knit::to_string(spec.processes[k]), num(r.fits[k].intercept), num(r.fits[k].slope)});
      rep.tables = {t, f};
      break;
    }
    case Study::TypeI: {
      Table t{"fwer", {"n", "method", "replicates", "replicates_with_rejection", "fwer"}, {}};
      for (const auto& row : type_i_study(spec))
        t.rows.push_back({num(row.n), to_string(row.path), num(row.replicates), num(row.any_rejection), num(row.fwer)});
      rep.tables = {t};
      break;
    }
    case Study::QQ: {
      Table samples{"samples", {"T", "replicate", "standardized_hat", "standardized_tilde"}, {}};
      Table ks{"ks", {"T", "estimator", "ks_statistic", "ks_pvalue"}, {}};
      for (const auto& r : qq_study(spec)) {
        for (std::size_t k = 0; k < r.standardized_hat.size(); ++k)
          samples.rows.push_back({num(r.T), num(k), num(r.standardized_hat[k]), num(r.standardized_tilde[k])});
        ks.rows.push_back({num(r.T), "empirical", num(r.ks_hat), num(r.ks_p_hat)});
        ks.rows.push_back({num(r.T), "lowrank", num(r.ks_tilde), num(r.ks_p_tilde)});
      }
      rep.tables = {samples, ks};
      break;
    }
    case Study::CIWidth: {
      Table t{"halfwidths", {"kappa", "w", "w_prime", "half_width_empirical", "half_width_lowrank"}, {}};
      for (const auto& row : ci_width_study(spec))
        t.rows.push_back({num(row.kappa), num(row.w), num(row.w_prime), num(row.half_width_hat), num(row.half_width_tilde)});
      rep.tables = {t};
      break;
    }
    case Study::Power: {
      Table t{"power", {"kappa", "signal", "planted_edges", "detected", "power", "null_pairs", "false_selected"}, {}};
      for (const auto& row : power_study(spec))
        t.rows.push_back({num(row.kappa), num(row.signal), num(row.planted), num(row.detected), num(row.power),
                          num(row.null_pairs), num(row.false_selected)});
      rep.tables = {t};
      break;
    }
  }
  return rep;
}

/// Runs one study and writes `<study>_<table>.csv` files plus
/// `<study>_manifest.json` (config hash, seeds, wall-clock) into out_dir.
inline std::vector<std::filesystem::path> run_bench(const BenchSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  const auto start = std::chrono::steady_clock::now();
  const StudyReport rep = run_study(spec);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::vector<std::filesystem::path> written;
  const std::string prefix = to_string(spec.study);
  Json files = Json::array();
  for (const auto& t : rep.tables) {
    const auto path = out_dir / (prefix + "_" + t.name + ".csv");
    io::detail::write_text(path, t.csv());
    written.push_back(path);
    files.push_back(path.filename().string());
  }
  const Json config = spec.to_json();
  const std::string dumped = config.dump();
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : dumped) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(hash));
  Json manifest{{"config", config}, {"config_hash", hex}, {"seed", spec.seed}, {"files", files},
                {"wall_clock_seconds", seconds}};
  const auto mpath = out_dir / (prefix + "_manifest.json");
  io::detail::write_text(mpath, manifest.dump(2) + "\n");
  written.push_back(mpath);
  return written;
}

}  // namespace knit::bench
