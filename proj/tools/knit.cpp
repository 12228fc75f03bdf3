// knit: command-line front end for simulation, counting, estimation,
// variance, edge inference and the simulation benchmarks.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "knit/knit.hpp"

namespace fs = std::filesystem;
using knit::Json;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::size_t threads = 0;
  bool verbose = false;

  std::size_t workers() const { return knit::resolve_threads(threads); }
  void log(const std::string& msg) const {
    if (verbose) std::cerr << "knit: " << msg << '\n';
  }
};

knit::SimConfig load_config(const fs::path& path, const Globals& g) {
  knit::SimConfig cfg = knit::io::read_sim_config(path);
  if (g.seed) cfg.seed = *g.seed;
  return cfg;
}

knit::SpectraOptions spectra_options(double floor, bool allow_large) {
  knit::SpectraOptions o;
  o.pmi_floor = floor;
  o.allow_large = allow_large;
  return o;
}

std::vector<knit::PatientCooccurrence> read_patient_dir(const fs::path& dir, std::size_t n) {
  if (!fs::is_directory(dir)) throw knit::IoError(dir.string() + " is not a directory");
  std::vector<knit::PatientCooccurrence> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const fs::path path = dir / ("patient_" + std::to_string(i) + ".knc");
    if (!fs::exists(path)) throw knit::IoError("missing patient file " + path.string());
    out.push_back(knit::io::read_patient(path));
  }
  return out;
}

void write_patient_dir(const fs::path& dir, const std::vector<knit::PatientCooccurrence>& patients) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw knit::IoError("cannot create " + dir.string() + ": " + ec.message());
  for (std::size_t i = 0; i < patients.size(); ++i)
    knit::io::write_patient(dir / ("patient_" + std::to_string(i) + ".knc"), patients[i]);
}

void write_summary_any(const fs::path& out, const knit::CooccurrenceSummary& s, const std::string& format) {
  if (format == "csv")
    knit::io::write_summary_csv(out, s);
  else
    knit::io::write_summary(out, s);
}

template <typename T>
std::vector<T> parse_list(const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    out.push_back(knit::io::detail::parse_number<T>(item, "grid list"));
  if (out.empty()) throw knit::InputError("empty grid list '" + text + "'");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"knit: knowledge-graph inference from windowed co-occurrence summaries"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Master seed (overrides the config seed)");
  app.add_option("--threads", g.threads, "Worker threads (falls back to KNIT_THREADS, then 1)");
  app.add_flag("--verbose,-v", g.verbose, "Progress messages on stderr");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic cohort");
  fs::path sim_config, sim_out;
  bool sim_null = false;
  sim->add_option("--config", sim_config, "JSON simulation config")->required();
  sim->add_option("--out", sim_out, "Output cohort.bin")->required();
  sim->add_flag("--null", sim_null, "Uniform global-null cohort (ignores the embedding fields)");

  // cooccur
  auto* co = app.add_subcommand("cooccur", "Windowed co-occurrence counts");
  fs::path co_in, co_out, co_patient_dir;
  std::size_t co_q = 30;
  std::string co_format = "knc";
  co->add_option("--in", co_in, "Input cohort.bin")->required();
  co->add_option("--q", co_q, "Window size")->capture_default_str();
  co->add_option("--out", co_out, "Output summary")->required();
  co->add_option("--format", co_format, "knc or csv")->check(CLI::IsMember({"knc", "csv"}))->capture_default_str();
  co->add_option("--patient-dir", co_patient_dir, "Also write per-patient summaries here");

  // estimate
  auto* est = app.add_subcommand("estimate", "Empirical and low-rank PMI");
  fs::path est_summary, est_out;
  std::optional<std::size_t> est_rank;
  std::optional<double> est_eta0;
  bool est_auto = false;
  double est_floor = 1e-6;
  bool est_large = false;
  est->add_option("--summary", est_summary, "Co-occurrence summary")->required();
  auto* est_rank_opt = est->add_option("--rank", est_rank, "Embedding rank p");
  auto* est_auto_opt = est->add_flag("--auto-rank", est_auto, "Estimate the rank by eigenvalue thresholding");
  est->add_option("--eta0", est_eta0, "Rank threshold (default: fixed-point of the formula)")->needs(est_auto_opt);
  est_rank_opt->excludes(est_auto_opt);
  est->add_option("--pmi-floor", est_floor, "Floor eta on the PMI ratio")->capture_default_str();
  est->add_flag("--allow-large", est_large, "Allow dense PMI beyond 20000 codes");
  est->add_option("--out", est_out, "Output PMI file")->required();

  // variance
  auto* var = app.add_subcommand("variance", "Entrywise variances of the low-rank estimate");
  fs::path var_pmi, var_summary, var_pairs, var_out, var_patient_dir;
  var->add_option("--pmi", var_pmi, "Low-rank PMI file from `estimate`")->required();
  var->add_option("--summary", var_summary, "Co-occurrence summary")->required();
  var->add_option("--patient-dir", var_patient_dir, "Per-patient summaries (patient-level path)");
  var->add_option("--pairs", var_pairs, "CSV of w,w_prime pairs (default: all off-diagonal pairs)");
  var->add_option("--out", var_out, "Output var.csv")->required();

  // infer
  auto* inf = app.add_subcommand("infer", "Edge selection (KNIT)");
  fs::path inf_summary, inf_pmi, inf_out, inf_config;
  std::optional<std::size_t> inf_rank, inf_q;
  std::optional<double> inf_eta0;
  bool inf_auto = false, inf_fwer = false, inf_literal = false, inf_large = false;
  double inf_fdr = 0.05, inf_floor = 1e-6;
  auto* inf_summary_opt = inf->add_option("--summary", inf_summary, "Co-occurrence summary");
  inf->add_option("--pmi", inf_pmi, "Reuse a low-rank PMI file from `estimate`")->needs(inf_summary_opt);
  auto* inf_config_opt = inf->add_option("--from-config", inf_config, "Simulate, count and infer in one run");
  inf_config_opt->excludes(inf_summary_opt);
  inf->add_option("--q", inf_q, "Window size for --from-config (default: config q)")->needs(inf_config_opt);
  auto* inf_rank_opt = inf->add_option("--rank", inf_rank, "Embedding rank p");
  auto* inf_auto_opt = inf->add_flag("--auto-rank", inf_auto, "Estimate the rank by eigenvalue thresholding");
  inf->add_option("--eta0", inf_eta0, "Rank threshold")->needs(inf_auto_opt);
  inf_rank_opt->excludes(inf_auto_opt);
  inf->add_option("--fdr", inf_fdr, "Nominal level")->capture_default_str();
  inf->add_flag("--fwer", inf_fwer, "Bonferroni family-wise control instead of BY");
  inf->add_flag("--paper-literal-p", inf_literal, "p = Phi(z) instead of the two-sided p-value");
  inf->add_option("--pmi-floor", inf_floor, "Floor eta on the PMI ratio")->capture_default_str();
  inf->add_flag("--allow-large", inf_large, "Allow dense PMI beyond 20000 codes");
  inf->add_option("--out", inf_out, "Output edges.csv")->required();

  // bench
  auto* bn = app.add_subcommand("bench", "Simulation studies as CSV tables");
  std::string bn_study, bn_n, bn_T, bn_d, bn_kappa, bn_process;
  std::optional<std::size_t> bn_reps, bn_p, bn_q, bn_mc;
  bool bn_paper = false;
  std::string bn_path;
  fs::path bn_out;
  bn->add_option("--study", bn_study, "typei, decay, qq, ciwidth, power or robustness")->required();
  bn->add_flag("--paper-scale", bn_paper, "Use the full-scale grids instead of desk-scale defaults");
  bn->add_option("--replicates", bn_reps, "Replicates per grid cell");
  bn->add_option("--n", bn_n, "Comma-separated n grid");
  bn->add_option("--T", bn_T, "Comma-separated T grid");
  bn->add_option("--d", bn_d, "Vocabulary size");
  bn->add_option("--kappa", bn_kappa, "Comma-separated kappa grid");
  bn->add_option("--process", bn_process, "Comma-separated processes (ar1, sphere, arma13)");
  bn->add_option("--p", bn_p, "Embedding rank");
  bn->add_option("--q", bn_q, "Window size");
  bn->add_option("--mc-samples", bn_mc, "Monte-Carlo samples for marginals");
  bn->add_option("--variance-path", bn_path, "patient or null")->check(CLI::IsMember({"patient", "null"}));
  bn->add_option("--out-dir", bn_out, "Directory for CSV and manifest files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(knit::ExitCode::InputError);
  }

  try {
    const std::size_t threads = g.workers();
    if (*sim) {
      knit::SimConfig cfg = load_config(sim_config, g);
      knit::Cohort cohort;
      if (sim_null) {
        const std::vector<double> probs(cfg.d, 1.0 / static_cast<double>(cfg.d));
        cohort = knit::sample_null_cohort(probs, cfg.n, cfg.T, cfg.seed, threads);
        cohort.q = cfg.q;
      } else {
        cohort = knit::simulate(cfg, threads);
      }
      knit::io::write_cohort(sim_out, cohort);
      g.log("wrote " + std::to_string(cohort.n()) + " sequences to " + sim_out.string());
    } else if (*co) {
      const knit::Cohort cohort = knit::io::read_cohort(co_in);
      const auto patients = knit::accumulate_cohort(cohort, co_q, threads);
      const auto s = knit::merge(std::span<const knit::PatientCooccurrence>(patients));
      write_summary_any(co_out, s, co_format);
      if (!co_patient_dir.empty()) write_patient_dir(co_patient_dir, patients);
      g.log("counted " + std::to_string(s.counts.nnz()) + " nonzero pairs, total " + std::to_string(s.total));
    } else if (*est) {
      if (!est_rank && !est_auto) throw knit::InputError("estimate needs --rank or --auto-rank");
      const auto s = knit::io::read_summary(est_summary);
      auto out = knit::estimate(s, {est_rank, est_eta0}, spectra_options(est_floor, est_large));
      for (const auto& w : out.pmi.warnings) std::cerr << "knit: warning: " << w << '\n';
      knit::io::write_pmi(est_out, out.pmi, out.meta);
      g.log("rank " + std::to_string(*out.pmi.rank) + " estimate written to " + est_out.string());
    } else if (*var) {
      const auto s = knit::io::read_summary(var_summary);
      const auto pmi = knit::io::read_pmi(var_pmi);
      if (pmi.kind != knit::PmiKind::LowRank) throw knit::InputError(var_pmi.string() + " holds no low-rank estimate");
      if (pmi.d() != s.d()) throw knit::InputError("PMI file and summary disagree on d");
      knit::io::PairList pairs;
      if (!var_pairs.empty()) {
        pairs = knit::io::read_pairs(var_pairs, s.d());
      } else {
        for (std::size_t w = 0; w < s.d(); ++w)
          for (std::size_t v = w + 1; v < s.d(); ++v)
            if (s.counts.at(w, v) > 0) pairs.emplace_back(w, v);
      }
      const knit::Projector proj = knit::Projector::from_estimate(pmi);
      std::vector<knit::io::VarianceRow> rows(pairs.size());
      std::vector<knit::ClampStats> clamps(pairs.size());
      std::string method;
      if (!var_patient_dir.empty()) {
        method = "patient";
        const auto patients = read_patient_dir(var_patient_dir, s.n);
        const knit::PatientResiduals residuals(s, patients);
        knit::parallel_for(pairs.size(), threads, [&](std::size_t k) {
          auto [w, v] = pairs[k];
          rows[k] = {w, v, pmi.matrix(static_cast<Eigen::Index>(w), static_cast<Eigen::Index>(v)),
                     knit::var_lowrank_entry_patient(proj, residuals, w, v, &clamps[k])};
        });
      } else {
        method = "null";
        const auto model = knit::NullCovarianceModel::from_summary(s);
        const knit::NullVarianceEngine engine(proj, model);
        knit::parallel_for(pairs.size(), threads, [&](std::size_t k) {
          auto [w, v] = pairs[k];
          rows[k] = {w, v, pmi.matrix(static_cast<Eigen::Index>(w), static_cast<Eigen::Index>(v)),
                     engine.variance(w, v, &clamps[k])};
        });
      }
      std::size_t clamped = 0;
      for (const auto& c : clamps) clamped += c.clamped;
      knit::io::write_variances(var_out, rows, method);
      if (clamped > 0) std::cerr << "knit: " << clamped << " slightly negative variances clamped to 0\n";
      g.log("wrote " + std::to_string(rows.size()) + " variances (" + method + " path)");
    } else if (*inf) {
      knit::KnitOptions opts;
      opts.alpha = inf_fdr;
      opts.correction = inf_fwer ? knit::Correction::Bonferroni : knit::Correction::ByFdr;
      opts.sidedness = inf_literal ? knit::Sidedness::PaperLiteral : knit::Sidedness::TwoSided;
      opts.spectra = spectra_options(inf_floor, inf_large);
      opts.threads = threads;
      opts.rank = inf_rank;
      opts.eta0 = inf_eta0;
      knit::CooccurrenceSummary s;
      Json config{{"fdr", inf_fdr}, {"fwer", inf_fwer}, {"paper_literal_p", inf_literal}, {"pmi_floor", inf_floor}};
      if (!inf_config.empty()) {
        const knit::SimConfig cfg = load_config(inf_config, g);
        const std::size_t q = inf_q.value_or(cfg.q);
        s = knit::summarize_cohort(knit::simulate(cfg, threads), q, threads);
        config["simulation"] = knit::io::to_json(cfg);
        config["q"] = q;
      } else if (!inf_summary.empty()) {
        s = knit::io::read_summary(inf_summary);
        config["summary"] = inf_summary.string();
      } else {
        throw knit::InputError("infer needs --summary or --from-config");
      }
      knit::KnitOutput out;
      if (!inf_pmi.empty()) {
        Json meta;
        out.pmi = knit::io::read_pmi(inf_pmi, &meta);
        if (out.pmi.kind != knit::PmiKind::LowRank) throw knit::InputError(inf_pmi.string() + " holds no low-rank estimate");
        out.meta = meta;
        config["pmi"] = inf_pmi.string();
        out.edges = knit::test_edges(out.pmi, s, opts);
      } else {
        if (!inf_rank && !inf_auto) throw knit::InputError("infer needs --rank, --auto-rank or --pmi");
        out = knit::knit(s, opts);
      }
      config["estimate"] = out.meta;
      knit::io::write_edges(inf_out, out.edges, config);
      g.log("selected " + std::to_string(out.edges.selected_count()) + " of " + std::to_string(out.edges.J) + " pairs");
      if (out.edges.clamped > 0)
        std::cerr << "knit: " << out.edges.clamped << " slightly negative variances clamped to 0\n";
    } else if (*bn) {
      knit::bench::BenchSpec spec = knit::bench::BenchSpec::defaults(knit::bench::parse_study(bn_study), bn_paper);
      if (bn_reps) spec.replicates = *bn_reps;
      if (!bn_n.empty()) spec.n_grid = parse_list<std::size_t>(bn_n);
      if (!bn_T.empty()) spec.T_grid = parse_list<std::size_t>(bn_T);
      if (!bn_d.empty()) spec.d_grid = parse_list<std::size_t>(bn_d);
      if (!bn_kappa.empty()) spec.kappa_grid = parse_list<double>(bn_kappa);
      if (!bn_process.empty()) {
        spec.processes.clear();
        std::stringstream ss(bn_process);
        std::string item;
        while (std::getline(ss, item, ',')) spec.processes.push_back(knit::parse_process(item));
      }
      if (bn_p) spec.p = *bn_p;
      if (bn_q) spec.q = *bn_q;
      if (bn_mc) spec.mc_samples = *bn_mc;
      if (!bn_path.empty())
        spec.variance_path = bn_path == "patient" ? knit::bench::VariancePath::Patient : knit::bench::VariancePath::Null;
      if (g.seed) spec.seed = *g.seed;
      spec.threads = threads;
      for (const auto& path : knit::bench::run_bench(spec, bn_out)) g.log("wrote " + path.string());
    }
  } catch (const knit::Error& e) {
    std::cerr << "knit: error: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  } catch (const std::bad_alloc&) {
    std::cerr << "knit: error: out of memory\n";
    return static_cast<int>(knit::ExitCode::NumericalFailure);
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "knit: error: " << e.what() << '\n';
    return static_cast<int>(knit::ExitCode::IoFailure);
  } catch (const std::exception& e) {
    std::cerr << "knit: error: " << e.what() << '\n';
    return static_cast<int>(knit::ExitCode::NumericalFailure);
  }
  return 0;
}
