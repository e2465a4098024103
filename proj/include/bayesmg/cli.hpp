#pragma once

// Command-line front end: complete, bpmf, simulate, coherence, replicate.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bayesmg/bpmf.hpp"
#include "bayesmg/config.hpp"
#include "bayesmg/diagnostics.hpp"
#include "bayesmg/errors.hpp"
#include "bayesmg/experiments.hpp"
#include "bayesmg/gibbs.hpp"
#include "bayesmg/io.hpp"
#include "bayesmg/map_init.hpp"
#include "bayesmg/mask.hpp"
#include "bayesmg/png.hpp"
#include "bayesmg/smg.hpp"

namespace bayesmg {

namespace cli {

/// Flags shared by `complete` and `bpmf`; unset optionals leave the config
/// document's value in place.
struct RunFlags {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value
  std::optional<std::uint64_t> seed;
  std::optional<int> iters;
  std::optional<int> burn_in;
  std::optional<int> thin;
  std::optional<int> rank;
  std::optional<std::string> eta2;
  std::optional<int> chains;
  std::optional<std::string> out_dir;
  std::optional<double> level;

  void apply(RunConfig& cfg) const {
    if (!config_path.empty()) cfg.merge_file(config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw DomainError("--set expects key=value, got '" + kv + "'");
      cfg.set(std::string(detail::trim(std::string_view(kv).substr(0, eq))),
              std::string(detail::trim(std::string_view(kv).substr(eq + 1))));
    }
    if (seed) cfg.set("run.seed", std::to_string(*seed));
    if (iters) cfg.set("gibbs.iters", std::to_string(*iters));
    if (burn_in) cfg.set("gibbs.burn_in", std::to_string(*burn_in));
    if (thin) cfg.set("gibbs.thin", std::to_string(*thin));
    if (rank) cfg.set("model.rank", std::to_string(*rank));
    if (eta2) cfg.set("gibbs.eta2", *eta2);
    if (chains) cfg.set("gibbs.chains", std::to_string(*chains));
    if (out_dir) cfg.set("run.out_dir", *out_dir);
    if (level) cfg.set("report.level", detail::format_double(*level));
  }
};

inline void add_run_flags(CLI::App* sub, RunFlags& f) {
  sub->add_option("--config", f.config_path, "config document (key = value lines)")->check(CLI::ExistingFile);
  sub->add_option("--set", f.overrides, "config override key=value (repeatable)");
  sub->add_option("--seed", f.seed, "base seed");
  sub->add_option("--iters", f.iters, "total iterations per chain");
  sub->add_option("--burn-in", f.burn_in, "discarded iterations");
  sub->add_option("--thin", f.thin, "thinning interval");
  sub->add_option("--rank", f.rank, "rank R; omit to estimate");
  sub->add_option("--eta2", f.eta2, "noise variance: sampled or fixed:<v>");
  sub->add_option("--chains", f.chains, "independent chains");
  sub->add_option("--out-dir", f.out_dir, "output directory");
  sub->add_option("--level", f.level, "HPD level");
}

struct CompleteArgs {
  RunFlags run;
  std::string obs_path;
  std::string truth_path;
  std::optional<Index> m1;
  std::optional<Index> m2;
  std::vector<std::string> trace_entries;  // "i,j"
  bool save_samples = false;
};

inline std::filesystem::path prepare_out_dir(const RunConfig& cfg) {
  std::filesystem::path dir(cfg.get("run.out_dir"));
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::vector<EntryIndex> trace_entries(const std::vector<std::string>& specs, Index m1, Index m2) {
  std::vector<EntryIndex> out;
  if (specs.empty()) {
    for (const EntryIndex e : {EntryIndex{0, 0}, EntryIndex{m1 / 2, m2 / 2}, EntryIndex{m1 - 1, m2 - 1}}) {
      if (std::find(out.begin(), out.end(), e) == out.end()) out.push_back(e);
    }
    return out;
  }
  for (const auto& s : specs) {
    const auto f = detail::split_commas(s);
    if (f.size() != 2) throw DomainError("--trace-entry expects i,j, got '" + s + "'");
    const EntryIndex e{static_cast<Index>(detail::parse_index(f[0], "--trace-entry")),
                       static_cast<Index>(detail::parse_index(f[1], "--trace-entry"))};
    detail::require_dims(in_grid(e, m1, m2), "--trace-entry " + s + " is outside the grid");
    out.push_back(e);
  }
  return out;
}

/// Rank from the config, or estimated from a cross-validated soft-impute
/// fit. The solver comes back with lambda pinned so initialization does not
/// repeat the search.
inline std::pair<Index, SolverConfig> resolve_rank(const ObservationSet& obs, const RunConfig& cfg, bool& estimated) {
  SolverConfig solver = cfg.solver();
  const long long rank = cfg.get_int("model.rank");
  detail::require_domain(rank >= 0, "model.rank must be >= 0");
  detail::require_domain(rank <= std::min(obs.rows(), obs.cols()), "model.rank exceeds min(m1, m2)");
  estimated = rank == 0;
  if (!estimated) return {static_cast<Index>(rank), solver};
  RngStream rng = RngStream(cfg.seed()).derive(0x7261'6e6bULL);
  if (solver.lambda_grid.size() != 1) {
    solver.lambda = cv_select_lambda(obs, solver, rng);
    solver.lambda_grid = {solver.lambda};
  }
  const Index r = estimate_rank(soft_impute(obs, solver).x, solver.rank_tol);
  return {r, solver};
}

inline nlohmann::ordered_json json_number(double v) {
  return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

/// Everything `complete` and `bpmf` write after sampling.
inline void emit_run_outputs(const std::filesystem::path& dir, const std::string& command, const RunConfig& cfg,
                             const ObservationSet& obs, const std::optional<Matrix>& truth, Index rank,
                             bool rank_estimated, const PosteriorSamples& s, const std::vector<EntryIndex>& entries,
                             bool save_samples, std::ostream& out) {
  const double level = cfg.get_double("report.level");
  const Matrix mean = s.mean();
  const IntervalSet iv = hpd_intervals(s, level);
  const Matrix width = iv.width();
  save_dense_csv((dir / "posterior_mean.csv").string(), mean);
  save_dense_csv((dir / "hpd_lower.csv").string(), iv.lower);
  save_dense_csv((dir / "hpd_upper.csv").string(), iv.upper);
  save_dense_csv((dir / "hpd_width.csv").string(), width);
  render_heatmap(mean, (dir / "posterior_mean.png").string(), Palette::diverging);
  render_heatmap(width, (dir / "hpd_width.png").string(), Palette::grayscale);

  const auto sums = standard_summaries(entries);
  {
    auto os = detail::open_out((dir / "trace.csv").string());
    write_trace_csv(os, s, sums);
    if (!os) throw IoError((dir / "trace.csv").string() + ": write failed");
  }
  if (save_samples) save_samples_binary((dir / "samples.bin").string(), s.x_samples);

  nlohmann::ordered_json rep;
  rep["command"] = command;
  rep["seed"] = cfg.seed();
  rep["m1"] = obs.rows();
  rep["m2"] = obs.cols();
  rep["observed"] = obs.size();
  rep["rank"] = rank;
  rep["rank_estimated"] = rank_estimated;
  const GibbsConfig g = cfg.gibbs();
  rep["iters"] = g.total_iters;
  rep["burn_in"] = g.burn_in;
  rep["thin"] = g.thin;
  rep["chains"] = g.n_chains;
  rep["eta2_mode"] = cfg.get("gibbs.eta2");
  rep["retained"] = s.size();
  rep["level"] = level;
  double sigma2_mean = 0.0;
  double eta2_mean = 0.0;
  for (const auto& st : s.states) {
    sigma2_mean += st.sigma2;
    eta2_mean += st.eta2;
  }
  sigma2_mean /= static_cast<double>(s.size());
  eta2_mean /= static_cast<double>(s.size());
  rep["posterior_sigma2_mean"] = json_number(sigma2_mean);
  rep["posterior_eta2_mean"] = json_number(eta2_mean);
  rep["mean_hpd_width"] = json_number(width.mean());
  if (command == "complete") {
    rep["d_acceptance_rate"] = json_number(s.counters.d_mh.rate());
    rep["vmf_matrix_proposals"] = s.counters.vmf.matrix_proposals;
    rep["vmf_gibbs_fallbacks"] = s.counters.vmf.gibbs_fallbacks;
    rep["tie_jitters"] = s.counters.tie_jitters;
  }
  if (truth) {
    const MetricReport m = metric_report(s, *truth, rank, level, entries);
    nlohmann::ordered_json t;
    t["mfe"] = json_number(m.mfe);
    t["msd_row"] = json_number(m.msd_row);
    t["msd_col"] = json_number(m.msd_col);
    t["coverage"] = json_number(m.coverage);
    const auto missing = obs.missing();
    t["coverage_unobserved"] =
        missing.empty() ? nlohmann::ordered_json(nullptr)
                        : json_number(coverage_ratio(iv, *truth, std::span<const EntryIndex>(missing)));
    rep["truth"] = t;
    render_heatmap(*truth, (dir / "truth.png").string(), Palette::diverging);
    render_heatmap(mean - *truth, (dir / "error.png").string(), Palette::diverging);
  }
  if (s.n_chains > 1) {
    const auto gr = gelman_rubin_summaries(s, sums);
    nlohmann::ordered_json j;
    for (std::size_t k = 0; k < sums.size(); ++k) j[sums[k].name] = json_number(gr[k]);
    rep["gelman_rubin"] = j;
  }
  nlohmann::ordered_json conf;
  for (const auto& k : config_keys()) conf[k.key] = cfg.get(k.key);
  rep["config"] = conf;
  {
    auto os = detail::open_out((dir / "report.json").string());
    os << rep.dump(2) << '\n';
    if (!os) throw IoError((dir / "report.json").string() + ": write failed");
  }
  out << command << ": " << s.size() << " draws, rank " << rank;
  if (truth) out << ", mfe " << rep["truth"]["mfe"].dump() << ", coverage " << rep["truth"]["coverage"].dump();
  out << ", outputs in " << dir.string() << '\n';
}

inline int run_complete(const CompleteArgs& a, bool baseline, std::ostream& out) {
  RunConfig cfg;
  a.run.apply(cfg);
  std::optional<Matrix> truth;
  std::optional<Index> m1 = a.m1;
  std::optional<Index> m2 = a.m2;
  if (!a.truth_path.empty()) {
    truth = load_dense_csv(a.truth_path);
    if (!m1) m1 = truth->rows();
    if (!m2) m2 = truth->cols();
  }
  const ObservationSet obs = load_triplets(a.obs_path, m1, m2);
  if (truth) {
    detail::require_dims(truth->rows() == obs.rows() && truth->cols() == obs.cols(),
                         "truth dimensions do not match the observation grid");
  }
  const auto dir = prepare_out_dir(cfg);
  bool estimated = false;
  const auto [rank, solver] = resolve_rank(obs, cfg, estimated);
  const GibbsConfig g = cfg.gibbs();
  PosteriorSamples s;
  if (baseline) {
    s = run_bpmf(obs, cfg.bpmf(rank), g);
  } else {
    s = run_chain(obs, cfg.hyper(rank), g, solver);
  }
  const auto entries = trace_entries(a.trace_entries, obs.rows(), obs.cols());
  emit_run_outputs(dir, baseline ? "bpmf" : "complete", cfg, obs, truth, rank, estimated, s, entries, a.save_samples,
                   out);
  return 0;
}

struct SimulateArgs {
  Index m = 8;
  std::optional<Index> n;
  Index rank = 2;
  double sigma2 = 1.0;
  double eta = 0.5;
  std::optional<Index> n_obs;
  std::optional<double> p;
  bool mnar = false;
  std::string frames = "uniform01";
  std::string image;
  std::uint64_t seed = 0;
  std::string out_dir = ".";
};

inline int run_simulate(const SimulateArgs& a, std::ostream& out) {
  detail::require_domain(a.eta >= 0.0, "--eta must be non-negative");
  const int mask_modes = (a.n_obs ? 1 : 0) + (a.p ? 1 : 0) + (a.mnar ? 1 : 0);
  detail::require_domain(mask_modes <= 1, "choose at most one of --n-obs, --p, --mnar");
  RngStream rng(a.seed);
  std::filesystem::path dir(a.out_dir);
  std::filesystem::create_directories(dir);

  Matrix x;
  if (!a.image.empty()) {
    const PgmImage img = load_pgm(a.image);
    x = img.normalized;
    auto os = detail::open_out((dir / "normalization.txt").string());
    os << "offset," << detail::format_double(img.offset) << "\nscale," << detail::format_double(img.scale) << '\n';
  } else {
    const Index m2 = a.n.value_or(a.m);
    detail::require_domain(a.frames == "uniform01" || a.frames == "haar", "--frames must be uniform01 or haar");
    auto frame = [&](Index m) {
      return a.frames == "haar" ? random_frame_haar(m, a.rank, rng) : random_frame_uniform01(m, a.rank, rng);
    };
    const Frame u = frame(a.m);
    const Frame v = frame(m2);
    const SmgParams p{u, v, a.sigma2};
    validate(p);
    x = smg_sample(p, rng);
    save_dense_csv((dir / "u.csv").string(), u.matrix());
    save_dense_csv((dir / "v.csv").string(), v.matrix());
  }

  MaskSpec spec = McarMask{0.2};
  if (a.n_obs) spec = uniform_subset(x.rows(), x.cols(), *a.n_obs, rng);
  if (a.p) spec = McarMask{*a.p};
  if (a.mnar) spec = MnarIntensityMask::median_scheme();
  const ObservationSet obs = apply_mask(x, spec, a.eta, rng);
  save_dense_csv((dir / "truth.csv").string(), x);
  save_triplets((dir / "observations.csv").string(), obs);
  out << "simulate: " << x.rows() << "x" << x.cols() << ", " << obs.size() << " observed, outputs in "
      << dir.string() << '\n';
  return 0;
}

struct CoherenceArgs {
  std::string frame_path;
  std::string matrix_path;
  std::optional<Index> rank;
  std::string side = "row";
  std::string out_dir = ".";
};

inline int run_coherence(const CoherenceArgs& a, std::ostream& out) {
  detail::require_domain(a.frame_path.empty() != a.matrix_path.empty(), "give exactly one of --frame, --matrix");
  detail::require_domain(a.side == "row" || a.side == "col", "--side must be row or col");
  Frame f;
  if (!a.frame_path.empty()) {
    f = Frame(load_dense_csv(a.frame_path));
  } else {
    const Matrix m = load_dense_csv(a.matrix_path);
    detail::require_domain(a.rank.has_value(), "--matrix needs --rank");
    const SvdResult dec = svd(m, *a.rank);
    f = a.side == "row" ? dec.u : dec.v;
  }
  std::filesystem::path dir(a.out_dir);
  std::filesystem::create_directories(dir);
  const Index m = f.ambient();
  const Vector mu = coherences(f);
  Matrix cross(m, m);
  for (Index i = 0; i < m; ++i) {
    for (Index k = 0; k < m; ++k) cross(i, k) = cross_coherence(f, i, k);
  }
  {
    auto os = detail::open_out((dir / "coherence.csv").string());
    os << "i,mu\n";
    for (Index i = 0; i < m; ++i) os << i << ',' << detail::format_double(mu(i)) << '\n';
  }
  save_dense_csv((dir / "cross_coherence.csv").string(), cross);
  // For each row, the other row whose projection aligns best with it.
  {
    auto os = detail::open_out((dir / "alignment.csv").string());
    os << "i,best,cross_coherence\n";
    for (Index i = 0; i < m; ++i) {
      Index best = -1;
      for (Index k = 0; k < m; ++k) {
        if (k != i && (best < 0 || std::abs(cross(i, k)) > std::abs(cross(i, best)))) best = k;
      }
      os << i << ',' << best << ',' << (best < 0 ? std::string("nan") : detail::format_double(cross(i, best)))
         << '\n';
    }
  }
  Index arg = 0;
  mu.maxCoeff(&arg);
  out << "coherence: m=" << m << " R=" << f.rank() << " mu=" << detail::format_double(mu(arg)) << " at row " << arg
      << ", outputs in " << dir.string() << '\n';
  return 0;
}

struct ReplicateArgs {
  std::string name;
  int reps = 0;
  std::uint64_t seed = 0;
  int iters = 0;
  int burn_in = -1;
  unsigned threads = 0;
  std::string out_dir = ".";
};

inline int run_replicate(const ReplicateArgs& a, std::ostream& out) {
  ExperimentOptions o;
  o.reps = a.reps;
  o.seed = a.seed;
  o.iters = a.iters;
  o.burn_in = a.burn_in;
  o.threads = a.threads;
  const ResultTable t = run_experiment(a.name, o);
  std::filesystem::path dir(a.out_dir);
  std::filesystem::create_directories(dir);
  const auto path = (dir / (a.name + ".csv")).string();
  {
    auto os = detail::open_out(path);
    t.write_csv(os);
    if (!os) throw IoError(path + ": write failed");
  }
  out << experiment_summary(a.name, t) << '\n';
  return 0;
}

inline std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

}  // namespace cli

/// Parses argv and runs the chosen subcommand. Exit codes: 0 success,
/// 1 runtime failure (one `error: ...` line on err), 2 usage error.
inline int cli_dispatch(int argc, const char* const* argv, std::ostream& out = std::cout,
                        std::ostream& err = std::cerr) {
  CLI::App app{"Bayesian matrix completion on subspaces (BayeSMG)", "bayesmg"};
  app.require_subcommand(1);

  cli::CompleteArgs complete;
  cli::CompleteArgs bpmf;
  for (auto [name, args, desc] : {std::tuple{"complete", &complete, "run the BayeSMG sampler on triplet observations"},
                                  std::tuple{"bpmf", &bpmf, "run the BPMF baseline on triplet observations"}}) {
    auto* sub = app.add_subcommand(name, desc);
    sub->add_option("--obs", args->obs_path, "triplet CSV i,j,value (0-based)")->required()->check(CLI::ExistingFile);
    sub->add_option("--truth", args->truth_path, "dense CSV ground truth for metrics")->check(CLI::ExistingFile);
    sub->add_option("--m1", args->m1, "grid rows (default: truth rows or max index + 1)");
    sub->add_option("--m2", args->m2, "grid columns");
    sub->add_option("--trace-entry", args->trace_entries, "entry i,j to trace (repeatable)");
    sub->add_flag("--save-samples", args->save_samples, "write samples.bin");
    cli::add_run_flags(sub, args->run);
  }

  cli::SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "generate SMG ground truth and a noisy observation mask");
  s->add_option("--m", sim.m, "rows");
  s->add_option("--n", sim.n, "columns (default: --m)");
  s->add_option("--rank", sim.rank, "rank R");
  s->add_option("--sigma2", sim.sigma2, "SMG variance");
  s->add_option("--eta", sim.eta, "noise standard deviation");
  s->add_option("--n-obs", sim.n_obs, "observe exactly this many uniformly chosen entries");
  s->add_option("--p", sim.p, "MCAR observation probability (default 0.2)");
  s->add_flag("--mnar", sim.mnar, "intensity-band MNAR mask (40% above median, 25% at, 10% below)");
  s->add_option("--frames", sim.frames, "subspace law: uniform01 or haar");
  s->add_option("--image", sim.image, "binary PGM used as truth (normalized)")->check(CLI::ExistingFile);
  s->add_option("--seed", sim.seed, "seed");
  s->add_option("--out-dir", sim.out_dir, "output directory");

  cli::CoherenceArgs coh;
  auto* c = app.add_subcommand("coherence", "coherence and cross-coherence tables");
  c->add_option("--frame", coh.frame_path, "dense CSV m x R orthonormal frame")->check(CLI::ExistingFile);
  c->add_option("--matrix", coh.matrix_path, "dense CSV matrix; frame from its rank-R SVD")->check(CLI::ExistingFile);
  c->add_option("--rank", coh.rank, "rank for --matrix");
  c->add_option("--side", coh.side, "row or col subspace of --matrix");
  c->add_option("--out-dir", coh.out_dir, "output directory");
  std::uint64_t coh_seed = 0;
  c->add_option("--seed", coh_seed, "accepted for uniformity; coherence is deterministic");

  cli::ReplicateArgs rep;
  auto* r = app.add_subcommand("replicate", "run a named experiment");
  r->add_option("name", rep.name, "coverage-8x8 | synthetic-24 | noise-sweep | mnar-robustness")
      ->required()
      ->check(CLI::IsMember(experiment_names()));
  r->add_option("--reps", rep.reps, "replications (default per experiment)");
  r->add_option("--seed", rep.seed, "base seed");
  r->add_option("--iters", rep.iters, "iterations per chain (default per experiment)");
  r->add_option("--burn-in", rep.burn_in, "burn-in (default 20% of iters)");
  r->add_option("--threads", rep.threads, "worker threads (0: hardware concurrency)");
  r->add_option("--out-dir", rep.out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "usage error: " << cli::one_line(e.what()) << '\n' << app.help();
    return 2;
  }

  try {
    if (app.got_subcommand("complete")) return cli::run_complete(complete, false, out);
    if (app.got_subcommand("bpmf")) return cli::run_complete(bpmf, true, out);
    if (app.got_subcommand("simulate")) return cli::run_simulate(sim, out);
    if (app.got_subcommand("coherence")) return cli::run_coherence(coh, out);
    if (app.got_subcommand("replicate")) return cli::run_replicate(rep, out);
  } catch (const std::exception& e) {
    err << "error: " << cli::one_line(e.what()) << '\n';
    return 1;
  }
  return 2;
}

}  // namespace bayesmg
