#pragma once

// Ground-truth generators, the plug-in interval baseline, and the named
// desk-scale replication studies driven by `replicate`.

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <atomic>
#include <exception>
#include <cstdint>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "bayesmg/bpmf.hpp"
#include "bayesmg/diagnostics.hpp"
#include "bayesmg/errors.hpp"
#include "bayesmg/gibbs.hpp"
#include "bayesmg/io.hpp"
#include "bayesmg/map_init.hpp"
#include "bayesmg/mask.hpp"
#include "bayesmg/smg.hpp"

namespace bayesmg {

// ---------------------------------------------------------------- truths

/// Haar-uniform frame: orthonormalized Gaussian matrix.
inline Frame random_frame_haar(Index m, Index rank, RngStream& rng) {
  Matrix g(m, rank);
  for (Index j = 0; j < rank; ++j) {
    for (Index i = 0; i < m; ++i) g(i, j) = rng.normal();
  }
  return Frame::orthonormalize(g);
}

/// Leading left singular vectors of an m x m matrix of iid U[0, 1] entries.
inline Frame random_frame_uniform01(Index m, Index rank, RngStream& rng) {
  Matrix a(m, m);
  for (Index j = 0; j < m; ++j) {
    for (Index i = 0; i < m; ++i) a(i, j) = rng.uniform();
  }
  return svd(a, rank).u;
}

/// Smooth rank-R matrix scaled to unit root-mean-square: random-walk
/// factors with decaying weights, a stand-in for low-rank image texture.
inline Matrix planted_texture(Index m1, Index m2, Index rank, RngStream& rng) {
  auto walk = [&](Index m) {
    Matrix f(m, rank);
    for (Index k = 0; k < rank; ++k) {
      double acc = 0.0;
      for (Index i = 0; i < m; ++i) {
        acc += rng.normal();
        f(i, k) = acc;
      }
      f.col(k).array() -= f.col(k).mean();
    }
    return f;
  };
  const Frame u = Frame::orthonormalize(walk(m1));
  const Frame v = Frame::orthonormalize(walk(m2));
  Vector s(rank);
  for (Index k = 0; k < rank; ++k) s(k) = 1.0 / static_cast<double>(k + 1);
  Matrix x = u.matrix() * s.asDiagonal() * v.matrix().transpose();
  return x / std::sqrt(x.squaredNorm() / static_cast<double>(x.size()));
}

// ------------------------------------------------------- plug-in baseline

struct PluginOptions {
  Index rank = 2;
  std::optional<double> sigma2;  // absent: ||X_hat||_F^2 / R^2
  SolverConfig solver;
};

struct PluginResult {
  IntervalSet intervals;
  Matrix mean;
  Frame u, v;
  double sigma2 = 1.0;
};

/// Nuclear-norm completion, rank-R subspaces from its SVD treated as truth,
/// then Gaussian intervals mean +- z sd from the fixed-subspace conditional.
inline PluginResult plugin_interval_baseline(const ObservationSet& obs, double eta2, double level,
                                             const PluginOptions& opts, RngStream& rng) {
  detail::require_domain(!obs.empty(), "plugin: no observations");
  detail::require_domain(level > 0.0 && level < 1.0, "plugin: level must lie in (0, 1)");
  SolverConfig fit = opts.solver;
  fit.lambda = fit.lambda_grid.size() == 1 ? fit.lambda_grid.front() : cv_select_lambda(obs, fit, rng);
  const Matrix x_hat = soft_impute(obs, fit).x;
  const SvdResult dec = svd(x_hat, opts.rank);

  PluginResult out{{}, {}, dec.u, dec.v, 1.0};
  out.sigma2 = opts.sigma2.value_or(std::max(x_hat.squaredNorm() / static_cast<double>(opts.rank * opts.rank), 1e-12));
  const SmgParams p{dec.u, dec.v, out.sigma2};

  std::vector<EntryIndex> all;
  for (Index j = 0; j < obs.cols(); ++j) {
    for (Index i = 0; i < obs.rows(); ++i) all.push_back({i, j});
  }
  const auto cp = conditional_predictive(obs, p, eta2, all);
  const double z = boost::math::quantile(boost::math::normal(), 0.5 + 0.5 * level);
  out.mean.resize(obs.rows(), obs.cols());
  out.intervals = {Matrix(obs.rows(), obs.cols()), Matrix(obs.rows(), obs.cols()), level};
  for (std::size_t k = 0; k < all.size(); ++k) {
    const auto [i, j] = all[k];
    const auto kk = static_cast<Index>(k);
    const double half = z * std::sqrt(std::max(cp.cov(kk, kk), 0.0));
    out.mean(i, j) = cp.mean(kk);
    out.intervals.lower(i, j) = cp.mean(kk) - half;
    out.intervals.upper(i, j) = cp.mean(kk) + half;
  }
  return out;
}

// ------------------------------------------------------------ harness

/// Rows of named numeric columns, written as CSV with shortest round-trip
/// number formatting.
struct ResultTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  void write_csv(std::ostream& os) const {
    for (std::size_t c = 0; c < columns.size(); ++c) os << (c ? "," : "") << columns[c];
    os << '\n';
    for (const auto& r : rows) {
      for (std::size_t c = 0; c < r.size(); ++c) os << (c ? "," : "") << detail::format_double(r[c]);
      os << '\n';
    }
  }

  std::string csv() const {
    std::ostringstream os;
    write_csv(os);
    return os.str();
  }

  double column_mean(const std::string& name) const {
    const auto it = std::find(columns.begin(), columns.end(), name);
    detail::require_domain(it != columns.end(), "table: unknown column " + name);
    const auto c = static_cast<std::size_t>(it - columns.begin());
    double acc = 0.0;
    for (const auto& r : rows) acc += r[c];
    return rows.empty() ? 0.0 : acc / static_cast<double>(rows.size());
  }
};

struct ExperimentOptions {
  int reps = 0;              // 0: experiment default
  std::uint64_t seed = 0;
  int iters = 0;             // 0: experiment default
  int burn_in = -1;          // -1: 20% of iters
  unsigned threads = 0;      // 0: hardware concurrency

  int iters_or(int d) const { return iters > 0 ? iters : d; }
  int reps_or(int d) const { return reps > 0 ? reps : d; }
  int burn_for(int total) const { return burn_in >= 0 ? burn_in : total / 5; }
};

namespace detail {

/// Runs fn(k) for k in [0, n) on a small thread pool; results land in
/// caller-owned slots so output order does not depend on scheduling.
inline void parallel_reps(int n, unsigned threads, const std::function<void(int)>& fn) {
  unsigned workers = threads ? threads : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(std::max(n, 1)));
  if (workers <= 1) {
    for (int k = 0; k < n; ++k) fn(k);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int k = next++; k < n; k = next++) fn(k);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline GibbsConfig experiment_gibbs(const ExperimentOptions& o, int default_iters, double eta2, std::uint64_t seed) {
  GibbsConfig cfg;
  cfg.total_iters = o.iters_or(default_iters);
  cfg.burn_in = o.burn_for(cfg.total_iters);
  cfg.eta2 = Eta2Mode::fixed(eta2);
  cfg.seed = seed;
  return cfg;
}

struct RankFit {
  Index rank = 1;
  SolverConfig solver;  // lambda pinned to the cross-validated choice
};

/// Rank from the MAP-style rule applied to a cross-validated soft-impute
/// fit. The returned solver reuses the selected lambda so the chain's
/// initialization does not repeat the cross-validation.
inline RankFit estimated_rank(const ObservationSet& obs, const SolverConfig& solver, RngStream& rng) {
  RankFit out;
  out.solver = solver;
  out.solver.lambda = cv_select_lambda(obs, solver, rng);
  out.solver.lambda_grid = {out.solver.lambda};
  out.rank = estimate_rank(soft_impute(obs, out.solver).x, solver.rank_tol);
  return out;
}

}  // namespace detail

/// 8 x 8, R = 2, sigma2 = 1, eta = 0.5, 36 uniformly chosen entries;
/// BayeSMG HPD intervals vs plug-in Gaussian intervals.
inline ResultTable experiment_coverage_8x8(const ExperimentOptions& o) {
  const int reps = o.reps_or(50);
  ResultTable t;
  t.columns = {"rep",        "bayes_coverage",     "bayes_coverage_unobserved", "plugin_coverage",
               "plugin_coverage_unobserved", "bayes_mfe", "bayes_mean_width",   "plugin_mean_width"};
  t.rows.assign(static_cast<std::size_t>(reps), {});
  detail::parallel_reps(reps, o.threads, [&](int rep) {
    RngStream rng = RngStream(o.seed).derive(static_cast<std::uint64_t>(rep));
    const Index m = 8;
    const SmgParams truth{random_frame_uniform01(m, 2, rng), random_frame_uniform01(m, 2, rng), 1.0};
    const Matrix x = smg_sample(truth, rng);
    const ObservationSet obs = apply_mask(x, uniform_subset(m, m, 36, rng), 0.5, rng);
    const auto missing = obs.missing();

    Hyperparams h;
    h.rank = 2;
    const GibbsConfig cfg = detail::experiment_gibbs(o, 10000, 0.25, rng.engine()());
    const PosteriorSamples s = run_chain(obs, h, cfg);
    const IntervalSet iv = hpd_intervals(s, 0.95);

    PluginOptions po;
    po.rank = 2;
    po.sigma2 = 1.0;
    const PluginResult pl = plugin_interval_baseline(obs, 0.25, 0.95, po, rng);

    t.rows[static_cast<std::size_t>(rep)] = {static_cast<double>(rep),
                                             coverage_ratio(iv, x),
                                             coverage_ratio(iv, x, std::span<const EntryIndex>(missing)),
                                             coverage_ratio(pl.intervals, x),
                                             coverage_ratio(pl.intervals, x, std::span<const EntryIndex>(missing)),
                                             mfe(s, x),
                                             iv.width().mean(),
                                             pl.intervals.width().mean()};
  });
  return t;
}

/// 24 x 24 SMG truth (Haar subspaces, sigma2 = 1, R = 2), 20% MCAR,
/// eta = 0.05 treated as known; BayeSMG vs BPMF on identical data.
inline ResultTable experiment_synthetic_24(const ExperimentOptions& o) {
  const int reps = o.reps_or(10);
  ResultTable t;
  t.columns = {"rep",          "bayes_mfe",     "bpmf_mfe",       "bayes_msd_row", "bpmf_msd_row",
               "bayes_msd_col", "bpmf_msd_col", "bayes_mean_width", "bpmf_mean_width"};
  t.rows.assign(static_cast<std::size_t>(reps), {});
  detail::parallel_reps(reps, o.threads, [&](int rep) {
    RngStream rng = RngStream(o.seed).derive(static_cast<std::uint64_t>(rep));
    const Index m = 24;
    const Index r = 2;
    const double eta = 0.05;
    const SmgParams truth{random_frame_haar(m, r, rng), random_frame_haar(m, r, rng), 1.0};
    const Matrix x = smg_sample(truth, rng);
    const ObservationSet obs = apply_mask(x, McarMask{0.2}, eta, rng);

    Hyperparams h;
    h.rank = r;
    const GibbsConfig cfg = detail::experiment_gibbs(o, 10000, eta * eta, rng.engine()());
    const PosteriorSamples s = run_chain(obs, h, cfg);

    BpmfHyper bh;
    bh.rank = r;
    bh.nu = static_cast<double>(r) + 2.0;
    bh.eta2 = Eta2Mode::fixed(eta * eta);
    const PosteriorSamples b = run_bpmf(obs, bh, cfg);

    const auto rows_b = s.row_frames();
    const auto rows_p = b.row_frames();
    const auto cols_b = s.col_frames();
    const auto cols_p = b.col_frames();
    t.rows[static_cast<std::size_t>(rep)] = {static_cast<double>(rep),
                                             mfe(s, x),
                                             mfe(b, x),
                                             msd(rows_b, truth.u),
                                             msd(rows_p, truth.u),
                                             msd(cols_b, truth.v),
                                             msd(cols_p, truth.v),
                                             hpd_intervals(s, 0.95).width().mean(),
                                             hpd_intervals(b, 0.95).width().mean()};
  });
  return t;
}

/// 32 x 32 rank-3 texture, 50% MCAR, noise levels 0.05..0.5 treated as
/// known, rank estimated from the data.
inline ResultTable experiment_noise_sweep(const ExperimentOptions& o) {
  const std::vector<double> etas{0.05, 0.1, 0.3, 0.5};
  const int reps = o.reps_or(5);
  ResultTable t;
  t.columns = {"eta", "rep", "rank", "mfe", "posterior_mean_error", "mean_width"};
  const int jobs = reps * static_cast<int>(etas.size());
  t.rows.assign(static_cast<std::size_t>(jobs), {});
  detail::parallel_reps(jobs, o.threads, [&](int job) {
    const int level = job / reps;
    const int rep = job % reps;
    const double eta = etas[static_cast<std::size_t>(level)];
    // The truth and mask depend on rep only, so noise levels are paired.
    RngStream rng = RngStream(o.seed).derive(static_cast<std::uint64_t>(rep));
    const Matrix x = planted_texture(32, 32, 3, rng);
    RngStream noise = rng.derive(static_cast<std::uint64_t>(level));
    const ExplicitMask mask = uniform_subset(32, 32, 512, rng);
    const ObservationSet obs = apply_mask(x, mask, eta, noise);

    Hyperparams h;
    const detail::RankFit rf = detail::estimated_rank(obs, {}, noise);
    h.rank = rf.rank;
    const GibbsConfig cfg = detail::experiment_gibbs(o, 2000, eta * eta, noise.engine()());
    const PosteriorSamples s = run_chain(obs, h, cfg, rf.solver);
    t.rows[static_cast<std::size_t>(job)] = {eta,
                                             static_cast<double>(rep),
                                             static_cast<double>(h.rank),
                                             mfe(s, x),
                                             (s.mean() - x).norm(),
                                             hpd_intervals(s, 0.95).width().mean()};
  });
  return t;
}

/// 32 x 32 rank-3 texture: intensity-band MNAR (40% above the median, 25%
/// at it, 10% below) vs MCAR with the same number of observed entries.
inline ResultTable experiment_mnar_robustness(const ExperimentOptions& o) {
  const int reps = o.reps_or(20);
  const double eta = 0.05;
  ResultTable t;
  t.columns = {"rep", "observed", "mnar_rank", "mcar_rank", "mnar_mfe", "mcar_mfe"};
  t.rows.assign(static_cast<std::size_t>(reps), {});
  detail::parallel_reps(reps, o.threads, [&](int rep) {
    RngStream rng = RngStream(o.seed).derive(static_cast<std::uint64_t>(rep));
    const Matrix x = planted_texture(32, 32, 3, rng);
    const ObservationSet mnar = apply_mask(x, MnarIntensityMask::median_scheme(), eta, rng);
    const ObservationSet mcar =
        apply_mask(x, uniform_subset(32, 32, static_cast<Index>(mnar.size()), rng), eta, rng);

    auto fit = [&](const ObservationSet& obs, Index& rank_out) {
      Hyperparams h;
      const detail::RankFit rf = detail::estimated_rank(obs, {}, rng);
      h.rank = rf.rank;
      rank_out = h.rank;
      const GibbsConfig cfg = detail::experiment_gibbs(o, 2000, eta * eta, rng.engine()());
      return mfe(run_chain(obs, h, cfg, rf.solver), x);
    };
    Index r_mnar = 0;
    Index r_mcar = 0;
    const double e_mnar = fit(mnar, r_mnar);
    const double e_mcar = fit(mcar, r_mcar);
    t.rows[static_cast<std::size_t>(rep)] = {static_cast<double>(rep), static_cast<double>(mnar.size()),
                                             static_cast<double>(r_mnar), static_cast<double>(r_mcar),
                                             e_mnar, e_mcar};
  });
  return t;
}

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"coverage-8x8", "synthetic-24", "noise-sweep", "mnar-robustness"};
  return names;
}

inline ResultTable run_experiment(const std::string& name, const ExperimentOptions& o) {
  if (name == "coverage-8x8") return experiment_coverage_8x8(o);
  if (name == "synthetic-24") return experiment_synthetic_24(o);
  if (name == "noise-sweep") return experiment_noise_sweep(o);
  if (name == "mnar-robustness") return experiment_mnar_robustness(o);
  throw DomainError("replicate: unknown experiment '" + name + "'");
}

/// One-line human summary of an experiment table.
inline std::string experiment_summary(const std::string& name, const ResultTable& t) {
  std::ostringstream os;
  os << name << ": ";
  if (name == "coverage-8x8") {
    os << "bayes_coverage=" << t.column_mean("bayes_coverage")
       << " plugin_coverage=" << t.column_mean("plugin_coverage");
  } else if (name == "synthetic-24") {
    int wins_mfe = 0;
    int wins_msd = 0;
    for (const auto& r : t.rows) {
      wins_mfe += r[1] < r[2] ? 1 : 0;
      wins_msd += r[3] < r[4] ? 1 : 0;
    }
    os << "bayes_mfe=" << t.column_mean("bayes_mfe") << " bpmf_mfe=" << t.column_mean("bpmf_mfe")
       << " mfe_wins=" << wins_mfe << "/" << t.rows.size() << " msd_row_wins=" << wins_msd << "/" << t.rows.size();
  } else if (name == "noise-sweep") {
    std::vector<double> etas;
    for (const auto& r : t.rows) {
      if (std::find(etas.begin(), etas.end(), r[0]) == etas.end()) etas.push_back(r[0]);
    }
    for (double e : etas) {
      double acc = 0.0;
      int n = 0;
      for (const auto& r : t.rows) {
        if (r[0] == e) {
          acc += r[3];
          ++n;
        }
      }
      os << "mfe(eta=" << e << ")=" << acc / n << ' ';
    }
  } else if (name == "mnar-robustness") {
    os << "mnar_mfe=" << t.column_mean("mnar_mfe") << " mcar_mfe=" << t.column_mean("mcar_mfe")
       << " ratio=" << t.column_mean("mnar_mfe") / t.column_mean("mcar_mfe");
  }
  return os.str();
}

}  // namespace bayesmg
