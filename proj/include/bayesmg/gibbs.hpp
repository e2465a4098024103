#pragma once

// Gibbs sampler over (U, D, V, sigma2, eta2) with missing-data imputation.
// Each iteration imputes the unobserved noisy entries from the current
// X = U diag(D) V^T, then draws U, V, D, sigma2 and (optionally) eta2 from
// their full conditionals in that order.

#include <cmath>
#include <cstdint>
#include <future>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "bayesmg/errors.hpp"
#include "bayesmg/linalg.hpp"
#include "bayesmg/log.hpp"
#include "bayesmg/map_init.hpp"
#include "bayesmg/observations.hpp"
#include "bayesmg/rng.hpp"
#include "bayesmg/samplers.hpp"

namespace bayesmg {

struct Hyperparams {
  Index rank = 2;
  Matrix f1;  // m1 x R concentration; empty means zero
  Matrix f2;  // m2 x R concentration; empty means zero
  double alpha_sigma2 = 0.01;
  double beta_sigma2 = 0.01;
  double alpha_eta2 = 0.01;
  double beta_eta2 = 0.01;
};

/// Noise variance handling: held fixed at a known value, or sampled.
struct Eta2Mode {
  bool sampled = true;
  double value = 0.0;  // used when !sampled

  static Eta2Mode fixed(double v) { return {false, v}; }
  static Eta2Mode sample() { return {true, 0.0}; }
};

struct GibbsConfig {
  int total_iters = 10000;
  int burn_in = 2000;
  int thin = 1;
  Eta2Mode eta2;
  int n_chains = 1;
  std::uint64_t seed = 0;
  RepulsedNormalOptions d_sampler;
  VmfOptions vmf;

  /// Burn-in set to 20% of the iterations.
  static GibbsConfig with_iters(int total) {
    GibbsConfig cfg;
    cfg.total_iters = total;
    cfg.burn_in = total / 5;
    return cfg;
  }
};

struct ModelState {
  Frame u;
  Vector d;
  Frame v;
  double sigma2 = 1.0;
  double eta2 = 1.0;

  Matrix x() const { return u.matrix() * d.asDiagonal() * v.matrix().transpose(); }
};

struct SamplerCounters {
  MhStats d_mh;
  VmfStats vmf;
  std::size_t tie_jitters = 0;

  void merge(const SamplerCounters& o) {
    d_mh.proposed += o.d_mh.proposed;
    d_mh.accepted += o.d_mh.accepted;
    vmf.vector_proposals += o.vmf.vector_proposals;
    vmf.matrix_proposals += o.vmf.matrix_proposals;
    vmf.gibbs_fallbacks += o.vmf.gibbs_fallbacks;
    tie_jitters += o.tie_jitters;
  }
};

/// Retained (post burn-in, thinned) draws, chains concatenated in order.
struct PosteriorSamples {
  std::vector<ModelState> states;
  std::vector<Matrix> x_samples;
  std::vector<int> chain;      // chain id of each retained draw
  std::vector<int> iteration;  // 1-based iteration of each retained draw
  int n_chains = 1;
  SamplerCounters counters;

  std::size_t size() const { return x_samples.size(); }

  Matrix mean() const {
    detail::require_domain(!x_samples.empty(), "posterior: no samples");
    Matrix acc = Matrix::Zero(x_samples.front().rows(), x_samples.front().cols());
    for (const auto& x : x_samples) acc += x;
    return acc / static_cast<double>(x_samples.size());
  }

  std::vector<Frame> row_frames() const {
    std::vector<Frame> out;
    out.reserve(states.size());
    for (const auto& s : states) out.push_back(s.u);
    return out;
  }

  std::vector<Frame> col_frames() const {
    std::vector<Frame> out;
    out.reserve(states.size());
    for (const auto& s : states) out.push_back(s.v);
    return out;
  }

  /// Scalar trace of one chain.
  template <class Fn>
  std::vector<double> chain_trace(int c, Fn&& summary) const {
    std::vector<double> out;
    for (std::size_t t = 0; t < states.size(); ++t) {
      if (chain[t] == c) out.push_back(summary(states[t], x_samples[t]));
    }
    return out;
  }
};

/// Shape/rate of an inverse-gamma full conditional.
struct IgParams {
  double shape = 1.0;
  double rate = 1.0;
};

inline void validate(const Hyperparams& h) {
  detail::require_domain(h.rank >= 1, "hyperparams: rank must be >= 1");
  detail::require_domain(h.alpha_sigma2 > 0.0 && h.beta_sigma2 > 0.0 && h.alpha_eta2 > 0.0 && h.beta_eta2 > 0.0,
                         "hyperparams: inverse-gamma parameters must be positive");
}

inline void validate(const GibbsConfig& cfg) {
  detail::require_domain(cfg.total_iters >= 1, "gibbs: total_iters must be >= 1");
  detail::require_domain(cfg.burn_in >= 0 && cfg.burn_in < cfg.total_iters, "gibbs: need 0 <= burn_in < T");
  detail::require_domain(cfg.thin >= 1, "gibbs: thin must be >= 1");
  detail::require_domain(cfg.n_chains >= 1, "gibbs: n_chains must be >= 1");
  detail::require_domain(cfg.eta2.sampled || (cfg.eta2.value >= 0.0 && std::isfinite(cfg.eta2.value)),
                         "gibbs: fixed eta2 must be non-negative");
}

/// MF concentration for U: Y V diag(D) / eta2 + F1.
inline VmfParams u_conditional(const Matrix& y, const Frame& v, const Vector& d, double eta2, const Matrix& f1) {
  Matrix f = (y * v.matrix() * d.asDiagonal()) / eta2;
  if (f1.size() > 0) f += f1;
  return {std::move(f)};
}

/// MF concentration for V: Y^T U diag(D) / eta2 + F2.
inline VmfParams v_conditional(const Matrix& y, const Frame& u, const Vector& d, double eta2, const Matrix& f2) {
  Matrix f = (y.transpose() * u.matrix() * d.asDiagonal()) / eta2;
  if (f2.size() > 0) f += f2;
  return {std::move(f)};
}

/// RN(sigma2 diag(U^T Y V) / (eta2 + sigma2), eta2 sigma2 / (eta2 + sigma2)).
inline RepulsedNormalParams d_conditional(const Matrix& y, const Frame& u, const Frame& v, double sigma2,
                                          double eta2) {
  const Vector proj = (u.matrix().transpose() * y * v.matrix()).diagonal();
  return {sigma2 * proj / (eta2 + sigma2), eta2 * sigma2 / (eta2 + sigma2)};
}

/// IG(alpha + R/2, beta + tr(D^2)/2).
inline IgParams sigma2_conditional(const Vector& d, const Hyperparams& h) {
  return {h.alpha_sigma2 + 0.5 * static_cast<double>(d.size()), h.beta_sigma2 + 0.5 * d.squaredNorm()};
}

/// IG(alpha + m1 m2 / 2, beta + ||Y - U D V^T||_F^2 / 2).
inline IgParams eta2_conditional(const Matrix& y, const Frame& u, const Vector& d, const Frame& v,
                                 const Hyperparams& h) {
  const Matrix resid = y - u.matrix() * d.asDiagonal() * v.matrix().transpose();
  return {h.alpha_eta2 + 0.5 * static_cast<double>(y.size()), h.beta_eta2 + 0.5 * resid.squaredNorm()};
}

namespace detail {

/// Nudge values that collide within 1e-12 apart by 1e-9 * max(d).
inline std::size_t separate_ties(Vector& d) {
  std::size_t jitters = 0;
  const double bump = 1e-9 * std::max(d.maxCoeff(), 1e-300);
  for (Index k = 0; k < d.size(); ++k) {
    for (Index l = k + 1; l < d.size(); ++l) {
      if (std::abs(d(k) - d(l)) < 1e-12) {
        d(l) += bump * static_cast<double>(l - k);
        ++jitters;
      }
    }
  }
  if (jitters > 0) log_warning("gibbs: separated " + std::to_string(jitters) + " tied singular value(s)");
  return jitters;
}

inline void check_state(const ModelState& s) {
  require_domain(!s.u.empty() && !s.v.empty() && s.u.rank() == s.v.rank() && s.d.size() == s.u.rank(),
                 "gibbs: inconsistent state dimensions");
  require_domain((s.d.array() > 0.0).all(), "gibbs: singular values must be positive");
  require_domain(s.sigma2 > 0.0 && std::isfinite(s.sigma2), "gibbs: sigma2 must be positive");
}

}  // namespace detail

/// Initial state: cross-validated soft-impute, rank-R truncated SVD,
/// sigma2 from its prior (clamped to [1e-8, 1e8]), eta2 fixed or estimated
/// from the observed-entry residual of the rank-R fit.
inline ModelState init_state(const ObservationSet& obs, const Hyperparams& hyper, const GibbsConfig& cfg,
                             const SolverConfig& solver, RngStream& rng) {
  validate(hyper);
  validate(cfg);
  detail::require_domain(!obs.empty(), "init_state: no observations");
  detail::require_domain(hyper.rank < std::min(obs.rows(), obs.cols()), "init_state: need R < min(m1, m2)");

  SolverConfig fit = solver;
  fit.lambda = (solver.lambda_grid.size() == 1) ? solver.lambda_grid.front() : cv_select_lambda(obs, solver, rng);
  const Matrix x0 = soft_impute(obs, fit).x;
  SvdResult dec = svd(x0, hyper.rank);

  ModelState s;
  s.u = dec.u;
  s.v = dec.v;
  s.d = dec.d;
  double top = s.d(0);
  if (!(top > 0.0)) top = std::max(std::sqrt(obs.values().squaredNorm() / static_cast<double>(obs.size())), 1e-12);
  const double floor = 1e-6 * top;
  for (Index k = 0; k < s.d.size(); ++k) {
    if (s.d(k) < floor) s.d(k) = floor * (1.0 + 0.5 * static_cast<double>(s.d.size() - k));
  }
  detail::separate_ties(s.d);

  s.sigma2 = std::clamp(sample_inverse_gamma(hyper.alpha_sigma2, hyper.beta_sigma2, rng), 1e-8, 1e8);
  if (cfg.eta2.sampled) {
    const Matrix xr = s.x();
    double sse = 0.0;
    for (const auto& e : obs.entries()) {
      const double r = e.value - xr(e.index.i, e.index.j);
      sse += r * r;
    }
    s.eta2 = std::max(sse / static_cast<double>(obs.size()), 1e-6 * top * top / static_cast<double>(obs.size()));
  } else {
    s.eta2 = cfg.eta2.value;
  }
  return s;
}

/// Complete noisy matrix: Y_Omega verbatim, X_ij + N(0, eta2) elsewhere.
inline Matrix impute_missing(const ModelState& state, const ObservationSet& obs, RngStream& rng) {
  detail::require_dims(state.u.ambient() == obs.rows() && state.v.ambient() == obs.cols(), "impute: grid mismatch");
  detail::require_domain(state.eta2 >= 0.0, "impute: eta2 must be non-negative");
  Matrix y = state.x();
  const double sd = std::sqrt(state.eta2);
  for (Index j = 0; j < y.cols(); ++j) {
    for (Index i = 0; i < y.rows(); ++i) {
      if (!obs.contains({i, j})) y(i, j) += sd * rng.normal();
    }
  }
  for (const auto& e : obs.entries()) y(e.index.i, e.index.j) = e.value;
  return y;
}

/// One pass over the full conditionals given a complete noisy matrix.
inline ModelState gibbs_sweep(const ModelState& state, const Matrix& y_full, const Hyperparams& hyper,
                              const GibbsConfig& cfg, RngStream& rng, SamplerCounters* counters = nullptr) {
  detail::check_state(state);
  detail::require_dims(y_full.rows() == state.u.ambient() && y_full.cols() == state.v.ambient(),
                       "gibbs_sweep: data shape mismatch");
  detail::require_domain(state.eta2 > 0.0 && std::isfinite(state.eta2), "gibbs_sweep: eta2 must be positive");

  SamplerCounters local;
  ModelState next;
  next.u = update_frame_vmf(u_conditional(y_full, state.v, state.d, state.eta2, hyper.f1), state.u, rng, cfg.vmf, &local.vmf);
  next.v = update_frame_vmf(v_conditional(y_full, next.u, state.d, state.eta2, hyper.f2), state.v, rng, cfg.vmf, &local.vmf);
  next.d = sample_repulsed_normal(d_conditional(y_full, next.u, next.v, state.sigma2, state.eta2), rng, state.d,
                                  cfg.d_sampler, &local.d_mh);
  local.tie_jitters += detail::separate_ties(next.d);
  const IgParams s2 = sigma2_conditional(next.d, hyper);
  next.sigma2 = sample_inverse_gamma(s2.shape, s2.rate, rng);
  if (cfg.eta2.sampled) {
    const IgParams e2 = eta2_conditional(y_full, next.u, next.d, next.v, hyper);
    next.eta2 = sample_inverse_gamma(e2.shape, e2.rate, rng);
  } else {
    next.eta2 = state.eta2;
  }
  if (counters) counters->merge(local);
  return next;
}

namespace detail {

inline PosteriorSamples run_single_chain(const ObservationSet& obs, const Hyperparams& hyper, const GibbsConfig& cfg,
                                         const SolverConfig& solver, int chain_id) {
  RngStream rng(cfg.seed + static_cast<std::uint64_t>(chain_id));
  PosteriorSamples out;
  ModelState state = init_state(obs, hyper, cfg, solver, rng);
  for (int t = 1; t <= cfg.total_iters; ++t) {
    try {
      const Matrix y = impute_missing(state, obs, rng);
      state = gibbs_sweep(state, y, hyper, cfg, rng, &out.counters);
    } catch (const std::exception& ex) {
      throw NumericalError("chain " + std::to_string(chain_id) + " aborted at iteration " + std::to_string(t) + ": " +
                           ex.what());
    }
    if (t > cfg.burn_in && (t - cfg.burn_in) % cfg.thin == 0) {
      out.x_samples.push_back(state.x());
      out.states.push_back(state);
      out.chain.push_back(chain_id);
      out.iteration.push_back(t);
    }
  }
  return out;
}

}  // namespace detail

/// Full sampler. Chain c is seeded with cfg.seed + c; chains run
/// concurrently and are concatenated in chain order.
inline PosteriorSamples run_chain(const ObservationSet& obs, const Hyperparams& hyper, const GibbsConfig& cfg,
                                  const SolverConfig& solver = {}) {
  validate(hyper);
  validate(cfg);
  detail::require_domain(cfg.eta2.sampled || cfg.eta2.value > 0.0, "gibbs: fixed eta2 must be positive to sample");
  std::vector<PosteriorSamples> parts;
  if (cfg.n_chains == 1) {
    parts.push_back(detail::run_single_chain(obs, hyper, cfg, solver, 0));
  } else {
    std::vector<std::future<PosteriorSamples>> jobs;
    for (int c = 0; c < cfg.n_chains; ++c) {
      jobs.push_back(std::async(std::launch::async, detail::run_single_chain, std::cref(obs), std::cref(hyper),
                                std::cref(cfg), std::cref(solver), c));
    }
    for (auto& j : jobs) parts.push_back(j.get());
  }

  PosteriorSamples out;
  out.n_chains = cfg.n_chains;
  for (auto& p : parts) {
    out.counters.merge(p.counters);
    for (std::size_t t = 0; t < p.size(); ++t) {
      out.states.push_back(std::move(p.states[t]));
      out.x_samples.push_back(std::move(p.x_samples[t]));
      out.chain.push_back(p.chain[t]);
      out.iteration.push_back(p.iteration[t]);
    }
  }
  if (out.counters.d_mh.flagged()) {
    log_warning("gibbs: D acceptance rate " + std::to_string(out.counters.d_mh.rate()) + " outside [0.05, 0.95]");
  }
  return out;
}

}  // namespace bayesmg
