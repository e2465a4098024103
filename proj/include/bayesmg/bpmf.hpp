#pragma once

// Bayesian probabilistic matrix factorization X = M N^T with Gaussian row
// priors and Normal-Inverse-Wishart hyperpriors. Missing entries enter only
// through the rows/columns that observe them; there is no imputation step.

#include <cmath>
#include <cstdint>
#include <future>
#include <string>
#include <vector>

#include "bayesmg/errors.hpp"
#include "bayesmg/gibbs.hpp"
#include "bayesmg/linalg.hpp"
#include "bayesmg/log.hpp"
#include "bayesmg/observations.hpp"
#include "bayesmg/rng.hpp"
#include "bayesmg/samplers.hpp"

namespace bayesmg {

struct BpmfState {
  Matrix m;        // m1 x R
  Matrix n;        // m2 x R
  Vector mu_m, mu_n;
  Matrix sigma_m, sigma_n;  // row covariances
  double eta2 = 1.0;

  Matrix x() const { return m * n.transpose(); }
};

struct BpmfHyper {
  Index rank = 2;
  double beta0 = 2.0;  // mu | Sigma ~ N(mu0, Sigma / beta0)
  Matrix w;            // IW scale; empty means identity
  double nu = 0.0;     // IW degrees of freedom; <= 0 means R + 2
  Eta2Mode eta2;
  double alpha_eta2 = 0.01;
  double beta_eta2 = 0.01;

  Matrix scale() const { return w.size() > 0 ? w : Matrix::Identity(rank, rank); }
  double dof() const { return nu > 0.0 ? nu : static_cast<double>(rank) + 2.0; }
};

inline void validate(const BpmfHyper& h) {
  detail::require_domain(h.rank >= 1, "bpmf: rank must be >= 1");
  detail::require_domain(h.beta0 > 0.0, "bpmf: beta0 must be positive");
  detail::require_domain(h.dof() >= static_cast<double>(h.rank), "bpmf: need nu >= R");
  const Matrix w = h.scale();
  detail::require_dims(w.rows() == h.rank && w.cols() == h.rank, "bpmf: W must be R x R");
  detail::require_domain((w - w.transpose()).norm() <= 1e-12 * (1.0 + w.norm()) &&
                             Eigen::LLT<Matrix>(w).info() == Eigen::Success,
                         "bpmf: W must be symmetric positive-definite");
  detail::require_domain(h.alpha_eta2 > 0.0 && h.beta_eta2 > 0.0, "bpmf: IG parameters must be positive");
  detail::require_domain(h.eta2.sampled || h.eta2.value > 0.0, "bpmf: fixed eta2 must be positive");
}

/// Parameters of the Normal-Inverse-Wishart law on (mu, Sigma):
/// Sigma ~ IW(psi, nu), mu | Sigma ~ N(mean, Sigma / beta).
struct NiwParams {
  Vector mean;
  double beta = 1.0;
  Matrix psi;
  double nu = 1.0;
};

/// Conjugate update of NIW(0, beta0, W, nu) given the rows of `x`.
inline NiwParams niw_posterior(const Matrix& x, const BpmfHyper& h) {
  const double n = static_cast<double>(x.rows());
  const Index r = x.cols();
  const Vector xbar = n > 0 ? Vector(x.colwise().mean().transpose()) : Vector::Zero(r);
  const Matrix centered = x.rowwise() - xbar.transpose();
  NiwParams post;
  post.beta = h.beta0 + n;
  post.nu = h.dof() + n;
  post.mean = n * xbar / post.beta;
  post.psi = h.scale() + centered.transpose() * centered + (h.beta0 * n / post.beta) * xbar * xbar.transpose();
  post.psi = 0.5 * (post.psi + post.psi.transpose()).eval();
  return post;
}

/// Sigma ~ IW(psi, nu) through the Bartlett decomposition of its inverse,
/// Sigma^{-1} ~ Wishart(psi^{-1}, nu).
inline Matrix sample_inverse_wishart(const Matrix& psi, double nu, RngStream& rng) {
  const Index r = psi.rows();
  detail::require_domain(nu > static_cast<double>(r) - 1.0, "inverse Wishart: need nu > R - 1");
  Eigen::LLT<Matrix> psi_llt(psi);
  detail::require_domain(psi_llt.info() == Eigen::Success, "inverse Wishart: scale not positive-definite");
  const Matrix psi_inv = psi_llt.solve(Matrix::Identity(r, r));
  const Matrix l = Eigen::LLT<Matrix>(0.5 * (psi_inv + psi_inv.transpose())).matrixL();
  Matrix a = Matrix::Zero(r, r);
  for (Index k = 0; k < r; ++k) {
    a(k, k) = std::sqrt(rng.chi_squared(nu - static_cast<double>(k)));
    for (Index c = 0; c < k; ++c) a(k, c) = rng.normal();
  }
  const Matrix la = l * a;
  const Matrix precision = la * la.transpose();
  Matrix sigma = Eigen::LLT<Matrix>(precision).solve(Matrix::Identity(r, r));
  return 0.5 * (sigma + sigma.transpose());
}

/// Observed (index, value) pairs of one row (or column).
using SparseLine = std::vector<std::pair<Index, double>>;

struct GaussianRow {
  Vector mean;
  Matrix precision;
};

/// Full conditional of one factor row given the other factor and that
/// row's observed entries; with none observed this is the prior.
inline GaussianRow bpmf_row_conditional(const Vector& mu, const Matrix& sigma, const Matrix& other,
                                        const SparseLine& line, double eta2) {
  const Index r = mu.size();
  const Matrix prior_prec = Eigen::LLT<Matrix>(sigma).solve(Matrix::Identity(r, r));
  Matrix prec = prior_prec;
  Vector rhs = prior_prec * mu;
  for (const auto& [k, y] : line) {
    prec.noalias() += other.row(k).transpose() * other.row(k) / eta2;
    rhs.noalias() += other.row(k).transpose() * (y / eta2);
  }
  prec = 0.5 * (prec + prec.transpose()).eval();
  Eigen::LLT<Matrix> llt(prec);
  if (llt.info() != Eigen::Success) {
    log_warning("bpmf: singular row precision, applying ridge 1e-10");
    prec.diagonal().array() += 1e-10;
    llt.compute(prec);
    if (llt.info() != Eigen::Success) throw NumericalError("bpmf: row precision not positive-definite");
  }
  return {llt.solve(rhs), std::move(prec)};
}

namespace detail {

inline Vector draw_gaussian_row(const GaussianRow& g, RngStream& rng) {
  Eigen::LLT<Matrix> llt(g.precision);
  Vector z(g.mean.size());
  for (Index k = 0; k < z.size(); ++k) z(k) = rng.normal();
  // prec = L L^T, so L^{-T} z has covariance prec^{-1}.
  return g.mean + llt.matrixU().solve(z);
}

}  // namespace detail

/// Observations grouped by row and column. Row and column keys label the
/// per-line random substreams; permuting the grid together with its keys
/// permutes the chain.
class BpmfData {
 public:
  BpmfData(const ObservationSet& obs, std::vector<std::uint64_t> row_keys = {},
           std::vector<std::uint64_t> col_keys = {})
      : rows_(static_cast<std::size_t>(obs.rows())), cols_(static_cast<std::size_t>(obs.cols())),
        row_keys_(std::move(row_keys)), col_keys_(std::move(col_keys)), n_(obs.size()) {
    for (const auto& e : obs.entries()) {
      rows_[static_cast<std::size_t>(e.index.i)].push_back({e.index.j, e.value});
      cols_[static_cast<std::size_t>(e.index.j)].push_back({e.index.i, e.value});
    }
    if (row_keys_.empty()) for (Index i = 0; i < obs.rows(); ++i) row_keys_.push_back(static_cast<std::uint64_t>(i));
    if (col_keys_.empty()) for (Index j = 0; j < obs.cols(); ++j) col_keys_.push_back(static_cast<std::uint64_t>(j));
    detail::require_dims(row_keys_.size() == rows_.size() && col_keys_.size() == cols_.size(),
                         "bpmf: key count must match the grid");
  }

  Index rows() const { return static_cast<Index>(rows_.size()); }
  Index cols() const { return static_cast<Index>(cols_.size()); }
  std::size_t size() const { return n_; }
  const SparseLine& row(Index i) const { return rows_[static_cast<std::size_t>(i)]; }
  const SparseLine& col(Index j) const { return cols_[static_cast<std::size_t>(j)]; }
  std::uint64_t row_key(Index i) const { return row_keys_[static_cast<std::size_t>(i)]; }
  std::uint64_t col_key(Index j) const { return col_keys_[static_cast<std::size_t>(j)]; }

  double observed_sse(const Matrix& x) const {
    double s = 0.0;
    for (Index i = 0; i < rows(); ++i) {
      for (const auto& [j, y] : row(i)) s += (y - x(i, j)) * (y - x(i, j));
    }
    return s;
  }

 private:
  std::vector<SparseLine> rows_;
  std::vector<SparseLine> cols_;
  std::vector<std::uint64_t> row_keys_;
  std::vector<std::uint64_t> col_keys_;
  std::size_t n_;
};

inline BpmfState bpmf_init(const BpmfData& data, const BpmfHyper& hyper, RngStream& rng) {
  validate(hyper);
  detail::require_domain(data.size() > 0, "bpmf: no observations");
  const Index r = hyper.rank;
  double ms = 0.0;
  for (Index i = 0; i < data.rows(); ++i) {
    for (const auto& [j, y] : data.row(i)) ms += y * y;
  }
  ms /= static_cast<double>(data.size());
  const double s = std::sqrt(std::max(ms, 1e-12) / std::sqrt(static_cast<double>(r)));

  BpmfState st;
  const std::uint64_t base = rng.engine()();
  st.m.resize(data.rows(), r);
  for (Index i = 0; i < data.rows(); ++i) {
    RngStream line = RngStream(base).derive(2 * data.row_key(i));
    for (Index k = 0; k < r; ++k) st.m(i, k) = s * line.normal();
  }
  st.n.resize(data.cols(), r);
  for (Index j = 0; j < data.cols(); ++j) {
    RngStream line = RngStream(base).derive(2 * data.col_key(j) + 1);
    for (Index k = 0; k < r; ++k) st.n(j, k) = s * line.normal();
  }
  st.mu_m = Vector::Zero(r);
  st.mu_n = Vector::Zero(r);
  st.sigma_m = s * s * Matrix::Identity(r, r);
  st.sigma_n = s * s * Matrix::Identity(r, r);
  st.eta2 = hyper.eta2.sampled ? std::max(ms, 1e-12) : hyper.eta2.value;
  return st;
}

/// Rows of M, rows of N, then (mu_M, Sigma_M), (mu_N, Sigma_N) and, when
/// sampled, eta2 from its observed-entry conditional.
inline BpmfState bpmf_sweep(const BpmfState& state, const BpmfData& data, const BpmfHyper& hyper, RngStream& rng) {
  BpmfState next = state;
  const std::uint64_t base = rng.engine()();
  for (Index i = 0; i < data.rows(); ++i) {
    RngStream line = RngStream(base).derive(2 * data.row_key(i));
    const auto g = bpmf_row_conditional(state.mu_m, state.sigma_m, next.n, data.row(i), state.eta2);
    next.m.row(i) = detail::draw_gaussian_row(g, line).transpose();
  }
  for (Index j = 0; j < data.cols(); ++j) {
    RngStream line = RngStream(base).derive(2 * data.col_key(j) + 1);
    const auto g = bpmf_row_conditional(state.mu_n, state.sigma_n, next.m, data.col(j), state.eta2);
    next.n.row(j) = detail::draw_gaussian_row(g, line).transpose();
  }

  auto update_hyper = [&](const Matrix& f, Vector& mu, Matrix& sigma) {
    const NiwParams post = niw_posterior(f, hyper);
    sigma = sample_inverse_wishart(post.psi, post.nu, rng);
    const Matrix l = Eigen::LLT<Matrix>(sigma / post.beta).matrixL();
    Vector z(mu.size());
    for (Index k = 0; k < z.size(); ++k) z(k) = rng.normal();
    mu = post.mean + l * z;
  };
  update_hyper(next.m, next.mu_m, next.sigma_m);
  update_hyper(next.n, next.mu_n, next.sigma_n);

  if (hyper.eta2.sampled) {
    const double sse = data.observed_sse(next.x());
    next.eta2 = sample_inverse_gamma(hyper.alpha_eta2 + 0.5 * static_cast<double>(data.size()),
                                     hyper.beta_eta2 + 0.5 * sse, rng);
  }
  return next;
}

/// Model-state view of a factorization: rank-R SVD of M N^T, with sigma2
/// reported as tr(D^2) / R^2.
inline ModelState bpmf_as_model_state(const BpmfState& st, Index rank) {
  const Matrix x = st.x();
  SvdResult dec = svd(x, rank);
  ModelState out;
  out.u = dec.u;
  out.v = dec.v;
  out.d = dec.d;
  out.sigma2 = dec.d.squaredNorm() / static_cast<double>(rank * rank);
  out.eta2 = st.eta2;
  return out;
}

struct BpmfRunOptions {
  std::vector<std::uint64_t> row_keys;
  std::vector<std::uint64_t> col_keys;
};

namespace detail {

inline PosteriorSamples run_bpmf_chain(const ObservationSet& obs, const BpmfHyper& hyper, const GibbsConfig& cfg,
                                       const BpmfRunOptions& opts, int chain_id) {
  RngStream rng(cfg.seed + static_cast<std::uint64_t>(chain_id));
  const BpmfData data(obs, opts.row_keys, opts.col_keys);
  BpmfState st = bpmf_init(data, hyper, rng);
  PosteriorSamples out;
  for (int t = 1; t <= cfg.total_iters; ++t) {
    try {
      st = bpmf_sweep(st, data, hyper, rng);
    } catch (const std::exception& ex) {
      throw NumericalError("bpmf chain " + std::to_string(chain_id) + " aborted at iteration " + std::to_string(t) +
                           ": " + ex.what());
    }
    if (t > cfg.burn_in && (t - cfg.burn_in) % cfg.thin == 0) {
      out.x_samples.push_back(st.x());
      out.states.push_back(bpmf_as_model_state(st, hyper.rank));
      out.chain.push_back(chain_id);
      out.iteration.push_back(t);
    }
  }
  return out;
}

}  // namespace detail

/// BPMF chains with the same seeding and retention rules as run_chain.
inline PosteriorSamples run_bpmf(const ObservationSet& obs, const BpmfHyper& hyper, const GibbsConfig& cfg,
                                 const BpmfRunOptions& opts = {}) {
  validate(hyper);
  validate(cfg);
  detail::require_domain(hyper.rank < std::min(obs.rows(), obs.cols()), "bpmf: need R < min(m1, m2)");
  if (hyper.nu <= 0.0) log_warning("bpmf: IW degrees of freedom defaulted to R + 2");
  std::vector<PosteriorSamples> parts;
  if (cfg.n_chains == 1) {
    parts.push_back(detail::run_bpmf_chain(obs, hyper, cfg, opts, 0));
  } else {
    std::vector<std::future<PosteriorSamples>> jobs;
    for (int c = 0; c < cfg.n_chains; ++c) {
      jobs.push_back(std::async(std::launch::async, detail::run_bpmf_chain, std::cref(obs), std::cref(hyper),
                                std::cref(cfg), std::cref(opts), c));
    }
    for (auto& j : jobs) parts.push_back(j.get());
  }
  PosteriorSamples out;
  out.n_chains = cfg.n_chains;
  for (auto& p : parts) {
    for (std::size_t t = 0; t < p.size(); ++t) {
      out.states.push_back(std::move(p.states[t]));
      out.x_samples.push_back(std::move(p.x_samples[t]));
      out.chain.push_back(p.chain[t]);
      out.iteration.push_back(p.iteration[t]);
    }
  }
  return out;
}

}  // namespace bayesmg
