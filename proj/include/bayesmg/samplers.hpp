#pragma once

// Random-variate generators for the matrix von Mises-Fisher, repulsed normal
// and inverse-gamma laws, plus their unnormalized log densities.

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <string>

#include "bayesmg/errors.hpp"
#include "bayesmg/linalg.hpp"
#include "bayesmg/rng.hpp"
#include "bayesmg/special.hpp"

namespace bayesmg {

/// Concentration matrix of MF(m, R, F); F may be all-zero (uniform law).
struct VmfParams {
  Matrix f;

  Index ambient() const { return f.rows(); }
  Index rank() const { return f.cols(); }
};

struct VmfOptions {
  /// Proposal cap, applied per column (vector rejection) and to the
  /// column-wise matrix rejection loop.
  std::size_t max_proposals = 1'000'000;
  /// Exact matrix proposals tried by update_frame_vmf before it falls back
  /// to a column-wise Gibbs sweep.
  std::size_t exact_attempts = 1000;
};

struct VmfStats {
  std::size_t vector_proposals = 0;
  std::size_t matrix_proposals = 0;
  std::size_t gibbs_fallbacks = 0;
};

/// tr(F^T W); the 0F1 normalizer is excluded.
inline double vmf_log_kernel(const Frame& w, const VmfParams& p) {
  detail::require_dims(w.ambient() == p.ambient() && w.rank() == p.rank(), "vmf_log_kernel: dimension mismatch");
  return (p.f.array() * w.matrix().array()).sum();
}

/// Uniform point on the unit sphere in R^p.
inline Vector sample_uniform_sphere(Index p, RngStream& rng) {
  Vector g(p);
  double n = 0.0;
  do {
    for (Index k = 0; k < p; ++k) g(k) = rng.normal();
    n = g.norm();
  } while (n == 0.0);
  return g / n;
}

/// log of the kappa-dependent part of the vector vMF normalizer on S^{p-1},
/// I_nu(kappa) / kappa^nu with nu = p/2 - 1; continuous at kappa = 0.
inline double log_vmf_normalizer(double nu, double kappa) {
  if (kappa == 0.0) return -nu * std::numbers::ln2 - std::lgamma(nu + 1.0);
  return log_bessel_i(nu, kappa) - nu * std::log(kappa);
}

/// Draw x on S^{p-1} with density proportional to exp(c^T x), p >= 2, via
/// the angular rejection construction (Wood 1994).
inline Vector sample_vector_vmf(const Vector& c, RngStream& rng, const VmfOptions& opts = {},
                                VmfStats* stats = nullptr) {
  const Index p = c.size();
  detail::require_domain(p >= 2, "vector vMF: dimension must be >= 2");
  detail::require_domain(c.allFinite(), "vector vMF: non-finite concentration");
  const double kappa = c.norm();
  if (kappa == 0.0) return sample_uniform_sphere(p, rng);

  const Vector mu = c / kappa;
  const double pm1 = static_cast<double>(p - 1);
  const double b = pm1 / (2.0 * kappa + std::sqrt(4.0 * kappa * kappa + pm1 * pm1));
  const double x0 = (1.0 - b) / (1.0 + b);
  const double one_minus_x0 = 2.0 * b / (1.0 + b);
  const double cc = kappa * x0 + pm1 * std::log(one_minus_x0 * (1.0 + x0));

  for (std::size_t attempt = 0; attempt < opts.max_proposals; ++attempt) {
    if (stats) ++stats->vector_proposals;
    const double z = rng.beta(0.5 * pm1, 0.5 * pm1);
    const double denom = 1.0 - (1.0 - b) * z;
    const double w = (1.0 - (1.0 + b) * z) / denom;
    const double one_minus_w = 2.0 * b * z / denom;
    const double u = rng.uniform();
    if (kappa * w + pm1 * std::log(one_minus_x0 + x0 * one_minus_w) - cc >= std::log(u)) {
      Vector v(p);
      double vn = 0.0;
      do {
        for (Index k = 0; k < p; ++k) v(k) = rng.normal();
        v -= mu.dot(v) * mu;
        vn = v.norm();
      } while (vn == 0.0);
      v /= vn;
      return w * mu + std::sqrt(std::max(0.0, one_minus_w * (1.0 + w))) * v;
    }
  }
  throw NumericalError("vector vMF: proposal cap exceeded (kappa = " + std::to_string(kappa) + ")");
}

/// Draw W ~ MF(m, R, F) with the column-wise rejection scheme of Hoff (2009):
/// each column is a vector vMF on the null space of the earlier columns, and
/// the whole proposal is accepted with the normalizer ratio.
inline Frame sample_matrix_vmf(const VmfParams& p, RngStream& rng, const VmfOptions& opts = {},
                               VmfStats* stats = nullptr) {
  const Index m = p.ambient();
  const Index r = p.rank();
  detail::require_domain(r >= 1 && r < m, "matrix vMF: need 1 <= R < m");
  detail::require_domain(p.f.allFinite(), "matrix vMF: non-finite concentration");

  if (r == 1) {
    return Frame(sample_vector_vmf(p.f.col(0), rng, opts, stats));
  }

  Eigen::JacobiSVD<Matrix> dec(p.f, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Matrix h = dec.matrixU() * dec.singularValues().asDiagonal();
  const Vector& d = dec.singularValues();

  Matrix w(m, r);
  for (std::size_t attempt = 0; attempt < opts.max_proposals; ++attempt) {
    if (stats) ++stats->matrix_proposals;
    w.col(0) = sample_vector_vmf(h.col(0), rng, opts, stats);
    double log_ratio = 0.0;
    for (Index j = 1; j < r; ++j) {
      const Matrix basis = null_complement(w.leftCols(j));
      const Vector hn = basis.transpose() * h.col(j);
      w.col(j) = basis * sample_vector_vmf(hn, rng, opts, stats);
      if (d(j) > 0.0) {
        const double nu = 0.5 * static_cast<double>(m - j) - 1.0;
        log_ratio += log_vmf_normalizer(nu, hn.norm()) - log_vmf_normalizer(nu, d(j));
      }
    }
    if (std::log(rng.uniform()) < log_ratio) {
      return Frame(w * dec.matrixV().transpose());
    }
  }
  throw NumericalError("matrix vMF: rejection cap exceeded");
}

/// One column-wise Gibbs sweep targeting MF(m, R, F): column j is redrawn
/// from its conditional, a vector vMF on the complement of the other columns.
inline Frame vmf_column_gibbs(const VmfParams& p, const Frame& current, RngStream& rng, const VmfOptions& opts = {},
                              VmfStats* stats = nullptr) {
  const Index m = p.ambient();
  const Index r = p.rank();
  detail::require_dims(current.ambient() == m && current.rank() == r, "vmf gibbs: state shape mismatch");
  detail::require_domain(r < m, "vmf gibbs: need R < m");
  Matrix w = current.matrix();
  for (Index j = 0; j < r; ++j) {
    if (r == 1) {
      w.col(0) = sample_vector_vmf(p.f.col(0), rng, opts, stats);
      continue;
    }
    Matrix others(m, r - 1);
    others << w.leftCols(j), w.rightCols(r - 1 - j);
    const Matrix basis = null_complement(others);
    w.col(j) = basis * sample_vector_vmf(basis.transpose() * p.f.col(j), rng, opts, stats);
  }
  // Columns stay orthonormal up to rounding; clean the drift.
  return Frame::orthonormalize(w);
}

/// Markov update of a frame with stationary law MF(m, R, F): an exact draw
/// when the rejection sampler accepts within opts.exact_attempts proposals,
/// otherwise one column-wise Gibbs sweep from `current`. The choice does not
/// depend on `current`, so both branches preserve the target.
inline Frame update_frame_vmf(const VmfParams& p, const Frame& current, RngStream& rng, const VmfOptions& opts = {},
                              VmfStats* stats = nullptr) {
  VmfOptions capped = opts;
  capped.max_proposals = opts.exact_attempts;
  try {
    return sample_matrix_vmf(p, rng, capped, stats);
  } catch (const NumericalError&) {
    if (stats) ++stats->gibbs_fallbacks;
  }
  return vmf_column_gibbs(p, current, rng, opts, stats);
}

/// Location/scale of the repulsed normal RN(mu, delta2).
struct RepulsedNormalParams {
  Vector mu;
  double delta2 = 1.0;
};

struct RepulsedNormalOptions {
  double t_dof = 4.0;    // proposal degrees of freedom
  int inner_steps = 5;   // MH transitions per call
};

struct MhStats {
  std::size_t proposed = 0;
  std::size_t accepted = 0;

  double rate() const { return proposed == 0 ? 0.0 : static_cast<double>(accepted) / proposed; }
  /// Acceptance outside [0.05, 0.95] is worth flagging, not failing.
  bool flagged() const { return proposed > 0 && (rate() < 0.05 || rate() > 0.95); }
};

inline void validate(const RepulsedNormalParams& p) {
  detail::require_domain(p.delta2 > 0.0 && std::isfinite(p.delta2), "repulsed normal: delta2 must be positive");
  detail::require_domain(p.mu.size() >= 1 && p.mu.allFinite(), "repulsed normal: mu must be finite");
}

/// -(1/2 delta2) sum (d_k - mu_k)^2 + sum_{k<l} log|d_k^2 - d_l^2|; the
/// normalizer Z_R is not computed. -inf on exact ties.
inline double repulsed_normal_log_density_unnorm(const Vector& d, const RepulsedNormalParams& p) {
  validate(p);
  detail::require_dims(d.size() == p.mu.size(), "repulsed normal: length mismatch");
  for (Index k = 0; k < d.size(); ++k) {
    detail::require_domain(d(k) > 0.0, "repulsed normal: values must be positive");
  }
  double out = -0.5 * (d - p.mu).squaredNorm() / p.delta2;
  for (Index k = 0; k < d.size(); ++k) {
    for (Index l = k + 1; l < d.size(); ++l) {
      const double gap = std::abs(d(k) * d(k) - d(l) * d(l));
      if (gap == 0.0) return -std::numeric_limits<double>::infinity();
      out += std::log(gap);
    }
  }
  return out;
}

namespace detail {

inline double log_t_kernel(const Vector& x, const RepulsedNormalParams& p, double dof) {
  const double q = (x - p.mu).squaredNorm() / (dof * p.delta2);
  return -0.5 * (dof + static_cast<double>(x.size())) * std::log1p(q);
}

}  // namespace detail

/// A block of independence Metropolis-Hastings transitions targeting
/// RN(mu, delta2), proposing from a multivariate t centered at mu with scale
/// delta. Proposals with a non-positive coordinate are rejected outright.
inline Vector sample_repulsed_normal(const RepulsedNormalParams& p, RngStream& rng,
                                     std::optional<Vector> current = std::nullopt,
                                     const RepulsedNormalOptions& opts = {}, MhStats* stats = nullptr) {
  validate(p);
  detail::require_domain(opts.t_dof > 0.0 && opts.inner_steps >= 1, "repulsed normal: bad options");
  const Index r = p.mu.size();
  const double delta = std::sqrt(p.delta2);
  Vector x = current ? *current : p.mu.cwiseMax(delta);
  detail::require_dims(x.size() == r, "repulsed normal: state length mismatch");
  detail::require_domain((x.array() > 0.0).all(), "repulsed normal: state must be positive");

  double log_w = repulsed_normal_log_density_unnorm(x, p) - detail::log_t_kernel(x, p, opts.t_dof);
  Vector y(r);
  for (int step = 0; step < opts.inner_steps; ++step) {
    const double scale = delta * std::sqrt(opts.t_dof / rng.chi_squared(opts.t_dof));
    for (Index k = 0; k < r; ++k) y(k) = p.mu(k) + scale * rng.normal();
    const double u = rng.uniform();
    if (stats) ++stats->proposed;
    if (!(y.array() > 0.0).all()) continue;
    const double log_wy = repulsed_normal_log_density_unnorm(y, p) - detail::log_t_kernel(y, p, opts.t_dof);
    if (log_wy == -std::numeric_limits<double>::infinity()) continue;
    if (log_w == -std::numeric_limits<double>::infinity() || std::log(u) < log_wy - log_w) {
      x = y;
      log_w = log_wy;
      if (stats) ++stats->accepted;
    }
  }
  return x;
}

/// Draw from IG(alpha, beta) with shape alpha and rate beta.
inline double sample_inverse_gamma(double alpha, double beta, RngStream& rng) {
  detail::require_domain(alpha > 0.0 && beta > 0.0 && std::isfinite(alpha) && std::isfinite(beta),
                         "inverse gamma: parameters must be positive");
  // Small shapes: G(a) = G(a + 1) * U^(1/a), kept in log space so tiny gamma
  // draws do not underflow to zero.
  double log_g;
  if (alpha < 1.0) {
    log_g = std::log(rng.gamma(alpha + 1.0)) + std::log(rng.uniform()) / alpha;
  } else {
    log_g = std::log(rng.gamma(alpha));
  }
  const double out = std::exp(std::log(beta) - log_g);
  return std::min(out, std::numeric_limits<double>::max());
}

}  // namespace bayesmg
