#pragma once

// The singular matrix-variate Gaussian X = P_U Z P_V: sampling, density,
// exact Gaussian conditionals given noisy entries, and coherence analytics.

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "bayesmg/errors.hpp"
#include "bayesmg/linalg.hpp"
#include "bayesmg/log.hpp"
#include "bayesmg/observations.hpp"
#include "bayesmg/rng.hpp"

namespace bayesmg {

struct SmgParams {
  Frame u;  // m1 x R
  Frame v;  // m2 x R
  double sigma2 = 1.0;

  Index rank() const { return u.rank(); }
  Index rows() const { return u.ambient(); }
  Index cols() const { return v.ambient(); }
};

inline void validate(const SmgParams& p) {
  detail::require_dims(!p.u.empty() && !p.v.empty() && p.u.rank() == p.v.rank(), "smg: frame ranks differ");
  detail::require_domain(p.rank() < std::min(p.rows(), p.cols()), "smg: need R < min(m1, m2)");
  detail::require_domain(p.sigma2 > 0.0 && std::isfinite(p.sigma2), "smg: sigma2 must be positive");
}

/// U (U^T Z V) V^T with Z_ij iid N(0, sigma2).
inline Matrix smg_sample(const SmgParams& p, RngStream& rng) {
  validate(p);
  const double sd = std::sqrt(p.sigma2);
  Matrix z(p.rows(), p.cols());
  for (Index j = 0; j < z.cols(); ++j) {
    for (Index i = 0; i < z.rows(); ++i) z(i, j) = sd * rng.normal();
  }
  const Matrix& u = p.u.matrix();
  const Matrix& v = p.v.matrix();
  return u * (u.transpose() * z * v) * v.transpose();
}

/// Relative residual tolerance for membership of X in the support T.
inline constexpr double kSupportTol = 1e-8;

/// log density on T: -(R^2/2) log(2 pi sigma2) - ||U^T X V||_F^2 / (2 sigma2).
inline double smg_log_density(const Matrix& x, const SmgParams& p) {
  validate(p);
  detail::require_dims(x.rows() == p.rows() && x.cols() == p.cols(), "smg_log_density: shape mismatch");
  const Matrix& u = p.u.matrix();
  const Matrix& v = p.v.matrix();
  const Matrix core = u.transpose() * x * v;
  const double residual = (x - u * core * v.transpose()).norm();
  if (residual > kSupportTol * x.norm()) {
    throw DomainError("smg_log_density: X is off the support (residual " + std::to_string(residual) + ")");
  }
  const double r = static_cast<double>(p.rank());
  return -0.5 * r * r * std::log(2.0 * std::numbers::pi * p.sigma2) - 0.5 * core.squaredNorm() / p.sigma2;
}

/// ||P_U e_i||^2.
inline double coherence(const Frame& f, Index i) {
  detail::require_dims(i >= 0 && i < f.ambient(), "coherence: index out of range");
  return f.matrix().row(i).squaredNorm();
}

/// All row coherences mu_1..mu_m.
inline Vector coherences(const Frame& f) { return f.matrix().rowwise().squaredNorm(); }

/// mu(U) = max_i mu_i(U).
inline double max_coherence(const Frame& f) { return coherences(f).maxCoeff(); }

/// e_{i2}^T P_U e_i.
inline double cross_coherence(const Frame& f, Index i, Index i2) {
  detail::require_dims(i >= 0 && i < f.ambient() && i2 >= 0 && i2 < f.ambient(), "cross_coherence: index out of range");
  return f.matrix().row(i).dot(f.matrix().row(i2));
}

/// Mean and covariance of X at `targets` given Y_Omega and fixed subspaces.
struct ConditionalPredictive {
  std::vector<EntryIndex> targets;
  Vector mean;
  Matrix cov;
  double gamma2 = 0.0;  // eta2 / sigma2
};

inline ConditionalPredictive conditional_predictive(const ObservationSet& obs, const SmgParams& p, double eta2,
                                                    std::span<const EntryIndex> targets) {
  validate(p);
  detail::require_dims(obs.rows() == p.rows() && obs.cols() == p.cols(), "conditional_predictive: grid mismatch");
  detail::require_domain(eta2 > 0.0 && std::isfinite(eta2), "conditional_predictive: eta2 must be positive");

  ConditionalPredictive out;
  out.targets.assign(targets.begin(), targets.end());
  out.gamma2 = eta2 / p.sigma2;
  const Matrix k_tt = kron_restricted(p.u, p.v, targets, targets);
  const auto t = static_cast<Index>(targets.size());

  if (obs.empty()) {
    out.mean = Vector::Zero(t);
    out.cov = p.sigma2 * k_tt;
    return out;
  }

  const auto omega = obs.indices();
  Matrix a = kron_restricted(p.u, p.v, omega, omega);
  a.diagonal().array() += out.gamma2;
  const Matrix k_ot = kron_restricted(p.u, p.v, omega, targets);

  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) {
    const Vector diag = a.diagonal();
    throw NumericalError("conditional_predictive: Cholesky failed (n = " + std::to_string(omega.size()) +
                         ", gamma2 = " + std::to_string(out.gamma2) + ", diag range [" +
                         std::to_string(diag.minCoeff()) + ", " + std::to_string(diag.maxCoeff()) + "])");
  }
  out.mean = k_ot.transpose() * llt.solve(obs.values());
  Matrix cov = p.sigma2 * (k_tt - k_ot.transpose() * llt.solve(k_ot));
  cov = 0.5 * (cov + cov.transpose()).eval();
  for (Index k = 0; k < t; ++k) {
    if (cov(k, k) < 0.0) {
      if (cov(k, k) < -1e-9) log_warning("conditional_predictive: clamped negative variance " + std::to_string(cov(k, k)));
      cov(k, k) = 0.0;
    }
  }
  out.cov = std::move(cov);
  return out;
}

struct VarianceReduction {
  double before = 0.0;     // Var(X_probe | Y_Omega)
  double after = 0.0;      // Var(X_probe | Y_{Omega + new})
  double reduction = 0.0;  // Cov^2(X_probe, X_new | Y_Omega) / (Var(X_new | Y_Omega) + eta2)
};

/// Effect of one extra observation on the variance of a probe entry. `after`
/// comes from the enlarged system; `reduction` from the original one.
inline VarianceReduction variance_reduction(const ObservationSet& obs, const SmgParams& p, double eta2,
                                            const EntryIndex& new_entry, const EntryIndex& probe) {
  detail::require_dims(in_grid(new_entry, obs.rows(), obs.cols()) && in_grid(probe, obs.rows(), obs.cols()),
                       "variance_reduction: index out of grid");
  detail::require_domain(!obs.contains(new_entry), "variance_reduction: new entry is already observed");

  const std::vector<EntryIndex> pair{probe, new_entry};
  const auto base = conditional_predictive(obs, p, eta2, pair);

  auto enlarged = obs.entries();
  enlarged.push_back({new_entry, 0.0});
  const ObservationSet obs_plus(obs.rows(), obs.cols(), std::move(enlarged));
  const std::vector<EntryIndex> single{probe};
  const auto next = conditional_predictive(obs_plus, p, eta2, single);

  VarianceReduction out;
  out.before = base.cov(0, 0);
  out.after = next.cov(0, 0);
  out.reduction = base.cov(0, 1) * base.cov(0, 1) / (base.cov(1, 1) + eta2);
  return out;
}

/// Var(X_probe | Y_{order[0..N)}) for N = 0..m1*m2 at fixed subspaces. The
/// variance does not depend on observed values, so none are needed.
inline std::vector<double> monotonicity_trace(const SmgParams& p, double eta2, std::span<const EntryIndex> order,
                                              const EntryIndex& probe) {
  validate(p);
  const Index m1 = p.rows();
  const Index m2 = p.cols();
  detail::require_domain(static_cast<Index>(order.size()) == m1 * m2, "monotonicity_trace: order must cover the grid");
  detail::require_dims(in_grid(probe, m1, m2), "monotonicity_trace: probe out of grid");
  std::vector<bool> seen(static_cast<std::size_t>(m1 * m2), false);
  for (const auto& e : order) {
    detail::require_domain(in_grid(e, m1, m2) && !seen[static_cast<std::size_t>(e.linear(m1))],
                           "monotonicity_trace: order is not a permutation of the grid");
    seen[static_cast<std::size_t>(e.linear(m1))] = true;
  }

  const std::vector<EntryIndex> target{probe};
  std::vector<double> out;
  out.reserve(order.size() + 1);
  std::vector<Observation> prefix;
  for (std::size_t n = 0; n <= order.size(); ++n) {
    const ObservationSet obs(m1, m2, prefix);
    out.push_back(conditional_predictive(obs, p, eta2, target).cov(0, 0));
    if (n < order.size()) prefix.push_back({order[n], 0.0});
  }
  return out;
}

}  // namespace bayesmg
