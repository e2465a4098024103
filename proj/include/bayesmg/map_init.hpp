#pragma once

// Nuclear-norm point estimation, cross-validated regularization and MAP rank
// estimation. These seed the Gibbs sampler.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <vector>

#include "bayesmg/errors.hpp"
#include "bayesmg/linalg.hpp"
#include "bayesmg/observations.hpp"
#include "bayesmg/rng.hpp"

namespace bayesmg {

struct SolverConfig {
  double lambda = 0.0;               // soft-threshold level used by soft_impute
  double tol = 1e-6;                 // relative squared Frobenius change
  int max_iter = 500;
  int cv_folds = 5;
  std::vector<double> lambda_grid;   // empty: default_lambda_grid()
  double rank_tol = 1e-2;            // relative singular-value cutoff
};

inline void validate(const SolverConfig& cfg) {
  detail::require_domain(cfg.lambda >= 0.0 && std::isfinite(cfg.lambda), "solver: lambda must be non-negative");
  detail::require_domain(cfg.tol > 0.0, "solver: tol must be positive");
  detail::require_domain(cfg.max_iter >= 1, "solver: max_iter must be >= 1");
  detail::require_domain(cfg.cv_folds >= 2, "solver: cv_folds must be >= 2");
  detail::require_domain(cfg.rank_tol > 0.0, "solver: rank_tol must be positive");
  for (std::size_t k = 0; k < cfg.lambda_grid.size(); ++k) {
    detail::require_domain(cfg.lambda_grid[k] > 0.0, "solver: lambda grid must be strictly positive");
    if (k > 0) detail::require_domain(cfg.lambda_grid[k] > cfg.lambda_grid[k - 1], "solver: lambda grid must be sorted");
  }
}

/// (1/2) sum_Omega (Y - X)^2 + lambda ||X||_*. Soft-impute decreases this
/// objective, which is the nuclear-norm least-squares problem with the
/// penalty weight written as 2 * lambda.
inline double nuclear_objective(const Matrix& x, const ObservationSet& obs, double lambda) {
  double fit = 0.0;
  for (const auto& e : obs.entries()) {
    const double r = e.value - x(e.index.i, e.index.j);
    fit += r * r;
  }
  Eigen::BDCSVD<Matrix> dec(x);
  return 0.5 * fit + lambda * dec.singularValues().sum();
}

struct SoftImputeResult {
  Matrix x;
  std::vector<double> objective;  // after each iteration
  int iterations = 0;
  bool converged = false;
};

/// Iterative soft-thresholded SVD: observed entries are fixed to Y, the rest
/// to the current estimate, and singular values are shrunk by lambda.
inline SoftImputeResult soft_impute(const ObservationSet& obs, const SolverConfig& cfg,
                                    const Matrix* warm_start = nullptr) {
  validate(cfg);
  detail::require_domain(!obs.empty(), "soft_impute: empty observation set");
  const Index m1 = obs.rows();
  const Index m2 = obs.cols();
  SoftImputeResult out;
  out.x = warm_start ? *warm_start : Matrix::Zero(m1, m2);
  detail::require_dims(out.x.rows() == m1 && out.x.cols() == m2, "soft_impute: warm start shape mismatch");

  Matrix filled(m1, m2);
  for (int it = 0; it < cfg.max_iter; ++it) {
    filled = out.x;
    for (const auto& e : obs.entries()) filled(e.index.i, e.index.j) = e.value;
    Eigen::BDCSVD<Matrix> dec(filled, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector shrunk = (dec.singularValues().array() - cfg.lambda).cwiseMax(0.0).matrix();
    Index keep = 0;
    while (keep < shrunk.size() && shrunk(keep) > 0.0) ++keep;
    Matrix next = Matrix::Zero(m1, m2);
    if (keep > 0) {
      next = dec.matrixU().leftCols(keep) * shrunk.head(keep).asDiagonal() * dec.matrixV().leftCols(keep).transpose();
    }

    double fit = 0.0;
    for (const auto& e : obs.entries()) {
      const double r = e.value - next(e.index.i, e.index.j);
      fit += r * r;
    }
    out.objective.push_back(0.5 * fit + cfg.lambda * shrunk.sum());

    const double change = (next - out.x).squaredNorm();
    const double base = out.x.squaredNorm();
    out.x = std::move(next);
    out.iterations = it + 1;
    if (change == 0.0 || (base > 0.0 && change / base < cfg.tol)) {
      out.converged = true;
      break;
    }
  }
  return out;
}

/// Warm-started soft-impute over `steps` log-spaced levels from the top
/// singular value of the zero-filled data down to cfg.lambda. A cold start at
/// a tiny lambda barely moves off the zero-filled matrix; following the path
/// reaches the same minimizer far sooner. The result carries the iterations of
/// the final level only.
inline SoftImputeResult soft_impute_path(const ObservationSet& obs, const SolverConfig& cfg, int steps = 20) {
  validate(cfg);
  detail::require_domain(!obs.empty(), "soft_impute_path: empty observation set");
  detail::require_domain(cfg.lambda > 0.0 && steps >= 1, "soft_impute_path: need lambda > 0 and steps >= 1");
  const double top = Eigen::BDCSVD<Matrix>(obs.zero_filled()).singularValues()(0);
  Matrix warm = Matrix::Zero(obs.rows(), obs.cols());
  SolverConfig stage = cfg;
  for (int k = 0; k < steps && top > cfg.lambda; ++k) {
    stage.lambda = top * std::pow(cfg.lambda / top, static_cast<double>(k) / steps);
    warm = soft_impute(obs, stage, &warm).x;
  }
  return soft_impute(obs, cfg, &warm);
}

/// 15 log-spaced values from 1e-3 d1 to d1, d1 the top singular value of the
/// zero-filled observation matrix.
inline std::vector<double> default_lambda_grid(const ObservationSet& obs, int count = 15) {
  Eigen::BDCSVD<Matrix> dec(obs.zero_filled());
  const double d1 = dec.singularValues()(0);
  detail::require_domain(d1 > 0.0, "lambda grid: observations are all zero");
  std::vector<double> grid(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    const double t = count == 1 ? 1.0 : static_cast<double>(k) / (count - 1);
    grid[static_cast<std::size_t>(k)] = d1 * std::pow(10.0, -3.0 * (1.0 - t));
  }
  return grid;
}

/// Held-out squared error summed over folds, one value per grid point.
struct CvCurve {
  std::vector<double> grid;
  std::vector<double> error;
};

/// Fold assignment depends only on the set of indices (entries are put in
/// canonical order before shuffling), not on their input order.
inline std::vector<int> assign_folds(const ObservationSet& canonical_obs, int folds, RngStream& rng) {
  std::vector<std::size_t> perm(canonical_obs.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t k = perm.size(); k > 1; --k) {
    std::swap(perm[k - 1], perm[rng.below(k)]);
  }
  std::vector<int> fold(canonical_obs.size());
  for (std::size_t pos = 0; pos < perm.size(); ++pos) fold[perm[pos]] = static_cast<int>(pos % folds);
  return fold;
}

inline CvCurve cv_curve(const ObservationSet& obs, const SolverConfig& cfg, RngStream& rng) {
  validate(cfg);
  detail::require_domain(obs.size() >= static_cast<std::size_t>(cfg.cv_folds), "cv: fewer entries than folds");
  CvCurve curve;
  curve.grid = cfg.lambda_grid.empty() ? default_lambda_grid(obs) : cfg.lambda_grid;
  detail::require_domain(!curve.grid.empty(), "cv: lambda grid is empty");
  curve.error.assign(curve.grid.size(), 0.0);

  const ObservationSet canon = obs.canonical();
  const auto fold = assign_folds(canon, cfg.cv_folds, rng);
  for (int k = 0; k < cfg.cv_folds; ++k) {
    std::vector<Observation> train;
    std::vector<Observation> test;
    for (std::size_t n = 0; n < canon.size(); ++n) {
      (fold[n] == k ? test : train).push_back(canon.entries()[n]);
    }
    detail::require_domain(!test.empty() && !train.empty(), "cv: fold with zero entries");
    const ObservationSet train_set(obs.rows(), obs.cols(), std::move(train));

    // Cold starts: a warm-started fit can stop early near the previous
    // solution, which scores a different estimate than the final refit.
    for (std::size_t g = 0; g < curve.grid.size(); ++g) {
      SolverConfig fit_cfg = cfg;
      fit_cfg.lambda = curve.grid[g];
      const Matrix fit = soft_impute(train_set, fit_cfg).x;
      double err = 0.0;
      for (const auto& e : test) {
        const double r = e.value - fit(e.index.i, e.index.j);
        err += r * r;
      }
      curve.error[g] += err;
    }
  }
  return curve;
}

/// Grid value minimizing the summed held-out error; ties go to the larger lambda.
inline double cv_select_lambda(const ObservationSet& obs, const SolverConfig& cfg, RngStream& rng) {
  const CvCurve curve = cv_curve(obs, cfg, rng);
  std::size_t best = 0;
  for (std::size_t g = 1; g < curve.grid.size(); ++g) {
    if (curve.error[g] <= curve.error[best]) best = g;
  }
  return curve.grid[best];
}

/// Number of singular values above rank_tol * d1, clamped to [1, min(m1, m2) - 1].
inline Index estimate_rank(const Matrix& x_hat, double rank_tol) {
  detail::require_domain(x_hat.allFinite(), "estimate_rank: non-finite input");
  const Index upper = std::max<Index>(1, std::min(x_hat.rows(), x_hat.cols()) - 1);
  Eigen::BDCSVD<Matrix> dec(x_hat);
  const Vector& d = dec.singularValues();
  Index count = 0;
  if (d.size() > 0 && d(0) > 0.0) {
    for (Index k = 0; k < d.size(); ++k) count += d(k) > rank_tol * d(0) ? 1 : 0;
  }
  return std::clamp<Index>(count, 1, upper);
}

/// ||Y_Omega - X_Omega||^2 / eta2 + log(2 pi sigma2) rank(X)^2 + ||X||_F^2 / sigma2,
/// rank from estimate_rank at 1e-8. Diagnostic only.
inline double map_objective(const Matrix& x, const ObservationSet& obs, double sigma2, double eta2) {
  detail::require_dims(x.rows() == obs.rows() && x.cols() == obs.cols(), "map_objective: shape mismatch");
  detail::require_domain(sigma2 > 0.0 && eta2 > 0.0, "map_objective: variances must be positive");
  double fit = 0.0;
  for (const auto& e : obs.entries()) {
    const double r = e.value - x(e.index.i, e.index.j);
    fit += r * r;
  }
  const double rank = static_cast<double>(estimate_rank(x, 1e-8));
  return fit / eta2 + std::log(2.0 * std::numbers::pi * sigma2) * rank * rank + x.squaredNorm() / sigma2;
}

}  // namespace bayesmg
