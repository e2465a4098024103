#pragma once

// Posterior summaries, recovery metrics and convergence diagnostics.

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "bayesmg/errors.hpp"
#include "bayesmg/gibbs.hpp"
#include "bayesmg/linalg.hpp"
#include "bayesmg/smg.hpp"

namespace bayesmg {

/// Entrywise [lower, upper] posterior intervals at a given level.
struct IntervalSet {
  Matrix lower;
  Matrix upper;
  double level = 0.95;

  Matrix width() const { return upper - lower; }
  Index rows() const { return lower.rows(); }
  Index cols() const { return lower.cols(); }
};

/// (1/T) sum_t ||truth - X_t||_F.
inline double mfe(std::span<const Matrix> samples, const Matrix& truth) {
  detail::require_domain(!samples.empty(), "mfe: no samples");
  double acc = 0.0;
  for (const auto& x : samples) {
    detail::require_dims(x.rows() == truth.rows() && x.cols() == truth.cols(), "mfe: shape mismatch");
    acc += (truth - x).norm();
  }
  return acc / static_cast<double>(samples.size());
}

inline double mfe(const PosteriorSamples& samples, const Matrix& truth) { return mfe(samples.x_samples, truth); }

/// sqrt(1 - ||A^T B||_2^2), clamped to [0, 1].
inline double spectral_distance(const Frame& a, const Frame& b) {
  detail::require_dims(a.ambient() == b.ambient() && a.rank() == b.rank(), "spectral_distance: frame shapes differ");
  const Matrix c = a.matrix().transpose() * b.matrix();
  const double s = Eigen::JacobiSVD<Matrix>(c).singularValues()(0);
  return std::sqrt(std::clamp(1.0 - s * s, 0.0, 1.0));
}

/// Mean spectral distance of frame samples to a reference frame.
inline double msd(std::span<const Frame> samples, const Frame& truth) {
  detail::require_domain(!samples.empty(), "msd: no samples");
  double acc = 0.0;
  for (const auto& f : samples) acc += spectral_distance(f, truth);
  return acc / static_cast<double>(samples.size());
}

/// Shortest window [sorted[k], sorted[k + c - 1]] with c = ceil(level * T);
/// the earliest window wins ties.
inline std::pair<double, double> hpd_interval(std::vector<double> values, double level) {
  detail::require_domain(level > 0.0 && level < 1.0, "hpd: level must lie in (0, 1)");
  detail::require_domain(values.size() >= 20, "hpd: need at least 20 samples");
  std::sort(values.begin(), values.end());
  const std::size_t t = values.size();
  auto c = static_cast<std::size_t>(std::ceil(level * static_cast<double>(t) - 1e-12));
  c = std::clamp<std::size_t>(c, 1, t);
  std::size_t best = 0;
  double best_w = values[c - 1] - values[0];
  for (std::size_t k = 1; k + c <= t; ++k) {
    const double w = values[k + c - 1] - values[k];
    if (w < best_w) {
      best_w = w;
      best = k;
    }
  }
  return {values[best], values[best + c - 1]};
}

inline IntervalSet hpd_intervals(std::span<const Matrix> samples, double level) {
  detail::require_domain(samples.size() >= 20, "hpd: need at least 20 samples");
  const Index m1 = samples.front().rows();
  const Index m2 = samples.front().cols();
  IntervalSet out{Matrix(m1, m2), Matrix(m1, m2), level};
  std::vector<double> buf(samples.size());
  for (Index j = 0; j < m2; ++j) {
    for (Index i = 0; i < m1; ++i) {
      for (std::size_t t = 0; t < samples.size(); ++t) buf[t] = samples[t](i, j);
      const auto [lo, hi] = hpd_interval(buf, level);
      out.lower(i, j) = lo;
      out.upper(i, j) = hi;
    }
  }
  return out;
}

inline IntervalSet hpd_intervals(const PosteriorSamples& samples, double level) {
  return hpd_intervals(samples.x_samples, level);
}

/// Fraction of entries (all, or only `restrict_to`) whose truth lies in its interval.
inline double coverage_ratio(const IntervalSet& iv, const Matrix& truth,
                             std::optional<std::span<const EntryIndex>> restrict_to = std::nullopt) {
  detail::require_dims(iv.rows() == truth.rows() && iv.cols() == truth.cols() && iv.upper.rows() == truth.rows() &&
                           iv.upper.cols() == truth.cols(),
                       "coverage: shape mismatch");
  auto hit = [&](Index i, Index j) { return iv.lower(i, j) <= truth(i, j) && truth(i, j) <= iv.upper(i, j); };
  std::size_t covered = 0;
  std::size_t total = 0;
  if (restrict_to) {
    for (const auto& e : *restrict_to) {
      detail::require_dims(in_grid(e, truth.rows(), truth.cols()), "coverage: index out of grid");
      covered += hit(e.i, e.j) ? 1 : 0;
      ++total;
    }
  } else {
    for (Index j = 0; j < truth.cols(); ++j) {
      for (Index i = 0; i < truth.rows(); ++i) covered += hit(i, j) ? 1 : 0;
    }
    total = static_cast<std::size_t>(truth.size());
  }
  detail::require_domain(total > 0, "coverage: empty index set");
  return static_cast<double>(covered) / static_cast<double>(total);
}

/// Potential scale reduction sqrt(((n-1)/n W + B/n) / W) for equal-length chains.
inline double gelman_rubin(const std::vector<std::vector<double>>& chains) {
  detail::require_domain(chains.size() >= 2, "gelman_rubin: need at least 2 chains");
  const std::size_t n = chains.front().size();
  detail::require_domain(n >= 10, "gelman_rubin: chains must have length >= 10");
  for (const auto& c : chains) detail::require_dims(c.size() == n, "gelman_rubin: unequal chain lengths");

  const double nn = static_cast<double>(n);
  const double mm = static_cast<double>(chains.size());
  std::vector<double> means;
  double within = 0.0;
  for (const auto& c : chains) {
    double mean = 0.0;
    for (double v : c) mean += v;
    mean /= nn;
    double ss = 0.0;
    for (double v : c) ss += (v - mean) * (v - mean);
    within += ss / (nn - 1.0);
    means.push_back(mean);
  }
  within /= mm;
  double grand = 0.0;
  for (double v : means) grand += v;
  grand /= mm;
  double between = 0.0;
  for (double v : means) between += (v - grand) * (v - grand);
  between *= nn / (mm - 1.0);
  if (within == 0.0) {
    return between == 0.0 ? std::sqrt((nn - 1.0) / nn) : std::numeric_limits<double>::infinity();
  }
  return std::sqrt(((nn - 1.0) / nn * within + between / nn) / within);
}

/// Named scalar summary of a retained state.
struct TraceSummary {
  std::string name;
  std::function<double(const ModelState&, const Matrix&)> fn;
};

/// sigma2, eta2, mu_1(U) and the listed X entries, in the trace CSV order.
inline std::vector<TraceSummary> standard_summaries(std::span<const EntryIndex> entries) {
  std::vector<TraceSummary> out;
  out.push_back({"sigma2", [](const ModelState& s, const Matrix&) { return s.sigma2; }});
  out.push_back({"eta2", [](const ModelState& s, const Matrix&) { return s.eta2; }});
  out.push_back({"mu1", [](const ModelState& s, const Matrix&) { return coherence(s.u, 0); }});
  for (const auto& e : entries) {
    out.push_back({"x_" + std::to_string(e.i) + "_" + std::to_string(e.j),
                   [e](const ModelState&, const Matrix& x) { return x(e.i, e.j); }});
  }
  return out;
}

/// One R-hat per summary; NaN where chains are too short or fewer than 2.
inline std::vector<double> gelman_rubin_summaries(const PosteriorSamples& s, const std::vector<TraceSummary>& sums) {
  std::vector<double> out;
  for (const auto& sum : sums) {
    std::vector<std::vector<double>> chains;
    for (int c = 0; c < s.n_chains; ++c) chains.push_back(s.chain_trace(c, sum.fn));
    bool ok = chains.size() >= 2;
    for (const auto& c : chains) ok = ok && c.size() >= 10 && c.size() == chains.front().size();
    out.push_back(ok ? gelman_rubin(chains) : std::numeric_limits<double>::quiet_NaN());
  }
  return out;
}

/// CSV with header `iter,<summary names>`; one row per retained draw. With
/// several chains a `chain` column follows `iter`.
inline void write_trace_csv(std::ostream& os, const PosteriorSamples& s, const std::vector<TraceSummary>& sums) {
  os << "iter";
  if (s.n_chains > 1) os << ",chain";
  for (const auto& sum : sums) os << ',' << sum.name;
  os << '\n';
  os << std::setprecision(17);
  for (std::size_t t = 0; t < s.size(); ++t) {
    os << s.iteration[t];
    if (s.n_chains > 1) os << ',' << s.chain[t];
    for (const auto& sum : sums) os << ',' << sum.fn(s.states[t], s.x_samples[t]);
    os << '\n';
  }
}

struct MetricReport {
  double mfe = 0.0;
  double msd_row = 0.0;
  double msd_col = 0.0;
  double coverage = 0.0;
  double mean_hpd_width = 0.0;
  std::vector<std::string> gr_names;
  std::vector<double> gelman_rubin;
};

/// All metrics against a known truth (frames from its rank-R SVD).
inline MetricReport metric_report(const PosteriorSamples& s, const Matrix& truth, Index rank, double level = 0.95,
                                  std::span<const EntryIndex> trace_entries = {}) {
  MetricReport r;
  r.mfe = mfe(s, truth);
  const SvdResult dec = svd(truth, rank);
  r.msd_row = msd(s.row_frames(), dec.u);
  r.msd_col = msd(s.col_frames(), dec.v);
  const IntervalSet iv = hpd_intervals(s, level);
  r.coverage = coverage_ratio(iv, truth);
  r.mean_hpd_width = iv.width().mean();
  const auto sums = standard_summaries(trace_entries);
  for (const auto& sum : sums) r.gr_names.push_back(sum.name);
  r.gelman_rubin = gelman_rubin_summaries(s, sums);
  return r;
}

}  // namespace bayesmg
