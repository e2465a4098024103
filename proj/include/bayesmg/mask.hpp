#pragma once

// Observation masks (MCAR, intensity-band MNAR, explicit) and noisy
// observation of a ground-truth matrix.

#include <algorithm>
#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include "bayesmg/errors.hpp"
#include "bayesmg/linalg.hpp"
#include "bayesmg/observations.hpp"
#include "bayesmg/rng.hpp"

namespace bayesmg {

/// Each entry observed independently with probability p.
struct McarMask {
  double p = 0.5;
};

/// Bands cut at population quantiles of the true matrix. band_probs has
/// one more element than quantiles (lowest band first); entries equal to a
/// cut value use tie_prob.
struct MnarIntensityMask {
  std::vector<double> quantiles{0.5};
  std::vector<double> band_probs{0.10, 0.40};
  double tie_prob = 0.25;

  /// 40% above the median, 25% at it, 10% below.
  static MnarIntensityMask median_scheme() { return {}; }
};

struct ExplicitMask {
  std::vector<EntryIndex> indices;
};

using MaskSpec = std::variant<McarMask, MnarIntensityMask, ExplicitMask>;

inline void validate(const MaskSpec& spec) {
  auto prob_ok = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (const auto* m = std::get_if<McarMask>(&spec)) {
    detail::require_domain(prob_ok(m->p), "mask: MCAR probability must lie in [0, 1]");
  } else if (const auto* b = std::get_if<MnarIntensityMask>(&spec)) {
    detail::require_domain(b->band_probs.size() == b->quantiles.size() + 1,
                           "mask: need one more band probability than cut quantiles");
    for (std::size_t k = 0; k < b->quantiles.size(); ++k) {
      detail::require_domain(b->quantiles[k] > 0.0 && b->quantiles[k] < 1.0, "mask: quantiles must lie in (0, 1)");
      if (k > 0) detail::require_domain(b->quantiles[k] > b->quantiles[k - 1], "mask: quantiles must increase");
    }
    for (double p : b->band_probs) detail::require_domain(prob_ok(p), "mask: band probabilities must lie in [0, 1]");
    detail::require_domain(prob_ok(b->tie_prob), "mask: tie probability must lie in [0, 1]");
  }
}

/// Lower empirical quantile: the sorted value at floor((n - 1) q).
inline double population_quantile(const Matrix& x, double q) {
  std::vector<double> v(x.data(), x.data() + x.size());
  std::sort(v.begin(), v.end());
  const auto k = static_cast<std::size_t>(std::floor(q * static_cast<double>(v.size() - 1)));
  return v[k];
}

/// Observation probability of every entry under a mask.
inline Matrix mask_probabilities(const Matrix& x, const MaskSpec& spec) {
  validate(spec);
  Matrix p = Matrix::Zero(x.rows(), x.cols());
  if (const auto* m = std::get_if<McarMask>(&spec)) {
    p.setConstant(m->p);
  } else if (const auto* b = std::get_if<MnarIntensityMask>(&spec)) {
    std::vector<double> cuts;
    for (double q : b->quantiles) cuts.push_back(population_quantile(x, q));
    for (Index j = 0; j < x.cols(); ++j) {
      for (Index i = 0; i < x.rows(); ++i) {
        const double v = x(i, j);
        if (std::find(cuts.begin(), cuts.end(), v) != cuts.end()) {
          p(i, j) = b->tie_prob;
        } else {
          const auto band = static_cast<std::size_t>(std::upper_bound(cuts.begin(), cuts.end(), v) - cuts.begin());
          p(i, j) = b->band_probs[band];
        }
      }
    }
  } else {
    for (const auto& e : std::get<ExplicitMask>(spec).indices) {
      detail::require_dims(in_grid(e, x.rows(), x.cols()), "mask: explicit index out of grid");
      p(e.i, e.j) = 1.0;
    }
  }
  return p;
}

/// Select entries per the mask (column-major scan, one uniform per entry
/// for random modes) and add N(0, eta^2) noise to each selected value.
inline ObservationSet apply_mask(const Matrix& x, const MaskSpec& spec, double eta, RngStream& rng) {
  detail::require_domain(eta >= 0.0 && std::isfinite(eta), "mask: eta must be non-negative");
  detail::require_domain(x.allFinite(), "mask: non-finite truth");
  std::vector<Observation> entries;
  if (const auto* ex = std::get_if<ExplicitMask>(&spec)) {
    for (const auto& e : ex->indices) {
      detail::require_dims(in_grid(e, x.rows(), x.cols()), "mask: explicit index out of grid");
      entries.push_back({e, x(e.i, e.j)});
    }
  } else {
    const Matrix p = mask_probabilities(x, spec);
    for (Index j = 0; j < x.cols(); ++j) {
      for (Index i = 0; i < x.rows(); ++i) {
        if (rng.uniform() < p(i, j)) entries.push_back({{i, j}, x(i, j)});
      }
    }
  }
  detail::require_domain(!entries.empty(), "mask: no entries selected");
  for (auto& e : entries) e.value += eta * rng.normal();
  return ObservationSet(x.rows(), x.cols(), std::move(entries));
}

/// Exactly n entries chosen uniformly without replacement (partial
/// Fisher-Yates over the column-major grid).
inline ExplicitMask uniform_subset(Index m1, Index m2, Index n, RngStream& rng) {
  const Index total = m1 * m2;
  detail::require_domain(n >= 1 && n <= total, "mask: subset size out of range");
  std::vector<Index> slots(static_cast<std::size_t>(total));
  for (Index k = 0; k < total; ++k) slots[static_cast<std::size_t>(k)] = k;
  ExplicitMask out;
  for (Index k = 0; k < n; ++k) {
    const auto pick = k + static_cast<Index>(rng.below(static_cast<std::uint64_t>(total - k)));
    std::swap(slots[static_cast<std::size_t>(k)], slots[static_cast<std::size_t>(pick)]);
    const Index s = slots[static_cast<std::size_t>(k)];
    out.indices.push_back({s % m1, s / m1});
  }
  return out;
}

}  // namespace bayesmg
