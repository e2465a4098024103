#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "bayesmg/errors.hpp"
#include "bayesmg/linalg.hpp"

namespace bayesmg {

struct Observation {
  EntryIndex index;
  double value = 0.0;
};

/// Noisy entries Y_Omega on an m1 x m2 grid. Indices are distinct and in
/// range, values finite; insertion order is preserved.
class ObservationSet {
 public:
  ObservationSet() = default;

  ObservationSet(Index m1, Index m2, std::vector<Observation> entries)
      : m1_(m1), m2_(m2), entries_(std::move(entries)) {
    detail::require_domain(m1 >= 1 && m2 >= 1, "observations: grid dimensions must be positive");
    mask_.assign(static_cast<std::size_t>(m1 * m2), false);
    for (const auto& e : entries_) {
      detail::require_dims(in_grid(e.index, m1, m2),
                           "observations: index (" + std::to_string(e.index.i) + "," + std::to_string(e.index.j) +
                               ") out of range");
      detail::require_domain(std::isfinite(e.value), "observations: non-finite value");
      const auto slot = static_cast<std::size_t>(e.index.linear(m1));
      detail::require_domain(!mask_[slot], "observations: duplicate index (" + std::to_string(e.index.i) + "," +
                                        std::to_string(e.index.j) + ")");
      mask_[slot] = true;
    }
  }

  /// Every entry of a dense matrix, column-major order.
  static ObservationSet from_dense(const Matrix& full) {
    std::vector<Observation> entries;
    entries.reserve(static_cast<std::size_t>(full.size()));
    for (Index j = 0; j < full.cols(); ++j) {
      for (Index i = 0; i < full.rows(); ++i) entries.push_back({{i, j}, full(i, j)});
    }
    return ObservationSet(full.rows(), full.cols(), std::move(entries));
  }

  Index rows() const { return m1_; }
  Index cols() const { return m2_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<Observation>& entries() const { return entries_; }

  bool contains(const EntryIndex& e) const {
    return in_grid(e, m1_, m2_) && mask_[static_cast<std::size_t>(e.linear(m1_))];
  }

  std::vector<EntryIndex> indices() const {
    std::vector<EntryIndex> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.index);
    return out;
  }

  Vector values() const {
    Vector out(static_cast<Index>(entries_.size()));
    for (std::size_t n = 0; n < entries_.size(); ++n) out(static_cast<Index>(n)) = entries_[n].value;
    return out;
  }

  /// Unobserved positions, column-major order.
  std::vector<EntryIndex> missing() const {
    std::vector<EntryIndex> out;
    for (Index j = 0; j < m2_; ++j) {
      for (Index i = 0; i < m1_; ++i) {
        if (!mask_[static_cast<std::size_t>(j * m1_ + i)]) out.push_back({i, j});
      }
    }
    return out;
  }

  Matrix zero_filled() const {
    Matrix out = Matrix::Zero(m1_, m2_);
    for (const auto& e : entries_) out(e.index.i, e.index.j) = e.value;
    return out;
  }

  /// Indicator matrix, 1.0 where observed.
  Matrix mask() const {
    Matrix out = Matrix::Zero(m1_, m2_);
    for (const auto& e : entries_) out(e.index.i, e.index.j) = 1.0;
    return out;
  }

  /// Same set with entries sorted by column-major linear index.
  ObservationSet canonical() const {
    auto sorted = entries_;
    std::sort(sorted.begin(), sorted.end(), [this](const Observation& a, const Observation& b) {
      return a.index.linear(m1_) < b.index.linear(m1_);
    });
    return ObservationSet(m1_, m2_, std::move(sorted));
  }

 private:
  Index m1_ = 0;
  Index m2_ = 0;
  std::vector<Observation> entries_;
  std::vector<bool> mask_;
};

}  // namespace bayesmg
