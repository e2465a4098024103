#pragma once

// Dense kernels shared by every other module: frames on the Stiefel
// manifold, SVD, projections, and restricted Kronecker blocks.
//
// vec convention: column stacking, so entry (i, j) of an m1 x m2 matrix has
// linear index j * m1 + i. Projectors U U^T are never materialized.

#include <Eigen/Dense>

#include <compare>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bayesmg/errors.hpp"

namespace bayesmg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// 0-based (row, column) position in an m1 x m2 grid.
struct EntryIndex {
  Index i = 0;
  Index j = 0;

  constexpr Index linear(Index m1) const { return j * m1 + i; }
  friend constexpr auto operator<=>(const EntryIndex&, const EntryIndex&) = default;
};

inline bool in_grid(const EntryIndex& e, Index m1, Index m2) {
  return e.i >= 0 && e.i < m1 && e.j >= 0 && e.j < m2;
}

/// Column-orthonormal m x R matrix. Construction validates
/// columns^T columns = I_R to within kOrthoTol (Frobenius).
class Frame {
 public:
  static constexpr double kOrthoTol = 1e-10;

  Frame() = default;

  explicit Frame(Matrix columns) : cols_(std::move(columns)) {
    detail::require_domain(cols_.rows() >= 1 && cols_.cols() >= 1 && cols_.cols() <= cols_.rows(),
                           "frame: need 1 <= R <= m");
    detail::require_domain(cols_.allFinite(), "frame: non-finite entries");
    const double err = orthonormality_error();
    if (!(err <= kOrthoTol)) {
      throw DomainError("frame: columns not orthonormal (error " + std::to_string(err) + ")");
    }
  }

  /// Orthonormal basis for span(m) via Householder QR, with column signs
  /// fixed so the diagonal of R is non-negative.
  static Frame orthonormalize(const Matrix& m) {
    detail::require_domain(m.allFinite(), "frame: non-finite entries");
    detail::require_domain(m.cols() >= 1 && m.cols() <= m.rows(), "frame: need 1 <= R <= m");
    Eigen::HouseholderQR<Matrix> qr(m);
    Matrix q = qr.householderQ() * Matrix::Identity(m.rows(), m.cols());
    const Matrix& r = qr.matrixQR();
    for (Index k = 0; k < m.cols(); ++k) {
      if (r(k, k) < 0.0) q.col(k) = -q.col(k);
    }
    return Frame(std::move(q));
  }

  /// First R canonical basis vectors of R^m.
  static Frame canonical(Index m, Index rank) {
    return Frame(Matrix::Identity(m, rank));
  }

  const Matrix& matrix() const { return cols_; }
  Index ambient() const { return cols_.rows(); }
  Index rank() const { return cols_.cols(); }
  bool empty() const { return cols_.size() == 0; }

  double orthonormality_error() const {
    return (cols_.transpose() * cols_ - Matrix::Identity(cols_.cols(), cols_.cols())).norm();
  }

 private:
  Matrix cols_;
};

struct SvdResult {
  Frame u;
  Vector d;  // non-negative, non-increasing
  Frame v;
};

/// Thin SVD, optionally truncated to the leading `rank` triplets.
inline SvdResult svd(const Matrix& m, std::optional<Index> rank = std::nullopt) {
  detail::require_domain(m.size() > 0, "svd: empty matrix");
  detail::require_domain(m.allFinite(), "svd: non-finite input");
  const Index k = std::min(m.rows(), m.cols());
  const Index r = rank.value_or(k);
  detail::require_domain(r >= 1 && r <= k, "svd: rank must lie in [1, min(rows, cols)]");
  Eigen::JacobiSVD<Matrix> solver(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return SvdResult{Frame(solver.matrixU().leftCols(r)), solver.singularValues().head(r),
                   Frame(solver.matrixV().leftCols(r))};
}

enum class Side { left, right };

/// Left: F (F^T M). Right: (M F) F^T.
inline Matrix projection_apply(const Frame& f, const Matrix& m, Side side) {
  const Matrix& b = f.matrix();
  if (side == Side::left) {
    detail::require_dims(m.rows() == f.ambient(), "projection_apply: row mismatch");
    return b * (b.transpose() * m);
  }
  detail::require_dims(m.cols() == f.ambient(), "projection_apply: column mismatch");
  return (m * b) * b.transpose();
}

namespace detail {

inline Matrix gather_rows(const Matrix& basis, std::span<const EntryIndex> idx, bool row_coord) {
  Matrix out(static_cast<Index>(idx.size()), basis.cols());
  for (std::size_t n = 0; n < idx.size(); ++n) {
    out.row(static_cast<Index>(n)) = basis.row(row_coord ? idx[n].i : idx[n].j);
  }
  return out;
}

}  // namespace detail

/// Sub-block of (P_V kron P_U) with rows indexed by `row_indices` and columns
/// by `col_indices`: entry ((i,j),(k,l)) = P_U[i,k] * P_V[j,l].
inline Matrix kron_restricted(const Frame& u, const Frame& v, std::span<const EntryIndex> row_indices,
                              std::span<const EntryIndex> col_indices) {
  detail::require_dims(u.rank() == v.rank(), "kron_restricted: frame ranks differ");
  for (auto span : {row_indices, col_indices}) {
    for (const auto& e : span) {
      detail::require_dims(in_grid(e, u.ambient(), v.ambient()), "kron_restricted: index out of grid");
    }
  }
  const Matrix ur = detail::gather_rows(u.matrix(), row_indices, true);
  const Matrix uc = detail::gather_rows(u.matrix(), col_indices, true);
  const Matrix vr = detail::gather_rows(v.matrix(), row_indices, false);
  const Matrix vc = detail::gather_rows(v.matrix(), col_indices, false);
  return ((ur * uc.transpose()).array() * (vr * vc.transpose()).array()).matrix();
}

/// Orthonormal basis of the orthogonal complement of span(columns).
inline Matrix null_complement(const Matrix& columns) {
  const Index m = columns.rows();
  const Index k = columns.cols();
  Eigen::HouseholderQR<Matrix> qr(columns);
  Matrix q = qr.householderQ();
  return q.rightCols(m - k);
}

}  // namespace bayesmg
