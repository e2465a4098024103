#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "bayesmg/linalg.hpp"
#include "bayesmg/observations.hpp"
#include "bayesmg/rng.hpp"
#include "bayesmg/samplers.hpp"
#include "bayesmg/smg.hpp"
#include "bayesmg/special.hpp"
#include "support/oracles.hpp"

using namespace bayesmg;

namespace {

Matrix gaussian_matrix(Index r, Index c, RngStream& rng) {
  Matrix m(r, c);
  for (Index j = 0; j < c; ++j) {
    for (Index i = 0; i < r; ++i) m(i, j) = rng.normal();
  }
  return m;
}

Frame random_frame(Index m, Index r, RngStream& rng) { return Frame::orthonormalize(gaussian_matrix(m, r, rng)); }

std::vector<EntryIndex> full_grid(Index m1, Index m2) {
  std::vector<EntryIndex> out;
  for (Index j = 0; j < m2; ++j) {
    for (Index i = 0; i < m1; ++i) out.push_back({i, j});
  }
  return out;
}

ObservationSet random_observations(Index m1, Index m2, Index n, RngStream& rng) {
  auto grid = full_grid(m1, m2);
  std::vector<Observation> entries;
  for (Index k = 0; k < n; ++k) {
    const auto pick = k + static_cast<Index>(rng.below(static_cast<std::uint64_t>(grid.size()) - k));
    std::swap(grid[k], grid[pick]);
    entries.push_back({grid[k], rng.normal()});
  }
  return ObservationSet(m1, m2, std::move(entries));
}

}  // namespace

// ---------------------------------------------------------------- linalg

TEST(Svd, IdentityHasUnitSpectrum) {
  const SvdResult s = svd(Matrix::Identity(3, 3));
  EXPECT_NEAR((s.d - Vector::Ones(3)).norm(), 0.0, 1e-14);
  EXPECT_NEAR((s.u.matrix() * s.v.matrix().transpose() - Matrix::Identity(3, 3)).norm(), 0.0, 1e-12);
}

TEST(Svd, RankOneOuterProduct) {
  Vector u(3), v(3);
  u << 2.0, 0.0, 0.0;
  v << 0.0, 3.0, 0.0;
  const SvdResult s = svd(u * v.transpose());
  EXPECT_NEAR(s.d(0), 6.0, 1e-12);
  EXPECT_NEAR(s.d(1), 0.0, 1e-12);
  EXPECT_NEAR(s.d(2), 0.0, 1e-12);
}

TEST(Svd, MatchesJacobiOracle) {
  RngStream rng(11);
  const Matrix a = gaussian_matrix(5, 4, rng);
  const SvdResult s = svd(a);
  const oracle::JacobiSvd o = oracle::jacobi_svd(a);
  EXPECT_LT((s.d - o.d).cwiseAbs().maxCoeff(), 1e-12);
  const Matrix rec = s.u.matrix() * s.d.asDiagonal() * s.v.matrix().transpose();
  EXPECT_LT((rec - a).norm(), 1e-10);
  const Matrix rec_o = o.u * o.d.asDiagonal() * o.v.transpose();
  EXPECT_LT((rec_o - a).norm(), 1e-10);
}

TEST(Svd, ReconstructsAndSortsAcrossShapes) {
  RngStream rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const Index r = 1 + static_cast<Index>(rng.below(7));
    const Index c = 1 + static_cast<Index>(rng.below(7));
    const Matrix a = gaussian_matrix(r, c, rng);
    const SvdResult s = svd(a);
    const Matrix rec = s.u.matrix() * s.d.asDiagonal() * s.v.matrix().transpose();
    EXPECT_LT((rec - a).norm() / a.norm(), 1e-8);
    for (Index k = 1; k < s.d.size(); ++k) EXPECT_LE(s.d(k), s.d(k - 1));
    EXPECT_GE(s.d.minCoeff(), 0.0);
    EXPECT_LE(s.u.orthonormality_error(), 1e-10);
    EXPECT_LE(s.v.orthonormality_error(), 1e-10);
  }
}

TEST(Svd, TruncatedRankKeepsLeadingTriplets) {
  RngStream rng(13);
  const Matrix a = gaussian_matrix(6, 5, rng);
  const SvdResult full = svd(a);
  const SvdResult two = svd(a, 2);
  ASSERT_EQ(two.d.size(), 2);
  EXPECT_NEAR(two.d(0), full.d(0), 1e-12);
  EXPECT_NEAR(two.d(1), full.d(1), 1e-12);
  EXPECT_THROW(svd(a, 6), DomainError);
}

TEST(Svd, RejectsNonFinite) {
  Matrix a = Matrix::Ones(2, 2);
  a(0, 1) = std::nan("");
  EXPECT_THROW(svd(a), DomainError);
}

TEST(FrameType, RejectsNonOrthonormalColumns) {
  Matrix a = Matrix::Identity(3, 2);
  a(0, 1) = 1e-6;
  EXPECT_THROW(Frame{a}, DomainError);
  EXPECT_THROW(Frame(Matrix::Identity(2, 3)), DomainError);
}

TEST(FrameType, OrthonormalizeSpansInput) {
  RngStream rng(14);
  const Matrix a = gaussian_matrix(7, 3, rng);
  const Frame f = Frame::orthonormalize(a);
  EXPECT_LE(f.orthonormality_error(), 1e-10);
  EXPECT_LT((projection_apply(f, a, Side::left) - a).norm(), 1e-10);
}

TEST(Projection, CanonicalBasisZeroesOtherRows) {
  const Frame e1 = Frame::canonical(2, 1);
  const Matrix out = projection_apply(e1, Matrix::Identity(2, 2), Side::left);
  EXPECT_DOUBLE_EQ(out(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(out(1, 1), 0.0);
  EXPECT_DOUBLE_EQ(out(0, 0), 1.0);
}

TEST(Projection, FullSquareFrameIsIdentityMap) {
  RngStream rng(15);
  const Frame q = random_frame(4, 4, rng);
  const Matrix m = gaussian_matrix(4, 3, rng);
  EXPECT_LT((projection_apply(q, m, Side::left) - m).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((projection_apply(q, m.transpose(), Side::right) - m.transpose()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Projection, IdempotentOnRandomInputs) {
  RngStream rng(16);
  for (int trial = 0; trial < 10; ++trial) {
    const Frame f = random_frame(6, 2, rng);
    const Matrix m = gaussian_matrix(6, 5, rng);
    const Matrix once = projection_apply(f, m, Side::left);
    EXPECT_LT((projection_apply(f, once, Side::left) - once).cwiseAbs().maxCoeff(), 1e-12);
    const Matrix r1 = projection_apply(f, m.transpose(), Side::right);
    EXPECT_LT((projection_apply(f, r1, Side::right) - r1).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Projection, DimensionMismatchThrows) {
  const Frame f = Frame::canonical(3, 1);
  EXPECT_THROW(projection_apply(f, Matrix::Ones(2, 2), Side::left), DimensionError);
  EXPECT_THROW(projection_apply(f, Matrix::Ones(2, 2), Side::right), DimensionError);
}

TEST(KronRestricted, FullSpacesGiveIdentityBlock) {
  const Frame u = Frame::canonical(3, 3);
  const Frame v = Frame::canonical(3, 3);
  const std::vector<EntryIndex> rows{{0, 0}, {1, 2}, {2, 1}};
  const std::vector<EntryIndex> cols{{1, 2}, {0, 0}, {2, 2}};
  const Matrix k = kron_restricted(u, v, rows, cols);
  Matrix expect = Matrix::Zero(3, 3);
  expect(0, 1) = 1.0;
  expect(1, 0) = 1.0;
  EXPECT_LT((k - expect).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(KronRestricted, DiagonalIsCoherenceProduct) {
  RngStream rng(17);
  const Frame u = random_frame(5, 2, rng);
  const Frame v = random_frame(4, 2, rng);
  const std::vector<EntryIndex> idx{{3, 1}};
  EXPECT_NEAR(kron_restricted(u, v, idx, idx)(0, 0), coherence(u, 3) * coherence(v, 1), 1e-14);
}

TEST(KronRestricted, MatchesExplicitKronecker) {
  RngStream rng(18);
  struct Shape {
    Index m1, m2, r;
  };
  for (const Shape s : {Shape{4, 4, 1}, Shape{8, 8, 2}, Shape{5, 3, 2}, Shape{2, 7, 1}}) {
    const Frame u = random_frame(s.m1, s.r, rng);
    const Frame v = random_frame(s.m2, s.r, rng);
    const auto grid = full_grid(s.m1, s.m2);
    const Matrix k = kron_restricted(u, v, grid, grid);
    const Matrix o = oracle::explicit_kron(u.matrix(), v.matrix());
    EXPECT_LT((k - o).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(KronRestricted, OutOfGridThrows) {
  const Frame u = Frame::canonical(3, 1);
  const std::vector<EntryIndex> bad{{3, 0}};
  const std::vector<EntryIndex> ok{{0, 0}};
  EXPECT_THROW(kron_restricted(u, u, bad, ok), DimensionError);
}

TEST(NullComplement, OrthogonalToInputAndOrthonormal) {
  RngStream rng(19);
  const Frame f = random_frame(6, 2, rng);
  const Matrix n = null_complement(f.matrix());
  ASSERT_EQ(n.cols(), 4);
  EXPECT_LT((f.matrix().transpose() * n).norm(), 1e-12);
  EXPECT_LT((n.transpose() * n - Matrix::Identity(4, 4)).norm(), 1e-12);
}

// ---------------------------------------------------------------- rng, special

TEST(Rng, SameSeedSameSequence) {
  RngStream a(99), b(99);
  for (int k = 0; k < 100; ++k) {
    EXPECT_EQ(a.uniform(), b.uniform());
    EXPECT_EQ(a.normal(), b.normal());
    EXPECT_EQ(a.gamma(0.7), b.gamma(0.7));
  }
}

TEST(Rng, DerivedStreamsDiffer) {
  const RngStream base(5);
  RngStream a = base.derive(0);
  RngStream b = base.derive(1);
  int same = 0;
  for (int k = 0; k < 50; ++k) same += a.uniform() == b.uniform() ? 1 : 0;
  EXPECT_EQ(same, 0);
  RngStream c = base.derive(1);
  RngStream d = base.derive(1);
  EXPECT_EQ(c.normal(), d.normal());
}

TEST(Rng, UniformStaysInOpenInterval) {
  RngStream rng(6);
  for (int k = 0; k < 100000; ++k) {
    const double u = rng.uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Bessel, LogBesselMatchesStandardLibrary) {
  for (double nu : {0.0, 0.5, 1.0, 2.5, 10.0, 30.0}) {
    for (double x : {1e-3, 0.1, 0.5, 2.0, 5.0, 20.0, 50.0, 150.0, 300.0, 600.0}) {
      const double ref = std::log(std::cyl_bessel_i(nu, x));
      EXPECT_NEAR(log_bessel_i(nu, x), ref, 1e-9 * std::max(1.0, std::abs(ref))) << "nu=" << nu << " x=" << x;
    }
  }
}

TEST(Bessel, LargeArgumentStaysFinite) {
  const double v = log_bessel_i(3.0, 1e5);
  EXPECT_TRUE(std::isfinite(v));
  // log I_nu(x) ~ x - log(2 pi x) / 2 for x >> nu^2.
  EXPECT_NEAR(v, 1e5 - 0.5 * std::log(2.0 * std::numbers::pi * 1e5), 1e-3);
}

// ---------------------------------------------------------------- vMF

TEST(VmfKernel, ZeroConcentrationIsZero) {
  RngStream rng(20);
  const VmfParams p{Matrix::Zero(5, 2)};
  for (int k = 0; k < 5; ++k) EXPECT_EQ(vmf_log_kernel(random_frame(5, 2, rng), p), 0.0);
}

TEST(VmfKernel, SelfAlignmentIsOne) {
  RngStream rng(21);
  const Frame w = random_frame(4, 1, rng);
  EXPECT_NEAR(vmf_log_kernel(w, VmfParams{w.matrix()}), 1.0, 1e-14);
}

TEST(VmfKernel, MatchesElementwiseLoop) {
  RngStream rng(22);
  const Frame w = random_frame(4, 2, rng);
  const Matrix f = gaussian_matrix(4, 2, rng);
  double acc = 0.0;
  for (Index a = 0; a < 4; ++a) {
    for (Index b = 0; b < 2; ++b) acc += f(a, b) * w.matrix()(a, b);
  }
  EXPECT_NEAR(vmf_log_kernel(w, VmfParams{f}), acc, 1e-14);
}

TEST(VmfKernel, DimensionMismatchThrows) {
  EXPECT_THROW(vmf_log_kernel(Frame::canonical(4, 2), VmfParams{Matrix::Zero(4, 1)}), DimensionError);
}

TEST(MatrixVmf, UniformLawHasCoherenceMeanRankOverM) {
  RngStream rng(23);
  const VmfParams p{Matrix::Zero(8, 2)};
  Vector acc = Vector::Zero(8);
  const int draws = 20000;
  for (int t = 0; t < draws; ++t) {
    const Frame w = sample_matrix_vmf(p, rng);
    ASSERT_LE(w.orthonormality_error(), 1e-10);
    acc += coherences(w);
  }
  acc /= draws;
  for (Index i = 0; i < 8; ++i) {
    EXPECT_GE(acc(i), 0.23);
    EXPECT_LE(acc(i), 0.27);
  }
}

TEST(MatrixVmf, VectorCaseMeanDirectionAlignsWithConcentration) {
  RngStream rng(24);
  Vector dir(5);
  dir << 1.0, -2.0, 0.5, 0.0, 1.5;
  dir.normalize();
  const VmfParams p{50.0 * dir};
  Vector acc = Vector::Zero(5);
  for (int t = 0; t < 10000; ++t) acc += sample_matrix_vmf(p, rng).matrix().col(0);
  const double angle = std::acos(std::clamp(acc.normalized().dot(dir), -1.0, 1.0));
  EXPECT_LT(angle, 0.05);
}

TEST(MatrixVmf, LargeConcentrationStaysNearMode) {
  // Near the mode, kappa * (Procrustes distance)^2 is roughly chi-square with
  // (m - R) R degrees of freedom: the directions leaving span(W0).
  RngStream rng(25);
  const Frame w0 = random_frame(5, 2, rng);
  const double kappa = 1000.0;
  const VmfParams p{kappa * w0.matrix()};
  double acc = 0.0;
  const int draws = 2000;
  for (int t = 0; t < draws; ++t) {
    const double d = oracle::procrustes_distance(sample_matrix_vmf(p, rng).matrix(), w0.matrix());
    ASSERT_LT(d, 0.3);
    acc += kappa * d * d;
  }
  EXPECT_NEAR(acc / draws, 6.0, 0.6);
}

TEST(MatrixVmf, MeanAngleShrinksWithConcentration) {
  RngStream rng(26);
  Vector e1 = Vector::Zero(3);
  e1(0) = 1.0;
  double prev = 10.0;
  for (double kappa : {1.0, 10.0, 100.0}) {
    Vector acc = Vector::Zero(3);
    for (int t = 0; t < 10000; ++t) acc += sample_matrix_vmf(VmfParams{kappa * e1}, rng).matrix().col(0);
    const double angle = std::acos(std::clamp(acc.normalized()(0), -1.0, 1.0));
    EXPECT_LT(angle, prev) << "kappa=" << kappa;
    prev = angle;
  }
}

TEST(MatrixVmf, SameSeedSameDraws) {
  Matrix f = Matrix::Zero(6, 2);
  f(0, 0) = 3.0;
  f(1, 1) = 2.0;
  RngStream a(27), b(27);
  for (int t = 0; t < 20; ++t) {
    EXPECT_EQ(sample_matrix_vmf(VmfParams{f}, a).matrix(), sample_matrix_vmf(VmfParams{f}, b).matrix());
  }
}

TEST(MatrixVmf, ProposalCapRaises) {
  RngStream rng(28);
  VmfOptions opts;
  opts.max_proposals = 1;
  Matrix f(30, 10);
  RngStream g(1);
  f = 40.0 * gaussian_matrix(30, 10, g);
  EXPECT_THROW(
      {
        for (int t = 0; t < 50; ++t) sample_matrix_vmf(VmfParams{f}, rng, opts);
      },
      NumericalError);
}

TEST(MatrixVmf, ColumnGibbsPreservesTarget) {
  // A chain made only of column-wise Gibbs sweeps must reproduce moments of
  // exact draws: E tr(F^T W) and mean coherences.
  RngStream rng(29);
  Matrix f = Matrix::Zero(5, 2);
  f(0, 0) = 4.0;
  f(1, 0) = 1.0;
  f(2, 1) = -3.0;
  const VmfParams p{f};
  const int draws = 40000;
  double exact_k = 0.0;
  Vector exact_mu = Vector::Zero(5);
  for (int t = 0; t < draws; ++t) {
    const Frame w = sample_matrix_vmf(p, rng);
    exact_k += vmf_log_kernel(w, p);
    exact_mu += coherences(w);
  }
  VmfOptions gibbs_only;
  gibbs_only.exact_attempts = 0;
  VmfStats stats;
  Frame w = Frame::canonical(5, 2);
  double chain_k = 0.0;
  Vector chain_mu = Vector::Zero(5);
  for (int t = 0; t < draws + 500; ++t) {
    w = update_frame_vmf(p, w, rng, gibbs_only, &stats);
    if (t < 500) continue;
    chain_k += vmf_log_kernel(w, p);
    chain_mu += coherences(w);
  }
  EXPECT_EQ(stats.gibbs_fallbacks, static_cast<std::size_t>(draws + 500));
  EXPECT_NEAR(chain_k / draws, exact_k / draws, 0.05);
  EXPECT_LT((chain_mu - exact_mu).cwiseAbs().maxCoeff() / draws, 0.02);
}

TEST(MatrixVmf, UpdateUsesExactDrawWhenAvailable) {
  RngStream rng(30);
  VmfStats stats;
  const Frame w = update_frame_vmf(VmfParams{Matrix::Zero(4, 2)}, Frame::canonical(4, 2), rng, {}, &stats);
  EXPECT_EQ(stats.gibbs_fallbacks, 0u);
  EXPECT_LE(w.orthonormality_error(), 1e-10);
}

// ---------------------------------------------------------------- repulsed normal

TEST(RepulsedNormal, SingleValueIsGaussianKernel) {
  Vector mu(1), d(1);
  mu << 0.7;
  d << 1.9;
  EXPECT_NEAR(repulsed_normal_log_density_unnorm(d, {mu, 0.3}), -(1.9 - 0.7) * (1.9 - 0.7) / 0.6, 1e-14);
}

TEST(RepulsedNormal, TiedValuesHaveZeroDensity) {
  Vector d(2), mu = Vector::Zero(2);
  d << 2.0, 2.0;
  EXPECT_EQ(repulsed_normal_log_density_unnorm(d, {mu, 1.0}), -std::numeric_limits<double>::infinity());
}

TEST(RepulsedNormal, HandEvaluatedPair) {
  Vector d(2), mu = Vector::Zero(2);
  d << 1.0, 2.0;
  EXPECT_NEAR(repulsed_normal_log_density_unnorm(d, {mu, 1.0}), -2.5 + std::log(3.0), 1e-14);
}

TEST(RepulsedNormal, NonPositiveValueThrows) {
  Vector d(2), mu = Vector::Zero(2);
  d << 1.0, 0.0;
  EXPECT_THROW(repulsed_normal_log_density_unnorm(d, {mu, 1.0}), DomainError);
  Vector mu1(1);
  mu1 << 1.0;
  EXPECT_THROW(validate(RepulsedNormalParams{mu1, 0.0}), DomainError);
}

TEST(RepulsedNormal, DrawsArePositive) {
  RngStream rng(31);
  Vector mu(3);
  mu << -0.5, 0.1, 0.2;
  const RepulsedNormalParams p{mu, 0.3};
  Vector x = sample_repulsed_normal(p, rng);
  for (int t = 0; t < 2000; ++t) {
    x = sample_repulsed_normal(p, rng, x);
    ASSERT_TRUE((x.array() > 0.0).all());
  }
}

TEST(RepulsedNormal, SingleValueMatchesTruncatedNormal) {
  RngStream rng(32);
  Vector mu(1);
  mu << 2.0;
  const RepulsedNormalParams p{mu, 0.25};
  const double sd = 0.5;
  const int bins = 50;
  const double lo = 0.0, hi = 4.5;
  std::vector<double> count(bins + 1, 0.0);
  Vector x = sample_repulsed_normal(p, rng);
  for (int t = 0; t < 1000; ++t) x = sample_repulsed_normal(p, rng, x);
  const int draws = 50000;
  for (int t = 0; t < draws; ++t) {
    x = sample_repulsed_normal(p, rng, x);
    const int b = std::min(bins, static_cast<int>((x(0) - lo) / (hi - lo) * bins));
    count[static_cast<std::size_t>(b)] += 1.0;
  }
  double tv = 0.0;
  for (int b = 0; b < bins; ++b) {
    const double a = lo + (hi - lo) * b / bins;
    const double c = lo + (hi - lo) * (b + 1) / bins;
    tv += std::abs(count[static_cast<std::size_t>(b)] / draws - oracle::truncated_normal_mass(a, c, 2.0, sd));
  }
  tv += std::abs(count[bins] / draws - oracle::truncated_normal_mass(hi, 1e9, 2.0, sd));
  EXPECT_LT(0.5 * tv, 0.05);
}

TEST(RepulsedNormal, PairMatchesQuadrature) {
  RngStream rng(33);
  Vector mu(2);
  mu << 1.0, 2.0;
  const RepulsedNormalParams p{mu, 0.5};
  const int n = 24;
  const double hi = 6.0;
  const Matrix probs = oracle::repulsed_cell_probs_2d(mu, 0.5, hi, n);
  Matrix count = Matrix::Zero(n, n);
  double outside = 0.0;
  Vector x = sample_repulsed_normal(p, rng);
  for (int t = 0; t < 1000; ++t) x = sample_repulsed_normal(p, rng, x);
  const int draws = 50000;
  for (int t = 0; t < draws; ++t) {
    x = sample_repulsed_normal(p, rng, x);
    const int a = static_cast<int>(x(0) / hi * n);
    const int b = static_cast<int>(x(1) / hi * n);
    if (a < n && b < n) {
      count(a, b) += 1.0;
    } else {
      outside += 1.0;
    }
  }
  const double tv = 0.5 * ((count / draws - probs).cwiseAbs().sum() + outside / draws);
  EXPECT_LT(tv, 0.05);
}

// ---------------------------------------------------------------- inverse gamma

TEST(InverseGamma, PositiveEvenForTinyShape) {
  RngStream rng(34);
  for (int t = 0; t < 10000; ++t) {
    const double v = sample_inverse_gamma(0.01, 0.01, rng);
    ASSERT_GT(v, 0.0);
  }
}

TEST(InverseGamma, MomentsWithinThreeStandardErrors) {
  RngStream rng(35);
  const int n = 100000;
  std::vector<double> x(n);
  for (auto& v : x) v = sample_inverse_gamma(6.0, 5.0, rng);
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double m2 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double c = v - mean;
    m2 += c * c;
    m4 += c * c * c * c;
  }
  m2 /= n;
  m4 /= n;
  const double var = m2 * n / (n - 1.0);
  EXPECT_NEAR(mean, 1.0, 3.0 * std::sqrt(var / n));
  EXPECT_NEAR(var, 0.25, 3.0 * std::sqrt((m4 - m2 * m2) / n));
}

TEST(InverseGamma, RejectsNonPositiveParameters) {
  RngStream rng(36);
  EXPECT_THROW(sample_inverse_gamma(0.0, 1.0, rng), DomainError);
  EXPECT_THROW(sample_inverse_gamma(1.0, -1.0, rng), DomainError);
}

// ---------------------------------------------------------------- SMG

TEST(Smg, SamplesLieOnTheSupport) {
  RngStream rng(40);
  const SmgParams p{random_frame(6, 2, rng), random_frame(5, 2, rng), 2.0};
  for (int t = 0; t < 20; ++t) {
    const Matrix x = smg_sample(p, rng);
    const Matrix back = projection_apply(p.u, projection_apply(p.v, x, Side::right), Side::left);
    EXPECT_LT((x - back).norm(), 1e-10);
    Eigen::JacobiSVD<Matrix> dec(x);
    EXPECT_LT(dec.singularValues()(2), 1e-10 * std::max(1.0, dec.singularValues()(0)));
  }
}

TEST(Smg, EntryVarianceIsSigma2TimesCoherences) {
  RngStream rng(41);
  const SmgParams p{random_frame(4, 2, rng), random_frame(3, 2, rng), 1.5};
  const int draws = 50000;
  Matrix sum = Matrix::Zero(4, 3), sq = Matrix::Zero(4, 3);
  for (int t = 0; t < draws; ++t) {
    const Matrix x = smg_sample(p, rng);
    sum += x;
    sq += x.cwiseProduct(x);
  }
  for (Index i = 0; i < 4; ++i) {
    for (Index j = 0; j < 3; ++j) {
      const double mean = sum(i, j) / draws;
      const double var = sq(i, j) / draws - mean * mean;
      const double expect = p.sigma2 * coherence(p.u, i) * coherence(p.v, j);
      EXPECT_NEAR(var, expect, 0.05 * expect) << i << "," << j;
    }
  }
}

TEST(Smg, LogDensityAtZeroIsTheConstant) {
  RngStream rng(42);
  const SmgParams p{random_frame(5, 2, rng), random_frame(4, 2, rng), 0.7};
  EXPECT_NEAR(smg_log_density(Matrix::Zero(5, 4), p), -2.0 * std::log(2.0 * std::numbers::pi * 0.7), 1e-12);
}

TEST(Smg, LogDensityTraceTermScalesQuadratically) {
  RngStream rng(43);
  const SmgParams p{random_frame(5, 2, rng), random_frame(4, 2, rng), 0.7};
  const Matrix x = smg_sample(p, rng);
  const double c0 = smg_log_density(Matrix::Zero(5, 4), p);
  const double t1 = smg_log_density(x, p) - c0;
  const double t3 = smg_log_density(3.0 * x, p) - c0;
  EXPECT_NEAR(t3, 9.0 * t1, 1e-10 * std::abs(t3));
}

TEST(Smg, LogDensityMatchesExplicitProjectors) {
  RngStream rng(44);
  const SmgParams p{random_frame(6, 3, rng), random_frame(5, 3, rng), 1.3};
  const Matrix x = smg_sample(p, rng);
  const Matrix pu = p.u.matrix() * p.u.matrix().transpose();
  const Matrix pv = p.v.matrix() * p.v.matrix().transpose();
  const double trace = ((x * pv).transpose() * (pu * x)).trace();
  const double expect = -4.5 * std::log(2.0 * std::numbers::pi * 1.3) - trace / (2.0 * 1.3);
  EXPECT_NEAR(smg_log_density(x, p), expect, 1e-10);
}

TEST(Smg, LogDensityOffSupportThrows) {
  RngStream rng(45);
  const SmgParams p{random_frame(5, 1, rng), random_frame(5, 1, rng), 1.0};
  EXPECT_THROW(smg_log_density(Matrix::Identity(5, 5), p), DomainError);
}

TEST(ConditionalPredictive, EmptySetGivesPrior) {
  RngStream rng(46);
  const SmgParams p{random_frame(4, 2, rng), random_frame(5, 2, rng), 2.0};
  const auto grid = full_grid(4, 5);
  const auto c = conditional_predictive(ObservationSet(4, 5, {}), p, 0.1, grid);
  EXPECT_EQ(c.mean.norm(), 0.0);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const auto e = grid[k];
    EXPECT_NEAR(c.cov(k, k), 2.0 * coherence(p.u, e.i) * coherence(p.v, e.j), 1e-12);
  }
}

TEST(ConditionalPredictive, HugeNoiseRecoversPrior) {
  RngStream rng(47);
  const SmgParams p{random_frame(5, 2, rng), random_frame(5, 2, rng), 1.0};
  const ObservationSet obs = random_observations(5, 5, 10, rng);
  const auto grid = full_grid(5, 5);
  const auto c = conditional_predictive(obs, p, 1e8, grid);
  const auto prior = conditional_predictive(ObservationSet(5, 5, {}), p, 1e8, grid);
  EXPECT_LT(c.mean.cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_LT((c.cov - prior.cov).norm() / prior.cov.norm(), 1e-3);
}

TEST(ConditionalPredictive, MatchesJointGaussianConditioning) {
  RngStream rng(48);
  for (int trial = 0; trial < 5; ++trial) {
    const SmgParams p{random_frame(6, 2, rng), random_frame(6, 2, rng), 1.7};
    const double eta2 = 0.3;
    const ObservationSet obs = random_observations(6, 6, 12, rng);
    const auto grid = full_grid(6, 6);
    const auto c = conditional_predictive(obs, p, eta2, grid);

    const Matrix joint = p.sigma2 * oracle::explicit_kron(p.u.matrix(), p.v.matrix());
    std::vector<long> o, t;
    for (const auto& e : obs.entries()) o.push_back(e.index.linear(6));
    for (const auto& e : grid) t.push_back(e.linear(6));
    const auto ref = oracle::gaussian_condition(joint, o, obs.values(), eta2, t);
    EXPECT_LT((c.mean - ref.mean).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT((c.cov - ref.cov).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT((c.cov - c.cov.transpose()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_GE(c.cov.diagonal().minCoeff(), 0.0);
  }
}

TEST(ConditionalPredictive, GridMismatchAndBadNoiseThrow) {
  RngStream rng(49);
  const SmgParams p{random_frame(4, 1, rng), random_frame(4, 1, rng), 1.0};
  const std::vector<EntryIndex> t{{0, 0}};
  EXPECT_THROW(conditional_predictive(ObservationSet(3, 4, {}), p, 0.1, t), DimensionError);
  EXPECT_THROW(conditional_predictive(ObservationSet(4, 4, {}), p, 0.0, t), DomainError);
}

TEST(Coherence, CanonicalLine) {
  const Frame e1 = Frame::canonical(3, 1);
  EXPECT_EQ(coherence(e1, 0), 1.0);
  EXPECT_EQ(coherence(e1, 1), 0.0);
  EXPECT_EQ(max_coherence(e1), 1.0);
  EXPECT_EQ(cross_coherence(e1, 0, 1), 0.0);
}

TEST(Coherence, SumsToRankAndMatchesProjector) {
  RngStream rng(50);
  for (int trial = 0; trial < 10; ++trial) {
    const Frame f = random_frame(7, 3, rng);
    const Matrix pu = f.matrix() * f.matrix().transpose();
    EXPECT_NEAR(coherences(f).sum(), 3.0, 1e-12);
    for (Index i = 0; i < 7; ++i) {
      EXPECT_NEAR(coherence(f, i), pu(i, i), 1e-12);
      EXPECT_GE(coherence(f, i), 0.0);
      EXPECT_LE(coherence(f, i), 1.0 + 1e-12);
      EXPECT_EQ(cross_coherence(f, i, i), coherence(f, i));
      for (Index k = 0; k < 7; ++k) {
        EXPECT_NEAR(cross_coherence(f, i, k), cross_coherence(f, k, i), 1e-14);
        EXPECT_NEAR(cross_coherence(f, i, k), pu(k, i), 1e-12);
      }
    }
  }
  EXPECT_THROW(coherence(Frame::canonical(3, 1), 3), DimensionError);
  EXPECT_THROW(cross_coherence(Frame::canonical(3, 1), 0, -1), DimensionError);
}

TEST(VarianceReduction, EmptySetProbeEqualsNewEntry) {
  RngStream rng(51);
  const SmgParams p{random_frame(5, 2, rng), random_frame(5, 2, rng), 1.4};
  const double eta2 = 0.2;
  const EntryIndex e{2, 3};
  const auto r = variance_reduction(ObservationSet(5, 5, {}), p, eta2, e, e);
  const double before = 1.4 * coherence(p.u, 2) * coherence(p.v, 3);
  EXPECT_NEAR(r.before, before, 1e-12);
  EXPECT_NEAR(r.reduction, before * before / (before + eta2), 1e-12);
  EXPECT_NEAR(r.before - r.after, r.reduction, 1e-10);
}

TEST(VarianceReduction, IdentityHoldsOnRandomConfigs) {
  RngStream rng(52);
  for (int trial = 0; trial < 100; ++trial) {
    const Index r = 1 + static_cast<Index>(rng.below(3));
    const SmgParams p{random_frame(6, r, rng), random_frame(6, r, rng), 0.5 + rng.uniform()};
    const double eta2 = p.sigma2 * std::pow(10.0, -6.0 + 6.0 * rng.uniform());
    const Index n = static_cast<Index>(rng.below(30));
    const ObservationSet obs = random_observations(6, 6, n, rng);
    const auto missing = obs.missing();
    const EntryIndex add = missing[rng.below(missing.size())];
    const EntryIndex probe{static_cast<Index>(rng.below(6)), static_cast<Index>(rng.below(6))};
    const auto v = variance_reduction(obs, p, eta2, add, probe);
    EXPECT_GE(v.reduction, 0.0);
    EXPECT_LT(std::abs(v.before - v.after - v.reduction), 1e-8 * std::max(1.0, v.before)) << "trial " << trial;
  }
}

TEST(VarianceReduction, ObservedEntryThrows) {
  RngStream rng(53);
  const SmgParams p{random_frame(3, 1, rng), random_frame(3, 1, rng), 1.0};
  const ObservationSet obs(3, 3, {{{1, 1}, 0.5}});
  EXPECT_THROW(variance_reduction(obs, p, 0.1, {1, 1}, {0, 0}), DomainError);
}

TEST(Monotonicity, NonIncreasingFromThePrior) {
  RngStream rng(54);
  const SmgParams p{random_frame(5, 2, rng), random_frame(5, 2, rng), 1.0};
  auto order = full_grid(5, 5);
  for (int trial = 0; trial < 20; ++trial) {
    for (std::size_t k = order.size() - 1; k > 0; --k) std::swap(order[k], order[rng.below(k + 1)]);
    const EntryIndex probe{static_cast<Index>(rng.below(5)), static_cast<Index>(rng.below(5))};
    const auto trace = monotonicity_trace(p, 0.05, order, probe);
    ASSERT_EQ(trace.size(), 26u);
    EXPECT_NEAR(trace[0], coherence(p.u, probe.i) * coherence(p.v, probe.j), 1e-12);
    for (std::size_t k = 1; k < trace.size(); ++k) EXPECT_LE(trace[k], trace[k - 1] + 1e-10);
    EXPECT_LE(trace.back(), trace.front());
  }
}

TEST(Monotonicity, RejectsNonPermutation) {
  const SmgParams p{Frame::canonical(2, 1), Frame::canonical(2, 1), 1.0};
  std::vector<EntryIndex> order{{0, 0}, {0, 0}, {1, 0}, {1, 1}};
  EXPECT_THROW(monotonicity_trace(p, 0.1, order, {0, 0}), DomainError);
  order.pop_back();
  EXPECT_THROW(monotonicity_trace(p, 0.1, order, {0, 0}), DomainError);
}
