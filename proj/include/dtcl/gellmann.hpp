#pragma once

// Generalized Gell-Mann (SU(N) generator) bases, decompositions, and the
// characteristic-function expansion of windowed unitaries exp(-i Lambda.r).

#include "dtcl/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <utility>

namespace dtcl {

/// Real coefficient vector of a traceless Hermitian matrix in a Gell-Mann
/// basis. Components are dimensionless phases (hbar = 1).
struct CoeffVector {
  Vector components;

  CoeffVector() = default;
  explicit CoeffVector(Vector c) : components(std::move(c)) {}
  static CoeffVector zero(int size) { return CoeffVector(Vector::Zero(size)); }

  int size() const { return static_cast<int>(components.size()); }
  double operator[](int k) const { return components[k]; }
  double norm() const { return components.norm(); }
};

/// Value K(r) = sum_j exp(-i mu_j), its gradient dK/dr_k, and the
/// eigenvalues mu_j of Lambda.r (descending).
struct CharacteristicFunction {
  cplx value;
  CVector gradient;
  Vector mu;
};

/// Ordered generator set: symmetric block, antisymmetric block, diagonal
/// block. Within the off-diagonal blocks level pairs (j,k), j<k, are ordered
/// by distance from the diagonal and then by j, i.e. (0,1),(1,2),(0,2) for
/// N=3. Trace normalization Tr(L_i L_j) = 2 delta_ij.
class GellMannBasis {
 public:
  explicit GellMannBasis(int n_levels) : n_(n_levels) {
    if (n_levels < 2) throw ConfigError("Gell-Mann basis needs N >= 2, got " + std::to_string(n_levels));
    for (int offset = 1; offset < n_; ++offset)
      for (int j = 0; j + offset < n_; ++j) pairs_.emplace_back(j, j + offset);
    matrices_.reserve(n_ * n_ - 1);
    for (const auto& [j, k] : pairs_) {
      Matrix s = Matrix::Zero(n_, n_);
      s(j, k) = 1.0;
      s(k, j) = 1.0;
      matrices_.push_back(s);
    }
    for (const auto& [j, k] : pairs_) {
      Matrix a = Matrix::Zero(n_, n_);
      a(j, k) = -kI;
      a(k, j) = kI;
      matrices_.push_back(a);
    }
    diag_.resize(n_ - 1, std::vector<double>(n_, 0.0));
    for (int l = 1; l < n_; ++l) {
      const double f = std::sqrt(2.0 / (l * (l + 1.0)));
      Matrix d = Matrix::Zero(n_, n_);
      for (int j = 0; j < l; ++j) {
        d(j, j) = f;
        diag_[l - 1][j] = f;
      }
      d(l, l) = -l * f;
      diag_[l - 1][l] = -l * f;
      matrices_.push_back(d);
    }
  }

  int levels() const { return n_; }
  int size() const { return n_ * n_ - 1; }
  /// Number of symmetric plus antisymmetric generators, N(N-1).
  int off_diagonal_count() const { return n_ * (n_ - 1); }
  int pair_count() const { return static_cast<int>(pairs_.size()); }
  std::pair<int, int> pair(int p) const { return pairs_[p]; }
  bool is_diagonal(int k) const { return k >= off_diagonal_count(); }

  const Matrix& operator[](int k) const { return matrices_[k]; }
  const std::vector<Matrix>& matrices() const { return matrices_; }

  /// Entry n of the l-th diagonal generator, l = 1..N-1. These are the
  /// coefficients produced by P Lambda^d_l and Lambda^d_l P for |n><m|.
  double diagonal_entry(int l, int n) const { return diag_[l - 1][n]; }

  /// Tr(Lambda_k A) for every k, without Hermiticity checks.
  template <typename Derived>
  CVector traces(const Eigen::MatrixBase<Derived>& a) const {
    CVector t(size());
    const int np = pair_count();
    for (int p = 0; p < np; ++p) {
      const auto [j, k] = pairs_[p];
      t[p] = a(k, j) + a(j, k);
      t[np + p] = -kI * (a(k, j) - a(j, k));
    }
    for (int l = 1; l < n_; ++l) {
      cplx acc = 0.0;
      for (int j = 0; j <= l; ++j) acc += diag_[l - 1][j] * a(j, j);
      t[2 * np + l - 1] = acc;
    }
    return t;
  }

  /// Sum_k c_k Lambda_k for real or complex coefficients.
  template <typename Derived>
  Matrix compose(const Eigen::MatrixBase<Derived>& c) const {
    Matrix x = Matrix::Zero(n_, n_);
    const int np = pair_count();
    for (int p = 0; p < np; ++p) {
      const auto [j, k] = pairs_[p];
      const cplx s = c[p];
      const cplx a = c[np + p];
      x(j, k) += s - kI * a;
      x(k, j) += s + kI * a;
    }
    for (int l = 1; l < n_; ++l) {
      const cplx d = c[2 * np + l - 1];
      for (int j = 0; j <= l; ++j) x(j, j) += diag_[l - 1][j] * d;
    }
    return x;
  }

  Matrix compose(const CoeffVector& r) const { return compose(r.components); }

 private:
  int n_;
  std::vector<std::pair<int, int>> pairs_;
  std::vector<Matrix> matrices_;
  std::vector<std::vector<double>> diag_;
};

/// Shared read-only basis for N levels, built once per N.
inline std::shared_ptr<const GellMannBasis> build_basis(int n_levels) {
  static std::mutex mutex;
  static std::map<int, std::shared_ptr<const GellMannBasis>> cache;
  if (n_levels < 2) throw ConfigError("Gell-Mann basis needs N >= 2, got " + std::to_string(n_levels));
  std::lock_guard lock(mutex);
  auto& slot = cache[n_levels];
  if (!slot) slot = std::make_shared<const GellMannBasis>(n_levels);
  return slot;
}

/// Coefficients c_k = Tr(Lambda_k H)/2 of a traceless Hermitian matrix.
/// Rejects inputs whose anti-Hermitian part or trace exceed 1e-10 relative
/// to the matrix scale.
inline CoeffVector decompose(const Matrix& h, const GellMannBasis& basis) {
  if (h.rows() != basis.levels() || h.cols() != basis.levels())
    throw ConfigError("decompose: matrix dimension does not match basis");
  const double scale = std::max(1.0, max_abs(h));
  constexpr double tol = 1e-10;
  if (hermiticity_defect(h) > tol * scale) throw ConfigError("decompose: matrix is not Hermitian");
  if (std::abs(h.trace()) > tol * scale) throw ConfigError("decompose: matrix is not traceless");
  return CoeffVector(0.5 * basis.traces(h).real());
}

/// Eigenvalues of Lambda.r in descending order. N=2 and N=3 use closed forms
/// (the latter via Vieta's trigonometric solution of the secular cubic).
inline Vector eigenvalues_mu(const CoeffVector& r, const GellMannBasis& basis) {
  const int n = basis.levels();
  const double norm = r.norm();
  Vector mu = Vector::Zero(n);
  if (norm == 0.0) return mu;
  if (n == 2) {
    mu << norm, -norm;
    return mu;
  }
  const Matrix x = basis.compose(r);
  if (n == 3) {
    const double eps = x.determinant().real();
    double arg = 3.0 * std::sqrt(3.0) * eps / (2.0 * norm * norm * norm);
    arg = std::clamp(arg, -1.0, 1.0);
    const double phi = std::acos(arg) / 3.0;
    const double amp = 2.0 * norm / std::sqrt(3.0);
    for (int j = 0; j < 3; ++j) mu[j] = amp * std::cos(phi - 2.0 * kPi * j / 3.0);
    if (std::abs(arg) > 1.0 - 1e-6) {
      // Near a double root acos loses half the digits. The simple root is
      // still accurate; split the pair from the deflated 2x2 block.
      const int s = arg > 0.0 ? 0 : 2;
      const Matrix m = x - mu[s] * Matrix::Identity(3, 3);
      Eigen::Vector3cd v = Eigen::Vector3cd::Zero();
      for (int i = 0; i < 3; ++i) {
        const Eigen::Vector3cd c = Eigen::Vector3cd(m.row(i).transpose()).cross(Eigen::Vector3cd(m.row((i + 1) % 3).transpose()));
        if (c.norm() > v.norm()) v = c;
      }
      if (v.norm() > 0.0) {
        Eigen::Matrix3cd seed = Eigen::Matrix3cd::Identity();
        seed.col(0) = v.normalized();
        const Eigen::Matrix3cd q = Eigen::HouseholderQR<Eigen::Matrix3cd>(seed).householderQ();
        const Eigen::Matrix2cd b = q.rightCols<2>().adjoint() * x * q.rightCols<2>();
        const double mean = 0.5 * (b(0, 0).real() + b(1, 1).real());
        const double half = std::hypot(0.5 * (b(0, 0).real() - b(1, 1).real()), std::abs(b(0, 1)));
        if (s == 0) {
          mu[1] = mean + half;
          mu[2] = mean - half;
        } else {
          mu[0] = mean + half;
          mu[1] = mean - half;
        }
      }
    }
    return mu;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(x, Eigen::EigenvaluesOnly);
  return es.eigenvalues().reverse();
}

/// K(r) and its gradient. The gradient uses the Hellmann-Feynman identity
/// summed over the spectrum, dK/dr_k = -i Tr(Lambda_k exp(-i Lambda.r)),
/// which stays exact inside degenerate eigenspaces because the phase weights
/// coincide there.
inline CharacteristicFunction characteristic_fn(const CoeffVector& r, const GellMannBasis& basis) {
  const int n = basis.levels();
  CharacteristicFunction out;
  out.mu = eigenvalues_mu(r, basis);
  const double norm = r.norm();
  if (n == 2) {
    out.value = 2.0 * std::cos(norm);
    out.gradient = CVector::Zero(3);
    if (norm > 0.0) out.gradient = (-2.0 * std::sin(norm) / norm) * r.components.cast<cplx>();
    return out;
  }
  out.value = 0.0;
  for (int j = 0; j < n; ++j) out.value += std::exp(-kI * out.mu[j]);
  if (norm == 0.0) {
    out.gradient = CVector::Zero(basis.size());
    return out;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(basis.compose(r));
  const Matrix& v = es.eigenvectors();
  const Vector& ev = es.eigenvalues();
  Matrix phases = Matrix::Zero(n, n);
  for (int j = 0; j < n; ++j) phases(j, j) = std::exp(-kI * ev[j]);
  const Matrix u = v * phases * v.adjoint();
  out.gradient = -kI * basis.traces(u);
  return out;
}

/// Windowed unitary (K/N) 1 + (i/2) grad K . Lambda.
inline Matrix expand_unitary(const CharacteristicFunction& kf, const GellMannBasis& basis) {
  const int n = basis.levels();
  Matrix u = basis.compose((0.5 * kI) * kf.gradient);
  u.diagonal().array() += kf.value / static_cast<double>(n);
  return u;
}

inline Matrix expand_unitary(const CoeffVector& r, const GellMannBasis& basis) {
  return expand_unitary(characteristic_fn(r, basis), basis);
}

}  // namespace dtcl
