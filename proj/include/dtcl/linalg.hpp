#pragma once

#include <Eigen/Dense>

#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

namespace dtcl {

using cplx = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXd;
using CVector = Eigen::VectorXcd;

inline constexpr cplx kI{0.0, 1.0};
inline constexpr double kPi = 3.14159265358979323846;

/// Invalid user input: bad parameters, malformed scenario files.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical procedure could not deliver a trustworthy result.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Matrix commutator(const Matrix& a, const Matrix& b) { return a * b - b * a; }

inline Matrix anticommutator(const Matrix& a, const Matrix& b) { return a * b + b * a; }

/// Max-abs entry of A - A^dagger.
inline double hermiticity_defect(const Matrix& a) {
  return (a - a.adjoint()).cwiseAbs().maxCoeff();
}

inline double max_abs(const Matrix& a) { return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff(); }

/// |n><m| in dimension N.
inline Matrix unit_matrix(int n_levels, int n, int m) {
  Matrix p = Matrix::Zero(n_levels, n_levels);
  p(n, m) = 1.0;
  return p;
}

/// Eigenvalues of the Hermitian part of A, ascending.
inline Vector hermitian_eigenvalues(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (a + a.adjoint()), Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

inline Matrix pauli_x() {
  Matrix m(2, 2);
  m << 0, 1, 1, 0;
  return m;
}
inline Matrix pauli_y() {
  Matrix m(2, 2);
  m << 0, -kI, kI, 0;
  return m;
}
inline Matrix pauli_z() {
  Matrix m(2, 2);
  m << 1, 0, 0, -1;
  return m;
}
/// sigma_- = |1><0|: spin lowering for sigma_z = |0><0| - |1><1|. Note that
/// with |0> as the ground state this operator raises the energy.
inline Matrix sigma_minus() { return unit_matrix(2, 1, 0); }
inline Matrix sigma_plus() { return unit_matrix(2, 0, 1); }

/// Truncated annihilation operator on N oscillator levels.
inline Matrix annihilation(int n_levels) {
  Matrix a = Matrix::Zero(n_levels, n_levels);
  for (int n = 1; n < n_levels; ++n) a(n - 1, n) = std::sqrt(static_cast<double>(n));
  return a;
}

}  // namespace dtcl
