#pragma once

// Realized process map on the computational subspace, average gate fidelity
// and leakage for trace-non-preserving maps, and closed-form error estimates.

#include "dtcl/solver.hpp"

namespace dtcl {

/// Action of E on the operator basis |i><j| of a d-dimensional subspace.
struct QuantumMap {
  int d = 0;
  std::vector<Matrix> images;  // images[i * d + j] = E(|i><j|)
  std::vector<std::string> warnings;

  const Matrix& image(int i, int j) const { return images[i * d + j]; }

  Matrix apply(const Matrix& rho) const {
    Matrix out = Matrix::Zero(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) out += rho(i, j) * image(i, j);
    return out;
  }

  /// d^2 x d^2 matrix acting on row-major vec(rho).
  Matrix superoperator() const {
    Matrix s(d * d, d * d);
    for (int c = 0; c < d * d; ++c)
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) s(a * d + b, c) = images[c](a, b);
    return s;
  }
};

inline QuantumMap unitary_map(const Matrix& u) {
  QuantumMap m;
  m.d = static_cast<int>(u.rows());
  for (int i = 0; i < m.d; ++i)
    for (int j = 0; j < m.d; ++j) m.images.push_back(u * unit_matrix(m.d, i, j) * u.adjoint());
  return m;
}

/// exp(-i pi sigma_x / 4).
inline Matrix sqrt_x() {
  Matrix u(2, 2);
  u << 1.0, -kI, -kI, 1.0;
  return u / std::sqrt(2.0);
}

/// Hermitian inputs on the full N-level space: |i><i|, then for i < j
/// (|i><j| + |j><i|)/2 and (-i|i><j| + i|j><i|)/2.
inline std::vector<Matrix> map_inputs(int d, int n_levels) {
  if (d < 1 || d > n_levels) throw ConfigError("subspace dimension must lie in [1, N]");
  std::vector<Matrix> in;
  for (int i = 0; i < d; ++i) in.push_back(unit_matrix(n_levels, i, i));
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) {
      const Matrix p = unit_matrix(n_levels, i, j), q = unit_matrix(n_levels, j, i);
      in.push_back(0.5 * (p + q));
      in.push_back(0.5 * (-kI * p + kI * q));
    }
  return in;
}

/// Recombines the evolved Hermitian inputs and projects onto the subspace.
inline QuantumMap assemble_map(const std::vector<Matrix>& finals, int d) {
  if (static_cast<int>(finals.size()) != d * d) throw ConfigError("assemble_map: need d^2 evolved inputs");
  QuantumMap m;
  m.d = d;
  m.images.assign(d * d, Matrix::Zero(d, d));
  auto proj = [&](const Matrix& r) -> Matrix { return r.topLeftCorner(d, d); };
  for (int i = 0; i < d; ++i) m.images[i * d + i] = proj(finals[i]);
  int k = d;
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j, k += 2) {
      const Matrix x = proj(finals[k]), y = proj(finals[k + 1]);
      m.images[i * d + j] = x + kI * y;
      m.images[j * d + i] = x - kI * y;
    }
  return m;
}

/// Determinant of the projected map; a vanishing value means the dynamical
/// map could not be inverted on the subspace.
inline double map_determinant(const QuantumMap& m) { return std::abs(m.superoperator().determinant()); }

inline QuantumMap realized_map(const SimulationConfig& cfg, int d, std::vector<Trajectory>* trajectories = nullptr) {
  std::vector<Trajectory> tr = integrate_states(cfg, map_inputs(d, cfg.model.levels()));
  std::vector<Matrix> finals;
  for (const auto& t : tr) finals.push_back(t.final_state());
  QuantumMap m = assemble_map(finals, d);
  if (map_determinant(m) < 1e-12)
    m.warnings.push_back("projected dynamical map is close to singular (|det| < 1e-12)");
  if (trajectories) *trajectories = std::move(tr);
  return m;
}

inline void require_unitary(const Matrix& u, int d) {
  if (u.rows() != d || u.cols() != d) throw ConfigError("target unitary has the wrong dimension");
  if (max_abs(u.adjoint() * u - Matrix::Identity(d, d)) > 1e-10) throw ConfigError("target is not unitary");
}

/// F_e = (1/d^2) sum_ij <i| U^dag E(|i><j|) U |j>.
inline cplx entanglement_fidelity(const QuantumMap& e, const Matrix& u) {
  require_unitary(u, e.d);
  cplx acc = 0.0;
  for (int i = 0; i < e.d; ++i)
    for (int j = 0; j < e.d; ++j) acc += (u.adjoint() * e.image(i, j) * u)(i, j);
  return acc / static_cast<double>(e.d * e.d);
}

/// Tr E(1/d).
inline double retained_trace(const QuantumMap& e) {
  cplx acc = 0.0;
  for (int i = 0; i < e.d; ++i) acc += e.image(i, i).trace();
  return (acc / static_cast<double>(e.d)).real();
}

inline double average_fidelity(const QuantumMap& e, const Matrix& u) {
  const double d = e.d;
  return d / (d + 1.0) * entanglement_fidelity(e, u).real() + retained_trace(e) / (d + 1.0);
}

inline double average_leakage(const QuantumMap& e) { return 1.0 - retained_trace(e); }

struct GateMetrics {
  double fidelity = 0.0;
  double leakage = 0.0;
  double infidelity() const { return 1.0 - fidelity; }
};

inline GateMetrics gate_metrics(const QuantumMap& e, const Matrix& u) {
  return {average_fidelity(e, u), average_leakage(e)};
}

/// F = (3 + exp(-g t) + 2 exp(-g t / 2)) / 6.
inline double amplitude_damping_fidelity(double gamma, double t_g) {
  return (3.0 + std::exp(-gamma * t_g) + 2.0 * std::exp(-0.5 * gamma * t_g)) / 6.0;
}

/// 1 - F ~ S t/3 + theta^2 S'' / (12 t) at fixed rotation angle theta = Omega_R t.
inline double relaxation_infidelity(double s, double s2, double theta, double t_g) {
  return s * t_g / 3.0 + theta * theta * s2 / (12.0 * t_g);
}

/// Stationary point sqrt(b/a) of a t + b/t for the estimate above.
inline double optimal_gate_time(double s, double s2, double theta) {
  if (!(s > 0.0) || !(s2 > 0.0)) throw ConfigError("optimal gate time needs S > 0 and S'' > 0");
  return std::sqrt(theta * theta * s2 / 12.0 / (s / 3.0));
}

/// 1 - F_phi ~ Sbar(0) t / 3 + theta Sbar'(0) / 3.
inline double dephasing_infidelity(double sbar0, double sbar0_prime, double theta, double t_g) {
  return sbar0 * t_g / 3.0 + theta * sbar0_prime / 3.0;
}

struct ClosedFormEstimates {
  double gamma = 0.0;                 // S(w_q) + Omega_R^2 S''(w_q) / 4
  double fidelity = 1.0;              // amplitude damping with gamma
  double relaxation_infidelity = 0.0;
  double optimal_gate_time = std::numeric_limits<double>::quiet_NaN();
  double dephasing_infidelity = 0.0;
};

/// Estimates from the spectra: relaxation through S at w_q, dephasing
/// through Sbar near zero frequency. Either spectrum may be absent.
inline ClosedFormEstimates closed_form_error_estimates(const NoiseSpectrum* relaxation, const NoiseSpectrum* dephasing,
                                                       double omega_q, double theta, double t_g) {
  if (!(t_g > 0.0)) throw ConfigError("gate time must be positive");
  ClosedFormEstimates e;
  const double omega_r = theta / t_g;
  if (relaxation) {
    const double s = relaxation->total(omega_q);
    const double d = 1e-3 * omega_q;
    const double s2 = (relaxation->total(omega_q + d) - 2.0 * s + relaxation->total(omega_q - d)) / (d * d);
    e.gamma = s + omega_r * omega_r * s2 / 4.0;
    e.fidelity = amplitude_damping_fidelity(e.gamma, t_g);
    e.relaxation_infidelity = relaxation_infidelity(s, s2, theta, t_g);
    if (s > 0.0 && s2 > 0.0) e.optimal_gate_time = optimal_gate_time(s, s2, theta);
  }
  if (dephasing) {
    const double s0 = dephasing->symmetrized(0.0);
    const double d = 1e-4 * std::max(omega_r, 1e-6);
    const double s1 = (-3.0 * s0 + 4.0 * dephasing->symmetrized(d) - dephasing->symmetrized(2.0 * d)) / (2.0 * d);
    e.dephasing_infidelity = dephasing_infidelity(s0, s1, theta, t_g);
  }
  return e;
}

}  // namespace dtcl
