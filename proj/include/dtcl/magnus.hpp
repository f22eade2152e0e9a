#pragma once

// Closed-system model in the interaction frame of H0, second-order Magnus
// window exponents and a brute-force propagator used as a reference.

#include "dtcl/gellmann.hpp"
#include "dtcl/pulse.hpp"
#include "dtcl/quadrature.hpp"

#include <boost/numeric/odeint.hpp>

#include <deque>

namespace dtcl {

/// Radius of absolute convergence of the Magnus series for int ||V||_2.
inline constexpr double kMagnusRadius = 1.0868;

struct ClosedSystemModel {
  Vector energies;  // eigenvalues E_n of H0
  Matrix coupling;  // operator part of V(t) in the H0 eigenbasis, traceless
  PulseEnvelope pulse;
  int magnus_order = 2;
  bool rwa = false;
  int quadrature_nodes = 16;

  int levels() const { return static_cast<int>(energies.size()); }
  double bohr(int n, int m) const { return energies[n] - energies[m]; }

  struct Element {
    int n, m;
    double omega;  // E_n - E_m
    cplx d;        // coupling(n, m)
  };

  std::vector<Element> elements() const {
    std::vector<Element> out;
    for (int n = 0; n < levels(); ++n)
      for (int m = 0; m < levels(); ++m)
        if (coupling(n, m) != cplx(0.0)) out.push_back({n, m, bohr(n, m), coupling(n, m)});
    return out;
  }

  /// Interaction-frame drive V~_nm(t) = exp(i w_nm t) V_nm(t).
  Matrix drive(double t) const {
    Matrix v = Matrix::Zero(levels(), levels());
    if (!pulse.inside(t)) return v;
    if (!rwa) {
      const double omega = evaluate_drive(pulse, t);
      for (int n = 0; n < levels(); ++n)
        for (int m = 0; m < levels(); ++m) {
          const cplx d = coupling(n, m);
          if (d != cplx(0.0)) v(n, m) = std::exp(cplx(0.0, bohr(n, m) * t)) * omega * d;
        }
      return v;
    }
    const double ox = pulse.quadrature_x(t);
    const double oy = pulse.quadrature_y(t);
    const double wd = pulse.omega_d;
    for (int n = 0; n < levels(); ++n)
      for (int m = 0; m < levels(); ++m) {
        const cplx d = coupling(n, m);
        if (d == cplx(0.0)) continue;
        const double w = bohr(n, m);
        if (w > 0.0)
          v(n, m) = 0.5 * cplx(ox, oy) * std::exp(cplx(0.0, (w - wd) * t)) * d;
        else if (w < 0.0)
          v(n, m) = 0.5 * cplx(ox, -oy) * std::exp(cplx(0.0, (w + wd) * t)) * d;
        else
          v(n, m) = evaluate_drive(pulse, t) * d;
      }
    return v;
  }

  /// Largest angular frequency carried by V~(t).
  double drive_frequency() const {
    double f = 0.0;
    for (const auto& e : elements()) {
      if (rwa)
        f = std::max(f, e.omega == 0.0 ? pulse.omega_d : std::abs(std::abs(e.omega) - pulse.omega_d));
      else
        f = std::max(f, std::abs(e.omega) + pulse.omega_d);
    }
    return f;
  }

  /// V~ independent of time: constant quadratures under the RWA with every
  /// coupled transition resonant with the carrier.
  bool stationary() const {
    if (pulse.shape == PulseShape::rabi && pulse.omega_x == 0.0 && pulse.omega_y == 0.0) return true;
    if (!rwa || !pulse.constant_quadratures()) return false;
    for (const auto& e : elements())
      if (std::abs(std::abs(e.omega) - pulse.omega_d) > 1e-12 * std::max(1.0, pulse.omega_d)) return false;
    return true;
  }

  /// Bound on ||V(t)||_2 used to size quadrature panels.
  double drive_scale() const {
    const double amp = pulse.shape == PulseShape::rabi
                           ? pulse.rabi_frequency()
                           : std::abs(pulse.quadrature_x(0.5 * pulse.t_g)) +
                                 std::abs(pulse.xi / pulse.anharmonicity * pulse.amplitude / pulse.sigma);
    return amp * coupling.cwiseAbs().rowwise().sum().maxCoeff();
  }
};

inline Matrix interaction_frame_drive(const ClosedSystemModel& m, double t) { return m.drive(t); }

inline void validate_model(const ClosedSystemModel& m) {
  const int n = m.levels();
  if (n < 2) throw ConfigError("model needs at least two levels");
  if (m.coupling.rows() != n || m.coupling.cols() != n) throw ConfigError("drive coupling dimension mismatch");
  if (hermiticity_defect(m.coupling) > 1e-12 * std::max(1.0, max_abs(m.coupling)))
    throw ConfigError("drive coupling must be Hermitian");
  if (m.magnus_order != 1 && m.magnus_order != 2) throw ConfigError("Magnus order must be 1 or 2");
  if (m.quadrature_nodes < 2) throw ConfigError("quadrature node count must be at least 2");
}

inline ClosedSystemModel qubit_model(const PulseEnvelope& pulse, bool rwa = false) {
  ClosedSystemModel m;
  m.energies = Vector(2);
  m.energies << -0.5, 0.5;
  m.coupling = pauli_x();
  m.pulse = pulse;
  m.rwa = rwa;
  return m;
}

/// Duffing oscillator truncated to n_levels with E_n = n + (Delta_a/2) n (n-1)
/// and charge coupling a + a^dagger.
inline ClosedSystemModel transmon_model(double anharmonicity, int n_levels, const PulseEnvelope& pulse,
                                        bool rwa = false) {
  ClosedSystemModel m;
  m.energies = Vector(n_levels);
  for (int n = 0; n < n_levels; ++n) m.energies[n] = n + 0.5 * anharmonicity * n * (n - 1);
  const Matrix a = annihilation(n_levels);
  m.coupling = a + a.adjoint();
  m.pulse = pulse;
  m.rwa = rwa;
  return m;
}

/// Cumulative Magnus integrals on the uniform grid t_k = origin + k delta:
///   G1(t) = int_origin^t V~(s) ds,   H2(t) = int_origin^t [V~(s), G1(s)] ds.
/// For a window [t_{k-j}, t_k] the exponent Lambda.r is
///   G1(t_k) - G1(t_{k-j}) - (i/2) (H2(t_k) - H2(t_{k-j}) - [G1(t_k), G1(t_{k-j})]),
/// which is the second-order term with its inner integral starting at the
/// window's left edge. Nodes older than the retention horizon may be dropped.
class WindowHistory {
 public:
  WindowHistory(const ClosedSystemModel& model, double delta, double origin = 0.0)
      : model_(model), basis_(build_basis(model.levels())), rule_(gauss_legendre(model.quadrature_nodes)),
        delta_(delta), origin_(origin) {
    if (!(delta > 0.0)) throw ConfigError("WindowHistory: grid spacing must be positive");
    const int n = model.levels();
    g1_.push_back(Matrix::Zero(n, n));
    h2_.push_back(Matrix::Zero(n, n));
  }

  double delta() const { return delta_; }
  double origin() const { return origin_; }
  long last_node() const { return first_ + static_cast<long>(g1_.size()) - 1; }
  long first_node() const { return first_; }
  const GellMannBasis& basis() const { return *basis_; }
  const ClosedSystemModel& model() const { return model_; }

  void extend_to(long k) {
    std::vector<double> x, w, xi, wi;
    while (last_node() < k) {
      const double a = origin_ + last_node() * delta_;
      const double b = a + delta_;
      rule_->mapped(a, b, x, w);
      const int nq = static_cast<int>(x.size());
      Matrix dg = Matrix::Zero(model_.levels(), model_.levels());
      Matrix dh = Matrix::Zero(model_.levels(), model_.levels());
      for (int i = 0; i < nq; ++i) {
        const Matrix vi = model_.drive(x[i]);
        dg += w[i] * vi;
        if (model_.magnus_order < 2) continue;
        rule_->mapped(a, x[i], xi, wi);
        Matrix inner = Matrix::Zero(model_.levels(), model_.levels());
        for (int l = 0; l < nq; ++l) inner += wi[l] * model_.drive(xi[l]);
        dh += w[i] * commutator(vi, inner);
      }
      const Matrix& g = g1_.back();
      Matrix h_next = h2_.back() + dh;
      if (model_.magnus_order >= 2) h_next += commutator(dg, g);
      g1_.push_back(g + dg);
      h2_.push_back(std::move(h_next));
    }
  }

  /// Forget nodes before k.
  void discard_before(long k) {
    while (first_ < k && g1_.size() > 1) {
      g1_.pop_front();
      h2_.pop_front();
      ++first_;
    }
  }

  /// Lambda.r for the window ending at node k of length j cells.
  Matrix exponent(long k, long j) const {
    if (j < 0 || k - j < first_ || k > last_node()) throw NumericalError("WindowHistory: window outside stored history");
    const Matrix& g_end = g1_[k - first_];
    const Matrix& g_start = g1_[k - j - first_];
    Matrix x = g_end - g_start;
    if (model_.magnus_order >= 2) {
      const Matrix& h_end = h2_[k - first_];
      const Matrix& h_start = h2_[k - j - first_];
      x -= (0.5 * kI) * (h_end - h_start - commutator(g_end, g_start));
    }
    return x;
  }

  CoeffVector r(long k, long j) const { return CoeffVector(0.5 * basis_->traces(exponent(k, j)).real()); }

  /// Exponent of the window [origin, t_k]. G1 and H2 vanish at the origin, so
  /// this stays available after older nodes are discarded.
  Matrix exponent_from_origin(long k) const {
    if (k < first_ || k > last_node()) throw NumericalError("WindowHistory: node outside stored history");
    Matrix x = g1_[k - first_];
    if (model_.magnus_order >= 2) x -= (0.5 * kI) * h2_[k - first_];
    return x;
  }

 private:
  ClosedSystemModel model_;
  std::shared_ptr<const GellMannBasis> basis_;
  std::shared_ptr<const GaussLegendre> rule_;
  double delta_;
  double origin_;
  long first_ = 0;
  std::deque<Matrix> g1_, h2_;
};

namespace detail {
inline double panel_length(const ClosedSystemModel& m) {
  double len = 1.0 / std::max(m.drive_frequency(), 1e-12);
  if (m.pulse.shape == PulseShape::drag) len = std::min(len, 0.25 * m.pulse.sigma);
  return len;
}
}  // namespace detail

inline CoeffVector magnus_r_vector(const ClosedSystemModel& m, double t, double tau) {
  if (tau < 0.0) throw ConfigError("magnus_r_vector: window length must be non-negative");
  if (t - tau < 0.0) throw ConfigError("magnus_r_vector: window must start at t >= 0");
  const auto basis = build_basis(m.levels());
  if (tau == 0.0) return CoeffVector::zero(basis->size());
  const long cells = std::max(1L, static_cast<long>(std::ceil(tau / detail::panel_length(m))));
  WindowHistory h(m, tau / cells, t - tau);
  h.extend_to(cells);
  return h.r(cells, cells);
}

struct Convergence {
  bool converged;
  double margin;  // R - int ||V||_2
};

inline Convergence convergence_check(const ClosedSystemModel& m, double t, double tau) {
  const auto rule = gauss_legendre(m.quadrature_nodes);
  double integral = 0.0;
  if (tau > 0.0) {
    const long cells = std::max(1L, static_cast<long>(std::ceil(tau / detail::panel_length(m))));
    const double d = tau / cells;
    for (long c = 0; c < cells; ++c) {
      const double a = t - tau + c * d;
      integral += rule->integrate(
          [&](double s) {
            const Vector ev = hermitian_eigenvalues(m.drive(s));
            return std::max(std::abs(ev[0]), std::abs(ev[ev.size() - 1]));
          },
          a, a + d);
    }
  }
  return {integral < kMagnusRadius, kMagnusRadius - integral};
}

struct WindowedUnitary {
  Matrix u;
  Convergence convergence;
};

inline WindowedUnitary windowed_unitary(const ClosedSystemModel& m, double t, double tau) {
  const auto basis = build_basis(m.levels());
  return {expand_unitary(magnus_r_vector(m, t, tau), *basis), convergence_check(m, t, tau)};
}

/// Time-ordered propagator U~(t1, t0) from adaptive Dormand-Prince
/// integration of i dU/dt = V~(t) U. The tolerance is tightened until the
/// unitarity defect is below tol.
inline Matrix oracle_propagator(const ClosedSystemModel& m, double t1, double t0, double tol = 1e-11) {
  if (t1 < t0) throw ConfigError("oracle_propagator: requires t1 >= t0");
  const int n = m.levels();
  using State = std::vector<double>;
  auto rhs = [&](const State& y, State& dy, double t) {
    Eigen::Map<const Matrix> u(reinterpret_cast<const cplx*>(y.data()), n, n);
    Eigen::Map<Matrix> du(reinterpret_cast<cplx*>(dy.data()), n, n);
    du.noalias() = -kI * m.drive(t) * u;
  };
  double step_tol = tol * 1e-2;
  for (int attempt = 0; attempt < 5; ++attempt, step_tol *= 1e-2) {
    State y(2 * n * n, 0.0);
    Eigen::Map<Matrix>(reinterpret_cast<cplx*>(y.data()), n, n).setIdentity();
    if (t1 > t0) {
      namespace ode = boost::numeric::odeint;
      auto stepper = ode::make_controlled(std::max(step_tol, 1e-15), std::max(step_tol, 1e-15),
                                          ode::runge_kutta_dopri5<State>());
      const double dt0 = std::min(t1 - t0, 0.1 / std::max(1.0, m.drive_frequency()));
      const double max_steps = 5e7;
      const std::size_t steps = ode::integrate_adaptive(stepper, rhs, y, t0, t1, dt0);
      if (steps > max_steps) throw NumericalError("oracle_propagator: step budget exhausted");
    }
    const Matrix u = Eigen::Map<Matrix>(reinterpret_cast<cplx*>(y.data()), n, n);
    const double defect = max_abs(u.adjoint() * u - Matrix::Identity(n, n));
    if (defect < tol) return u;
    if (step_tol < 1e-15) break;
  }
  throw NumericalError("oracle_propagator: unitarity tolerance not reached");
}

}  // namespace dtcl
