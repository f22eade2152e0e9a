#pragma once

// Interaction-frame master equation in three flavours (closed, field-independent
// Redfield, full TCL) integrated with fixed-step RK4. Several initial operators
// share one rate history, since the generator does not depend on the state.

#include "dtcl/filtering.hpp"

#include <cstdio>
#include <ostream>

namespace dtcl {

enum class SolverMode { closed, redfield, full_tcl };

inline std::string to_string(SolverMode m) {
  switch (m) {
    case SolverMode::closed:
      return "closed";
    case SolverMode::redfield:
      return "redfield";
    case SolverMode::full_tcl:
      return "full_tcl";
  }
  return "?";
}

inline SolverMode parse_mode(const std::string& s) {
  if (s == "closed") return SolverMode::closed;
  if (s == "redfield" || s == "redfield_field_independent" || s == "field_independent") return SolverMode::redfield;
  if (s == "full_tcl" || s == "full" || s == "tcl") return SolverMode::full_tcl;
  throw ConfigError("unknown solver mode '" + s + "' (expected closed, redfield, full_tcl)");
}

struct SimulationConfig {
  ClosedSystemModel model;
  std::vector<NoiseChannel> channels;
  SolverMode mode = SolverMode::full_tcl;
  double h = 0.1;
  double t_f = 0.0;
  Matrix rho0;
  long memory_cells = 0;
  long record_every = 1;                          // in RK4 steps; the final step is always kept
  FilterMode filter = FilterMode::production;     // full_tcl only
};

/// Fastest angular frequency the step has to resolve: the phases carried by
/// V~(t), the Bohr frequencies of the noise operators and the Rabi scale.
inline double fastest_frequency(const SimulationConfig& cfg) {
  double f = std::max(cfg.model.drive_frequency(), cfg.model.drive_scale());
  if (cfg.mode != SolverMode::closed)
    for (const auto& ch : cfg.channels)
      for (const auto& c : bohr_components(ch.op, cfg.model.energies)) f = std::max(f, std::abs(c.omega));
  return f;
}

inline long step_count(const SimulationConfig& cfg) {
  if (cfg.t_f == 0.0) return 0;
  return static_cast<long>(std::ceil(cfg.t_f / cfg.h - 1e-9));
}

inline void validate_state(const Matrix& rho, int dim) {
  if (rho.rows() != dim || rho.cols() != dim) throw ConfigError("initial state has the wrong dimension");
  if (hermiticity_defect(rho) > 1e-12) throw ConfigError("initial state is not Hermitian");
  if (std::abs(rho.trace() - 1.0) > 1e-12) throw ConfigError("initial state does not have unit trace");
  if (hermitian_eigenvalues(rho)[0] < -1e-12) throw ConfigError("initial state is not positive semidefinite");
}

inline void validate_config(const SimulationConfig& cfg) {
  validate_model(cfg.model);
  if (!(cfg.h > 0.0)) throw ConfigError("step h must be positive");
  if (!(cfg.t_f >= 0.0) || !std::isfinite(cfg.t_f)) throw ConfigError("final time must be finite and non-negative");
  if (cfg.record_every < 1) throw ConfigError("record stride must be at least 1");
  if (cfg.memory_cells < 0) throw ConfigError("memory cell count must be non-negative");
  const double f = fastest_frequency(cfg);
  if (f > 0.0 && cfg.h > 2.0 * kPi / (20.0 * f) * (1.0 + 1e-12))
    throw ConfigError("step h = " + std::to_string(cfg.h) + " does not resolve the fastest frequency " +
                      std::to_string(f) + " (need h <= 2 pi / (20 w))");
  if (cfg.mode != SolverMode::closed && cfg.channels.empty())
    throw ConfigError("mode " + to_string(cfg.mode) + " needs at least one noise channel");
}

/// Everything the generator needs at one grid time.
struct GeneratorTerms {
  double t = 0.0;
  Matrix v;                              // V~(t)
  std::vector<ChannelFilter> filters;    // empty in closed mode
};

/// d rho~/dt = -i[V~, rho~] + sum_a (X_a + X_a^dag),  X = A~f rho A~^dag - A~^dag A~f rho.
/// The last term carries both the anticommutator and -i[V~_ren, rho~].
inline Matrix apply_generator(const GeneratorTerms& g, const Matrix& rho) {
  Matrix out = -kI * (g.v * rho - rho * g.v);
  for (const auto& f : g.filters) {
    const Matrix lr = f.a_filtered * rho;
    const Matrix ad = f.a_tilde.adjoint();
    const Matrix x = lr * ad - ad * lr;
    out += x + x.adjoint();
  }
  return out;
}

/// Dissipator of one channel in Lindblad-like form, without V~_ren.
inline Matrix channel_dissipator(const ChannelFilter& f, const Matrix& rho) {
  const Matrix& a = f.a_tilde;
  const Matrix& l = f.a_filtered;
  const Matrix k = a.adjoint() * l + l.adjoint() * a;
  return l * rho * a.adjoint() + a * rho * l.adjoint() - 0.5 * (k * rho + rho * k);
}

/// Steps through the node grid t_i = i h / 2 (RK4 stages land on nodes).
class GeneratorSource {
 public:
  GeneratorSource(const SimulationConfig& cfg, double h) : model_(cfg.model), half_(0.5 * h) {
    if (cfg.mode == SolverMode::closed) return;
    const FilterMode fm = cfg.mode == SolverMode::redfield ? FilterMode::field_independent : cfg.filter;
    engine_.emplace(cfg.model, cfg.channels, half_, fm, cfg.memory_cells);
  }

  const GeneratorTerms& advance() {
    ++node_;
    terms_.t = node_ * half_;
    terms_.v = model_.drive(terms_.t);
    if (engine_) {
      engine_->advance();
      terms_.filters = engine_->current();
    }
    return terms_;
  }

  const GeneratorTerms& current() const { return terms_; }

 private:
  ClosedSystemModel model_;
  double half_;
  long node_ = -1;
  std::optional<FilterEngine> engine_;
  GeneratorTerms terms_;
};

/// Named per-channel rate records for one time.
struct RateRecorder {
  std::vector<std::string> names;

  RateRecorder(const SimulationConfig& cfg) : model_(cfg.model) {
    if (cfg.mode == SolverMode::closed) return;
    for (const auto& ch : cfg.channels) {
      const std::string p = ch.tag + ".";
      Kind kind = Kind::generic;
      if (model_.levels() == 2 && ch.tag == "sigma_x") kind = Kind::qubit_relaxation;
      if (model_.levels() == 2 && ch.tag == "sigma_z") kind = Kind::qubit_dephasing;
      if (model_.levels() >= 3 && ch.tag == "charge") kind = Kind::qutrit_charge;
      kinds_.push_back(kind);
      for (const auto& c : bohr_components(ch.op, model_.energies))
        names.push_back(p + "rate_" + std::to_string(c.n) + std::to_string(c.m));
      names.push_back(p + "d_max");
      names.push_back(p + "d_min");
      switch (kind) {
        case Kind::qubit_relaxation:
          for (const char* s : {"gamma_plus", "gamma_minus", "d1", "d2", "identity_defect"}) names.push_back(p + s);
          break;
        case Kind::qubit_dephasing:
          for (const char* s : {"gamma_phi", "gamma_x", "gamma_y"}) names.push_back(p + s);
          break;
        case Kind::qutrit_charge:
          for (const char* s : {"dm_1", "dm_2", "dp_1", "dp_2"}) names.push_back(p + s);
          break;
        case Kind::generic:
          break;
      }
    }
  }

  std::vector<double> record(const std::vector<ChannelFilter>& filters) const {
    std::vector<double> out;
    out.reserve(names.size());
    for (std::size_t c = 0; c < filters.size(); ++c) {
      const ChannelFilter& f = filters[c];
      for (const auto& comp : f.components) out.push_back(2.0 * comp.rate.real());
      // gamma = f a^dag + a f^dag over matrix units has rank two
      const cplx af = (f.a_tilde.adjoint() * f.a_filtered).trace();
      const double root = std::sqrt(std::max(0.0, f.a_tilde.squaredNorm() * f.a_filtered.squaredNorm() -
                                                       af.imag() * af.imag()));
      out.push_back(af.real() + root);
      out.push_back(af.real() - root);
      switch (kinds_[c]) {
        case Kind::qubit_relaxation: {
          const RelaxationMatrix g = qubit_relaxation_matrix(f, model_.bohr(1, 0));
          const auto [d1, d2] = relaxation_canonical_rates(g);
          for (double v : {g.gamma_plus, g.gamma_minus, d1, d2, g.identity_defect}) out.push_back(v);
          break;
        }
        case Kind::qubit_dephasing: {
          const DephasingRates d = dephasing_from_filter(f);
          for (double v : {d.gamma_phi, d.gamma_x.real(), d.gamma_y.real()}) out.push_back(v);
          break;
        }
        case Kind::qutrit_charge: {
          const double anh = model_.energies[2] - 2.0 * model_.energies[1] + model_.energies[0];
          const QutritRelaxation q = qutrit_decoherence_matrices(f, anh);
          const Vector em = hermitian_eigenvalues(Matrix(q.d_minus));
          const Vector ep = hermitian_eigenvalues(Matrix(q.d_plus));
          for (double v : {em[1], em[0], ep[1], ep[0]}) out.push_back(v);
          break;
        }
        case Kind::generic:
          break;
      }
    }
    return out;
  }

 private:
  enum class Kind { generic, qubit_relaxation, qubit_dephasing, qutrit_charge };
  ClosedSystemModel model_;
  std::vector<Kind> kinds_;
};

struct Diagnostics {
  double trace_defect = 0.0;
  double hermiticity_defect = 0.0;
  double min_eigenvalue = 0.0;
};

struct Trajectory {
  SolverMode mode = SolverMode::closed;
  double h = 0.0;  // step actually used
  std::vector<std::string> rate_names;
  std::vector<double> times;
  std::vector<Matrix> states;
  std::vector<std::vector<double>> rates;
  std::vector<Diagnostics> diagnostics;
  Diagnostics worst;  // over every step, not only the recorded ones
  std::vector<std::string> warnings;

  const Matrix& final_state() const { return states.back(); }
};

inline constexpr double kTraceTolerance = 1e-8;
inline constexpr double kHermiticityTolerance = 1e-10;

namespace detail {

inline Diagnostics diagnose(const Matrix& rho, cplx trace0, bool is_state) {
  Diagnostics d;
  d.trace_defect = std::abs(rho.trace() - trace0);
  d.hermiticity_defect = hermiticity_defect(rho);
  d.min_eigenvalue = is_state ? hermitian_eigenvalues(rho)[0] : 0.0;
  return d;
}

inline std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.3e", x);
  return buf;
}

}  // namespace detail

/// Integrates every operator in `initial` over [0, t_f] with the shared rates.
/// Operators that are density matrices also get their lowest eigenvalue tracked.
inline std::vector<Trajectory> integrate_states(const SimulationConfig& cfg, const std::vector<Matrix>& initial) {
  validate_config(cfg);
  const int dim = cfg.model.levels();
  const long steps = step_count(cfg);
  const double h = steps > 0 ? cfg.t_f / steps : cfg.h;
  const std::size_t ns = initial.size();

  std::vector<Matrix> rho(initial);
  std::vector<cplx> trace0(ns);
  std::vector<bool> is_state(ns);
  for (std::size_t s = 0; s < ns; ++s) {
    if (rho[s].rows() != dim || rho[s].cols() != dim) throw ConfigError("initial operator has the wrong dimension");
    if (hermiticity_defect(rho[s]) > 1e-12) throw ConfigError("initial operators must be Hermitian");
    trace0[s] = rho[s].trace();
    is_state[s] = std::abs(trace0[s] - 1.0) < 1e-12 && hermitian_eigenvalues(rho[s])[0] >= -1e-12;
  }

  const RateRecorder recorder(cfg);
  std::vector<Trajectory> out(ns);
  for (auto& tr : out) {
    tr.mode = cfg.mode;
    tr.h = h;
    tr.rate_names = recorder.names;
    tr.worst.min_eigenvalue = std::numeric_limits<double>::infinity();
  }

  GeneratorSource source(cfg, h);
  GeneratorTerms g0 = source.advance();

  // diagnostics at every step, records only at the stride
  auto visit = [&](long step, const GeneratorTerms& g) {
    const bool keep = step % cfg.record_every == 0 || step == steps;
    const std::vector<double> r = keep ? recorder.record(g.filters) : std::vector<double>{};
    for (std::size_t s = 0; s < ns; ++s) {
      Trajectory& tr = out[s];
      const Diagnostics d = detail::diagnose(rho[s], trace0[s], is_state[s]);
      tr.worst.trace_defect = std::max(tr.worst.trace_defect, d.trace_defect);
      tr.worst.hermiticity_defect = std::max(tr.worst.hermiticity_defect, d.hermiticity_defect);
      if (is_state[s]) tr.worst.min_eigenvalue = std::min(tr.worst.min_eigenvalue, d.min_eigenvalue);
      if (!(d.trace_defect <= kTraceTolerance) || !(d.hermiticity_defect <= kHermiticityTolerance))
        throw NumericalError("integration aborted at t = " + detail::fmt(g.t) + " (step " + std::to_string(step) +
                             "): trace defect " + detail::fmt(d.trace_defect) + ", Hermiticity defect " +
                             detail::fmt(d.hermiticity_defect));
      if (!keep) continue;
      tr.times.push_back(g.t);
      tr.states.push_back(rho[s]);
      tr.rates.push_back(r);
      tr.diagnostics.push_back(d);
    }
  };

  visit(0, g0);
  for (long step = 1; step <= steps; ++step) {
    const GeneratorTerms g1 = source.advance();
    const GeneratorTerms g2 = source.advance();
    for (std::size_t s = 0; s < ns; ++s) {
      const Matrix k1 = apply_generator(g0, rho[s]);
      const Matrix k2 = apply_generator(g1, rho[s] + (0.5 * h) * k1);
      const Matrix k3 = apply_generator(g1, rho[s] + (0.5 * h) * k2);
      const Matrix k4 = apply_generator(g2, rho[s] + h * k3);
      rho[s] += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    g0 = g2;
    visit(step, g0);
  }

  for (std::size_t s = 0; s < ns; ++s) {
    Trajectory& tr = out[s];
    if (is_state[s] && tr.worst.min_eigenvalue < -1e-12)
      tr.warnings.push_back("density matrix lost positivity: most negative eigenvalue " +
                            detail::fmt(tr.worst.min_eigenvalue));
    if (!is_state[s]) tr.worst.min_eigenvalue = 0.0;
  }
  return out;
}

inline Trajectory integrate(const SimulationConfig& cfg) {
  validate_state(cfg.rho0, cfg.model.levels());
  return integrate_states(cfg, {cfg.rho0}).front();
}

/// rho_S(t) = exp(-i H0 t) rho~(t) exp(i H0 t) for each recorded time.
inline std::vector<Matrix> to_schrodinger(const Trajectory& traj, const ClosedSystemModel& model) {
  std::vector<Matrix> out;
  out.reserve(traj.states.size());
  const int n = model.levels();
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    Matrix r = traj.states[k];
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b)
        if (a != b) r(a, b) *= std::exp(cplx(0.0, -model.bohr(a, b) * traj.times[k]));
    out.push_back(std::move(r));
  }
  return out;
}

inline std::string csv_number(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

/// t, Re/Im of every element, rates, diagnostics.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  const int n = traj.states.empty() ? 0 : static_cast<int>(traj.states.front().rows());
  os << "t";
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) os << ",re_rho_" << a << b << ",im_rho_" << a << b;
  for (const auto& name : traj.rate_names) os << ',' << name;
  os << ",trace_defect,hermiticity_defect,min_eigenvalue\n";
  for (std::size_t k = 0; k < traj.times.size(); ++k) {
    os << csv_number(traj.times[k]);
    const Matrix& r = traj.states[k];
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) os << ',' << csv_number(r(a, b).real()) << ',' << csv_number(r(a, b).imag());
    for (double v : traj.rates[k]) os << ',' << csv_number(v);
    const Diagnostics& d = traj.diagnostics[k];
    os << ',' << csv_number(d.trace_defect) << ',' << csv_number(d.hermiticity_defect) << ','
       << csv_number(d.min_eigenvalue) << '\n';
  }
}

}  // namespace dtcl
