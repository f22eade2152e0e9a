#include "dtcl/solver.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace dtcl;

namespace {

Matrix pure(const CVector& v) { return v * v.adjoint() / v.squaredNorm(); }

Matrix basis_state(int n, int k) {
  CVector v = CVector::Zero(n);
  v[k] = 1.0;
  return pure(v);
}

Matrix random_state(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Matrix a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = cplx(g(rng), g(rng));
  Matrix r = a * a.adjoint();
  return r / r.trace();
}

SimulationConfig qubit_dephasing_config(SolverMode mode, double t_f, double h) {
  SimulationConfig c;
  c.model = qubit_model(rabi_envelope(0.08, 0.0, 1.0), true);
  c.channels = {make_channel("sigma_z", 2, ohmic_bath(1e-4, 5.0, 50.0))};
  c.mode = mode;
  c.h = h;
  c.t_f = t_f;
  c.rho0 = basis_state(2, 0);
  return c;
}

SimulationConfig transmon_config(SolverMode mode, double t_g, double h) {
  SimulationConfig c;
  const double anh = -0.06;
  c.model = transmon_model(anh, 3, drag_envelope(kPi / 2, t_g, t_g / 4, 0.5, anh, 1.0));
  c.channels = {make_channel("charge", 3, ohmic_bath(5e-6, 10.0, 24.0)),
                make_channel("number", 3, one_over_f(5e-8, 5e-5))};
  c.mode = mode;
  c.h = h;
  c.t_f = t_g;
  c.rho0 = basis_state(3, 0);
  return c;
}

}  // namespace

TEST(Config, Validation) {
  SimulationConfig c = qubit_dephasing_config(SolverMode::full_tcl, 10.0, 1.0);
  EXPECT_NO_THROW(validate_config(c));
  c.h = 5.0;  // Rabi scale 0.08 allows h <= 3.9
  EXPECT_THROW(validate_config(c), ConfigError);
  c.h = 1.0;
  c.channels.clear();
  EXPECT_THROW(validate_config(c), ConfigError);
  c.mode = SolverMode::closed;
  EXPECT_NO_THROW(validate_config(c));

  SimulationConfig t = transmon_config(SolverMode::full_tcl, 50.0, 0.1);
  EXPECT_NO_THROW(validate_config(t));
  t.h = 0.2;  // non-RWA: V~ carries w_q + w_d = 2
  EXPECT_THROW(validate_config(t), ConfigError);

  Matrix bad = basis_state(2, 0);
  bad(0, 1) = 0.3;
  EXPECT_THROW(validate_state(bad, 2), ConfigError);
  EXPECT_THROW(validate_state(2.0 * basis_state(2, 0), 2), ConfigError);
  Matrix neg = Matrix::Zero(2, 2);
  neg(0, 0) = 1.5;
  neg(1, 1) = -0.5;
  EXPECT_THROW(validate_state(neg, 2), ConfigError);
  EXPECT_THROW(parse_mode("lindblad"), ConfigError);
  EXPECT_EQ(parse_mode("redfield"), SolverMode::redfield);
}

TEST(Config, StepAdjustsToLandOnFinalTime) {
  SimulationConfig c = qubit_dephasing_config(SolverMode::closed, 10.05, 0.1);
  const Trajectory tr = integrate(c);
  EXPECT_EQ(tr.times.size(), 102u);
  EXPECT_DOUBLE_EQ(tr.times.back(), 10.05);
  EXPECT_LE(tr.h, 0.1);
}

TEST(Generator, TraceAnnihilatingAndHermiticityPreserving) {
  std::mt19937_64 rng(3);
  for (SolverMode mode : {SolverMode::closed, SolverMode::redfield, SolverMode::full_tcl}) {
    for (int levels : {2, 3}) {
      SimulationConfig c = levels == 2 ? qubit_dephasing_config(mode, 10.0, 0.1) : transmon_config(mode, 40.0, 0.1);
      if (levels == 2) {
        c.model = qubit_model(drag_envelope(kPi / 2, 40.0, 10.0, 0.4, -0.1, 1.0));
        c.channels.push_back(make_channel("sigma_x", 2, ohmic_bath(1e-4, 5.0, 50.0)));
      }
      GeneratorSource src(c, c.h);
      for (int k = 0; k <= 200; ++k) {
        const GeneratorTerms& g = src.advance();
        if (k % 50 != 0) continue;
        const Matrix rho = random_state(levels, rng);
        const Matrix d = apply_generator(g, rho);
        EXPECT_LT(std::abs(d.trace()), 1e-15) << to_string(mode);
        EXPECT_LT(hermiticity_defect(d), 1e-15) << to_string(mode);
      }
    }
  }
}

TEST(Generator, CompactFormEqualsDissipatorPlusRenormalization) {
  std::mt19937_64 rng(5);
  SimulationConfig c = transmon_config(SolverMode::full_tcl, 40.0, 0.1);
  GeneratorSource src(c, c.h);
  for (int k = 0; k <= 300; ++k) {
    const GeneratorTerms& g = src.advance();
    if (k % 100 != 0 || k == 0) continue;
    const Matrix rho = random_state(3, rng);
    const Matrix h = g.v + renormalization_hamiltonian(g.filters);
    Matrix ref = -kI * commutator(h, rho);
    for (const auto& f : g.filters) ref += channel_dissipator(f, rho);
    const Matrix got = apply_generator(g, rho);
    EXPECT_LT(max_abs(got - ref), 1e-13 * max_abs(ref));
    GeneratorTerms closed = g;
    closed.filters.clear();
    EXPECT_GT(max_abs(got - apply_generator(closed, rho)), 0.0);
  }
}

TEST(Generator, ZeroDriveFullEqualsRedfield) {
  std::mt19937_64 rng(11);
  for (int levels : {2, 3}) {
    SimulationConfig full = levels == 2 ? qubit_dephasing_config(SolverMode::full_tcl, 10.0, 0.1)
                                        : transmon_config(SolverMode::full_tcl, 40.0, 0.1);
    if (levels == 2) {
      full.model = qubit_model(rabi_envelope(0.0, 0.0, 1.0));
      full.channels.push_back(make_channel("sigma_x", 2, ohmic_bath(2.5e-7, 10.0, 24.0)));
    } else {
      full.model = transmon_model(-0.06, 3, rabi_envelope(0.0, 0.0, 1.0));
    }
    SimulationConfig red = full;
    red.mode = SolverMode::redfield;
    GeneratorSource a(full, 0.1), b(red, 0.1);
    double worst = 0.0;
    for (int k = 0; k <= 2000; ++k) {
      const GeneratorTerms& ga = a.advance();
      const GeneratorTerms& gb = b.advance();
      if (k % 7 != 0) continue;
      const Matrix rho = random_state(levels, rng);
      const Matrix da = apply_generator(ga, rho);
      const Matrix db = apply_generator(gb, rho);
      if (max_abs(db) > 0.0) worst = std::max(worst, max_abs(da - db) / max_abs(db));
    }
    EXPECT_LT(worst, 1e-12) << levels;
  }
}

TEST(Integrate, ClosedRwaPiPulse) {
  SimulationConfig c = qubit_dephasing_config(SolverMode::closed, kPi / 0.1, 0.05);
  c.model = qubit_model(rabi_envelope(0.1, 0.0, 1.0), true);
  const Trajectory tr = integrate(c);
  EXPECT_NEAR(tr.final_state()(1, 1).real(), 1.0, 1e-8);
  for (std::size_t k = 0; k < tr.times.size(); k += 97)
    EXPECT_NEAR(tr.states[k](1, 1).real(), std::pow(std::sin(0.05 * tr.times[k]), 2), 1e-8);
  EXPECT_TRUE(tr.rate_names.empty());
}

TEST(Integrate, ClosedAgreesWithPropagatorOracle) {
  SimulationConfig c = transmon_config(SolverMode::closed, 60.0, 0.05);
  const Trajectory tr = integrate(c);
  const Matrix u = oracle_propagator(c.model, 60.0, 0.0, 1e-12);
  EXPECT_LT(max_abs(tr.final_state() - u * c.rho0 * u.adjoint()), 1e-8);
}

TEST(Integrate, FourthOrderConvergence) {
  std::vector<Matrix> finals;
  for (double h : {0.2, 0.1, 0.05}) {
    SimulationConfig c = qubit_dephasing_config(SolverMode::full_tcl, 400.0, h);
    c.model = qubit_model(rabi_envelope(0.3, 0.1, 1.0), true);
    finals.push_back(integrate(c).final_state());
  }
  const double e1 = max_abs(finals[0] - finals[1]);
  const double e2 = max_abs(finals[1] - finals[2]);
  EXPECT_NEAR(e1 / e2, 16.0, 4.0);
}

TEST(Integrate, InvariantsAndRecords) {
  SimulationConfig c = qubit_dephasing_config(SolverMode::full_tcl, 2000.0, 1.0);
  c.record_every = 10;
  const Trajectory tr = integrate(c);
  EXPECT_EQ(tr.times.size(), 201u);
  EXPECT_LT(tr.worst.trace_defect, 1e-12);
  EXPECT_LT(tr.worst.hermiticity_defect, 1e-14);
  ASSERT_EQ(tr.rates.front().size(), tr.rate_names.size());
  // sigma_z channel carries the dephasing columns
  const auto col = [&](const std::string& n) {
    return std::find(tr.rate_names.begin(), tr.rate_names.end(), n) - tr.rate_names.begin();
  };
  ASSERT_LT(col("sigma_z.gamma_phi"), static_cast<long>(tr.rate_names.size()));
  EXPECT_GT(tr.rates.back()[col("sigma_z.gamma_phi")], 0.0);
  std::ostringstream os;
  write_trajectory_csv(os, tr);
  const std::string text = os.str();
  const std::string header = text.substr(0, text.find('\n'));
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), 8 + static_cast<long>(tr.rate_names.size()) + 3);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 202);
}

TEST(Integrate, QubitRelaxationIdentitiesAlongTrajectory) {
  SimulationConfig c;
  c.model = qubit_model(drag_envelope(kPi / 2, 60.0, 15.0, 0.5, -0.1, 1.0));
  c.channels = {make_channel("sigma_x", 2, ohmic_bath(1e-4, 5.0, 50.0))};
  c.mode = SolverMode::full_tcl;
  c.h = 0.1;
  c.t_f = 60.0;
  c.rho0 = basis_state(2, 1);
  const Trajectory tr = integrate(c);
  const long id = std::find(tr.rate_names.begin(), tr.rate_names.end(), "sigma_x.identity_defect") -
                  tr.rate_names.begin();
  for (const auto& r : tr.rates) EXPECT_LT(r[id], 1e-8);
}

TEST(Integrate, SharedRatesMatchIndividualRunsAndLinearity) {
  std::mt19937_64 rng(17);
  SimulationConfig c = transmon_config(SolverMode::full_tcl, 30.0, 0.1);
  const Matrix a = random_state(3, rng), b = random_state(3, rng);
  const auto both = integrate_states(c, {a, b, 0.3 * a + 0.7 * b});
  c.rho0 = a;
  const Trajectory single = integrate(c);
  EXPECT_LT(max_abs(both[0].final_state() - single.final_state()), 1e-15);
  EXPECT_LT(max_abs(both[2].final_state() - 0.3 * both[0].final_state() - 0.7 * both[1].final_state()), 1e-14);
  // Hermitian but not a state: trace tracked against its initial value
  Matrix x = Matrix::Zero(3, 3);
  x(0, 1) = x(1, 0) = 0.5;
  const auto tx = integrate_states(c, {x});
  EXPECT_LT(tx[0].worst.trace_defect, 1e-12);
}

TEST(Integrate, RabiFrequencyShiftBetweenModes) {
  // zero crossings of <sigma_z> drift apart by the Re gamma_{x,y} renormalization
  auto crossing = [](SolverMode mode) {
    SimulationConfig c = qubit_dephasing_config(mode, 3000.0, 0.5);
    const Trajectory tr = integrate(c);
    double last = 0.0;
    for (std::size_t k = 1; k < tr.times.size(); ++k) {
      const double z0 = (tr.states[k - 1](0, 0) - tr.states[k - 1](1, 1)).real();
      const double z1 = (tr.states[k](0, 0) - tr.states[k](1, 1)).real();
      if (z0 * z1 < 0.0) last = tr.times[k - 1] + (tr.times[k] - tr.times[k - 1]) * z0 / (z0 - z1);
    }
    return last;
  };
  const double a = crossing(SolverMode::full_tcl);
  const double b = crossing(SolverMode::redfield);
  EXPECT_GT(std::abs(a - b), 1e-3);
  EXPECT_LT(std::abs(a - b), 5.0);
}

TEST(Frames, SchrodingerMap) {
  std::mt19937_64 rng(23);
  SimulationConfig c = transmon_config(SolverMode::closed, 20.0, 0.1);
  c.rho0 = random_state(3, rng);
  const Trajectory tr = integrate(c);
  const auto lab = to_schrodinger(tr, c.model);
  EXPECT_EQ(max_abs(lab.front() - tr.states.front()), 0.0);
  for (std::size_t k = 0; k < lab.size(); k += 50) {
    for (int n = 0; n < 3; ++n) EXPECT_EQ(lab[k](n, n), tr.states[k](n, n));
    const Vector e1 = hermitian_eigenvalues(lab[k]), e2 = hermitian_eigenvalues(tr.states[k]);
    EXPECT_LT((e1 - e2).cwiseAbs().maxCoeff(), 1e-14);
    const double t = tr.times[k];
    EXPECT_LT(std::abs(lab[k](0, 2) - tr.states[k](0, 2) * std::exp(cplx(0.0, (2.0 - 0.06) * t))), 1e-14);
  }
}
