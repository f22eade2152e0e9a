#include "dtcl/filtering.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace dtcl;

namespace {

NoiseSpectrum fig2_bath() { return ohmic_bath(1e-4, 5.0, 50.0); }

double rel_diff(const Matrix& a, const Matrix& b) {
  return max_abs(a - b) / std::max(max_abs(b), 1e-300);
}

FilterEngine run_to(const ClosedSystemModel& m, const std::vector<NoiseChannel>& ch, double delta, FilterMode mode,
                    long k, long memory = 0) {
  FilterEngine e(m, ch, delta, mode, memory);
  for (long i = 0; i <= k; ++i) e.advance();
  return e;
}

}  // namespace

TEST(Channels, OperatorTags) {
  EXPECT_LT(max_abs(channel_operator("sigma_x", 2) - pauli_x()), 1e-16);
  EXPECT_LT(max_abs(channel_operator("sigma_z", 2) - pauli_z()), 1e-16);
  const Matrix q = channel_operator("charge", 3);
  EXPECT_NEAR(q(2, 1).real(), std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(channel_operator("number", 3)(2, 2).real(), 2.0, 1e-15);
  EXPECT_THROW(channel_operator("sigma_x", 3), ConfigError);
  EXPECT_THROW(channel_operator("flux", 2), ConfigError);
}

TEST(Channels, BohrComponents) {
  const ClosedSystemModel m = transmon_model(-0.06, 3, rabi_envelope(0.0, 0.0, 1.0));
  const auto c = bohr_components(channel_operator("charge", 3), m.energies);
  ASSERT_EQ(c.size(), 4u);
  for (const auto& b : c) EXPECT_NEAR(b.omega, m.energies[b.n] - m.energies[b.m], 1e-15);
}

TEST(FilterEngine, RejectsCoarseGrid) {
  const ClosedSystemModel m = qubit_model(rabi_envelope(0.0, 0.0, 1.0));
  EXPECT_THROW(FilterEngine(m, {make_channel("sigma_x", 2, fig2_bath())}, 0.06, FilterMode::production), ConfigError);
  EXPECT_NO_THROW(FilterEngine(m, {make_channel("sigma_x", 2, fig2_bath())}, 0.05, FilterMode::production));
  // w = 0 only: no frequency constraint
  EXPECT_NO_THROW(FilterEngine(m, {make_channel("sigma_z", 2, fig2_bath())}, 1.0, FilterMode::production));
}

TEST(FilterEngine, ZeroDriveReducesToBareRates) {
  for (int levels : {2, 3}) {
    const ClosedSystemModel m = levels == 2 ? qubit_model(rabi_envelope(0.0, 0.0, 1.0))
                                            : transmon_model(-0.06, 3, rabi_envelope(0.0, 0.0, 1.0));
    std::vector<NoiseChannel> ch;
    if (levels == 2) {
      ch = {make_channel("sigma_x", 2, fig2_bath()), make_channel("sigma_z", 2, one_over_f(1e-6, 1e-3))};
    } else {
      ch = {make_channel("charge", 3, fig2_bath()), make_channel("number", 3, one_over_f(1e-6, 1e-3))};
    }
    FilterEngine prod(m, ch, 0.04, FilterMode::production);
    FilterEngine fi(m, ch, 0.04, FilterMode::field_independent);
    for (int k = 0; k <= 300; ++k) {
      prod.advance();
      fi.advance();
      if (k % 50 != 0) continue;
      for (std::size_t c = 0; c < ch.size(); ++c) {
        const auto& a = prod.current()[c];
        const auto& b = fi.current()[c];
        for (std::size_t i = 0; i < a.components.size(); ++i) {
          const cplx ref = b.components[i].rate;
          EXPECT_LE(std::abs(a.components[i].rate - ref), 1e-12 * std::abs(ref) + 1e-300);
          EXPECT_EQ(max_abs(a.components[i].correction), 0.0);
        }
      }
    }
    // bare rate against the moment table
    MomentTable t(ch[0].spectrum, fi.current()[0].components[0].bohr.omega, 0.04);
    t.extend(300);
    EXPECT_LT(std::abs(fi.current()[0].components[0].rate - t.gamma(300)), 1e-14 * std::abs(t.gamma(300)));
  }
}

TEST(FilterEngine, ProductionMatchesOracleOnRandomInstances) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int inst = 0; inst < 8; ++inst) {
    const int levels = inst % 2 == 0 ? 2 : 3;
    const double wd = 0.8 + 0.4 * u(rng);
    const double anh = -0.04 - 0.1 * u(rng);
    PulseEnvelope p = inst % 4 < 2 ? rabi_envelope(0.1 * u(rng), 0.1 * u(rng), wd)
                                   : drag_envelope(0.3 + 0.3 * u(rng), 6.0, 1.5, u(rng), anh, wd);
    const ClosedSystemModel m = levels == 2 ? qubit_model(p) : transmon_model(anh, 3, p);
    const NoiseSpectrum s = u(rng) < 0.5 ? ohmic_bath(1e-3, 2.0 + 5.0 * u(rng), 5.0 + 40.0 * u(rng))
                                         : one_over_f(1e-4, 1e-3 + 1e-2 * u(rng));
    const std::vector<NoiseChannel> ch = {make_channel(levels == 2 ? "sigma_x" : "charge", levels, s),
                                          make_channel(levels == 2 ? "sigma_z" : "number", levels, s)};
    FilterEngine prod(m, ch, 0.025, FilterMode::production);
    FilterEngine orc(m, ch, 0.025, FilterMode::oracle);
    for (int k = 0; k <= 160; ++k) {
      prod.advance();
      orc.advance();
      if (k % 40 != 0 || k == 0) continue;
      for (std::size_t c = 0; c < ch.size(); ++c)
        for (std::size_t i = 0; i < prod.current()[c].components.size(); ++i) {
          const auto& a = prod.current()[c].components[i];
          const auto& b = orc.current()[c].components[i];
          const double scale = std::max(std::abs(b.rate), max_abs(b.correction));
          EXPECT_LT(std::abs(a.rate - b.rate), 1e-8 * scale) << inst << " " << k;
          EXPECT_LT(max_abs(a.correction - b.correction), 1e-8 * scale) << inst << " " << k;
          // no content along P_n
          EXPECT_EQ(a.correction(a.bohr.n, a.bohr.m), cplx(0.0));
        }
    }
  }
}

TEST(FilterEngine, StationaryIncrementalMatchesDirectSum) {
  // resonant RWA Rabi: incremental path against the explicit O(k) window sum
  const ClosedSystemModel m = qubit_model(rabi_envelope(0.08, 0.03, 1.0), true);
  ASSERT_TRUE(m.stationary());
  const NoiseSpectrum s = fig2_bath();
  const double delta = 0.5;
  const long k = 400;
  FilterEngine e = run_to(m, {make_channel("sigma_z", 2, s)}, delta, FilterMode::production, k);
  WindowHistory h(m, delta);
  h.extend_to(k);
  MomentTable t(s, 0.0, delta);
  t.extend(static_cast<int>(k));
  const DephasingRates direct = qubit_dephasing_rates(h, t, k);
  const DephasingRates inc = dephasing_from_filter(e.current()[0]);
  EXPECT_NEAR(inc.gamma_phi, direct.gamma_phi, 1e-12 * std::abs(direct.gamma_phi));
  EXPECT_LT(std::abs(inc.gamma_x - direct.gamma_x), 1e-12 * std::abs(direct.gamma_x));
  EXPECT_LT(std::abs(inc.gamma_y - direct.gamma_y), 1e-12 * std::abs(direct.gamma_y));
}

TEST(FilterEngine, MemoryTruncation) {
  const ClosedSystemModel m = qubit_model(rabi_envelope(0.08, 0.0, 1.0), true);
  const std::vector<NoiseChannel> ch = {make_channel("sigma_z", 2, fig2_bath())};
  FilterEngine capped(m, ch, 0.5, FilterMode::production, 100);
  FilterEngine full(m, ch, 0.5, FilterMode::production);
  for (int k = 0; k <= 100; ++k) {
    capped.advance();
    full.advance();
  }
  const cplx at_cap = capped.current()[0].components[0].rate;
  EXPECT_EQ(at_cap, full.current()[0].components[0].rate);
  for (int k = 0; k < 50; ++k) capped.advance();
  EXPECT_EQ(capped.current()[0].components[0].rate, at_cap);

  // non-stationary: truncated integral equals a fresh full-history run over the cap
  const ClosedSystemModel d = qubit_model(drag_envelope(0.5, 8.0, 2.0, 0.3, -0.1, 1.0));
  const std::vector<NoiseChannel> cz = {make_channel("sigma_x", 2, fig2_bath())};
  FilterEngine c2 = run_to(d, cz, 0.02, FilterMode::production, 300, 120);
  FilterEngine f2 = run_to(d, cz, 0.02, FilterMode::production, 300);
  const double diff = std::abs(c2.current()[0].components[0].rate - f2.current()[0].components[0].rate);
  EXPECT_GT(diff, 0.0);
  EXPECT_LT(diff, 0.05 * std::abs(f2.current()[0].components[0].rate));
}

TEST(QubitDephasing, ClosedFormMatchesGenericFiltering) {
  const ClosedSystemModel m = qubit_model(drag_envelope(kPi / 2, 40.0, 10.0, 0.6, -0.1, 1.0));
  const NoiseSpectrum s = one_over_f(1e-5, 1e-3);
  const double delta = 0.05;
  const long k = 700;
  FilterEngine e = run_to(m, {make_channel("sigma_z", 2, s)}, delta, FilterMode::production, k);
  WindowHistory h(m, delta);
  h.extend_to(k);
  MomentTable t(s, 0.0, delta);
  t.extend(static_cast<int>(k));
  const DephasingRates a = dephasing_from_filter(e.current()[0]);
  const DephasingRates b = qubit_dephasing_rates(h, t, k);
  EXPECT_NEAR(a.gamma_phi, b.gamma_phi, 1e-10 * std::abs(b.gamma_phi));
  EXPECT_LT(std::abs(a.gamma_x - b.gamma_x), 1e-10 * std::abs(a.gamma_phi));
  EXPECT_LT(std::abs(a.gamma_y - b.gamma_y), 1e-10 * std::abs(a.gamma_phi));
  EXPECT_GT(std::abs(b.gamma_x) + std::abs(b.gamma_y), 0.0);
}

TEST(QubitDephasing, ZeroDriveAndDriveReducesRate) {
  // Re C = lambda E1(w_ir tau) > 0
  const NoiseSpectrum s = one_over_f(1e-6, 1e-3);
  const std::vector<NoiseChannel> ch = {make_channel("sigma_z", 2, s)};
  const long k = 1000;
  FilterEngine free(qubit_model(rabi_envelope(0.0, 0.0, 1.0), true), ch, 0.5, FilterMode::production);
  FilterEngine driven(qubit_model(rabi_envelope(0.08, 0.0, 1.0), true), ch, 0.5, FilterMode::production);
  EXPECT_TRUE(free.stationary());
  // Re C >= 0, so int Re C (1 - cos W tau) > 0 and the drive lowers gamma_phi at all times
  for (long i = 0; i <= k; ++i) {
    free.advance();
    driven.advance();
    if (i > 0) {
      EXPECT_LT(dephasing_from_filter(driven.current()[0]).gamma_phi, dephasing_from_filter(free.current()[0]).gamma_phi);
    }
  }
  const DephasingRates f = dephasing_from_filter(free.current()[0]);
  MomentTable t(s, 0.0, 0.5);
  t.extend(static_cast<int>(k));
  EXPECT_NEAR(f.gamma_phi, 2.0 * t.gamma(static_cast<int>(k)).real(), 1e-14 * f.gamma_phi);
  EXPECT_EQ(std::abs(f.gamma_x) + std::abs(f.gamma_y), 0.0);
}

TEST(QubitDephasing, OhmicDriveCanRaiseRate) {
  // Ohmic Re C turns negative after ~1/w_c; the driven rate tends to Sbar(W) > Sbar(0)
  const NoiseSpectrum s = fig2_bath();
  const std::vector<NoiseChannel> ch = {make_channel("sigma_z", 2, s)};
  FilterEngine free = run_to(qubit_model(rabi_envelope(0.0, 0.0, 1.0), true), ch, 0.5, FilterMode::production, 4000);
  FilterEngine driven = run_to(qubit_model(rabi_envelope(0.08, 0.0, 1.0), true), ch, 0.5, FilterMode::production, 4000);
  EXPECT_GT(dephasing_from_filter(driven.current()[0]).gamma_phi, dephasing_from_filter(free.current()[0]).gamma_phi);
}

TEST(QubitDephasing, RabiRateIsCosineTransform) {
  // gamma_phi(t) = 2 int_0^t Re C(tau) cos(W tau) dtau, independent quadrature
  const NoiseSpectrum s = fig2_bath();
  const double w = 0.08, tf = 200.0;
  const auto rule = gauss_legendre(20);
  double ref = 0.0;
  double lo = 0.0, hi = 1e-6;
  ref += rule->integrate([&](double x) { return s.correlation(x).real() * std::cos(w * x); }, lo, hi);
  while (hi < tf) {
    lo = hi;
    hi = std::min(tf, hi < 0.1 ? hi * 2.0 : hi + 0.1);
    ref += rule->integrate([&](double x) { return s.correlation(x).real() * std::cos(w * x); }, lo, hi);
  }
  // linear interpolation of cos(W tau) between nodes: error O((W delta)^2)
  double prev = 0.0;
  for (double delta : {0.1, 0.05, 0.025}) {
    FilterEngine e = run_to(qubit_model(rabi_envelope(w, 0.0, 1.0), true), {make_channel("sigma_z", 2, s)}, delta,
                            FilterMode::production, std::lround(tf / delta));
    const double err = std::abs(dephasing_from_filter(e.current()[0]).gamma_phi - 2.0 * ref) / (2.0 * ref);
    EXPECT_LT(err, (w * delta) * (w * delta) / 4.0) << delta;
    if (prev > 0.0) {
      EXPECT_NEAR(prev / err, 4.0, 0.4);
    }
    prev = err;
  }
}

TEST(QubitDephasing, AsymptoticRabiRate) {
  const NoiseSpectrum s = fig2_bath();
  const double w = 0.08;
  const long k = 400000;  // t = 2e5
  FilterEngine e = run_to(qubit_model(rabi_envelope(w, 0.0, 1.0), true), {make_channel("sigma_z", 2, s)}, 0.5,
                          FilterMode::production, k);
  const double g = dephasing_from_filter(e.current()[0]).gamma_phi;
  EXPECT_NEAR(g, s.symmetrized(w), 1e-3 * s.symmetrized(w));
  EXPECT_NEAR(g, 8.17e-6, 0.01e-6);
}

TEST(QubitDephasing, RenormalizationHamiltonian) {
  const ClosedSystemModel m = qubit_model(drag_envelope(kPi / 2, 40.0, 10.0, 0.6, -0.1, 1.0));
  FilterEngine e = run_to(m, {make_channel("sigma_z", 2, fig2_bath())}, 0.05, FilterMode::production, 500);
  const DephasingRates d = dephasing_from_filter(e.current()[0]);
  Matrix v = renormalization_hamiltonian(e.current());
  v.diagonal().array() -= 0.5 * v.trace();
  const Matrix ref = d.gamma_x.real() * pauli_y() - d.gamma_y.real() * pauli_x();
  EXPECT_LT(max_abs(v - ref), 1e-14 * max_abs(ref) + 1e-20);
  EXPECT_GT(max_abs(ref), 0.0);
  // zero drive: nothing transverse
  FilterEngine z = run_to(qubit_model(rabi_envelope(0.0, 0.0, 1.0)), {make_channel("sigma_z", 2, fig2_bath())}, 0.05,
                          FilterMode::production, 100);
  Matrix vz = renormalization_hamiltonian(z.current());
  EXPECT_EQ(std::abs(vz(0, 1)), 0.0);
}

TEST(QubitRelaxation, ClosedFormScalars) {
  // Gamma~(w_q) and M(w_q) from the r-vector integrands against the generic assembly
  const ClosedSystemModel m = qubit_model(drag_envelope(kPi / 2, 30.0, 7.5, 0.7, -0.1, 1.0));
  const NoiseSpectrum s = fig2_bath();
  const double delta = 0.025;
  const long k = 900;
  FilterEngine e = run_to(m, {make_channel("sigma_x", 2, s)}, delta, FilterMode::production, k);
  WindowHistory h(m, delta);
  h.extend_to(k);
  for (double w : {1.0, -1.0}) {
    MomentTable t(s, w, delta);
    t.extend(static_cast<int>(k));
    cplx g = 0.0, mp = 0.0, mz = 0.0;
    const double sg = w > 0 ? 1.0 : -1.0;
    for (long j = 0; j <= k; ++j) {
      const cplx wt = t.node_weight(static_cast<int>(j), static_cast<int>(k));
      const CoeffVector rv = h.r(k, j);
      const double r = rv.norm();
      if (r == 0.0) {
        g += wt;
        continue;
      }
      const double c2 = std::cos(r) * std::cos(r), s2 = std::sin(r) * std::sin(r), sd = std::sin(2 * r);
      const double rz = rv[2];
      const cplx rxy(rv[0], -sg * rv[1]);
      g += wt * (c2 + sg * kI * rz / r * sd - rz * rz / (r * r) * s2);
      mp += wt * std::pow(rxy / r * std::sin(r), 2);
      mz += wt * rxy / r * (rz / r * s2 - sg * 0.5 * kI * sd);
    }
    const FilteredComponent& fc = e.current()[0].components[w > 0 ? 1 : 0];
    ASSERT_EQ(fc.bohr.omega, w);
    EXPECT_LT(std::abs(fc.rate - g), 1e-10 * std::abs(g));
    // M(w_q) = a sigma_+ + b sigma_z ; M(-w_q) = a sigma_- + b sigma_z
    Matrix ref = mz * pauli_z();
    if (w > 0)
      ref += mp * sigma_plus();
    else
      ref += mp * sigma_minus();
    EXPECT_LT(max_abs(fc.correction - ref), 1e-10 * max_abs(ref)) << w;
  }
}

TEST(QubitRelaxation, DecoherenceMatrixStructure) {
  const ClosedSystemModel m = qubit_model(drag_envelope(kPi / 2, 30.0, 7.5, 0.7, -0.1, 1.0));
  FilterEngine e(m, {make_channel("sigma_x", 2, fig2_bath())}, 0.025, FilterMode::production);
  const std::vector<Matrix> ops = {sigma_minus(), sigma_plus(), pauli_z()};
  for (int k = 0; k <= 1400; ++k) {
    e.advance();
    if (k % 100 != 0 || k == 0) continue;
    const ChannelFilter& f = e.current()[0];
    const RelaxationMatrix g = qubit_relaxation_matrix(f, 1.0);
    EXPECT_LT(g.identity_defect, 1e-12);
    EXPECT_EQ(hermiticity_defect(g.gamma), 0.0);
    // generic route: gamma_ij = f_i a_j* + a_i f_j* in the {sigma_-, sigma_+, sigma_z} basis
    auto coeffs = [](const Matrix& x) { return Eigen::Vector3cd(x(1, 0), x(0, 1), 0.5 * (x(0, 0) - x(1, 1))); };
    const Eigen::Vector3cd a = coeffs(f.a_tilde), fv = coeffs(f.a_filtered);
    const Eigen::Matrix3cd gen = fv * a.adjoint() + a * fv.adjoint();
    EXPECT_LT((g.gamma - gen).cwiseAbs().maxCoeff(), 1e-13 * gen.cwiseAbs().maxCoeff());
    const auto ch = canonical_channels(Matrix(g.gamma), ops);
    const double scale = std::abs(ch[0].rate);
    EXPECT_LT(std::abs(ch[1].rate) < std::abs(ch[2].rate) ? std::abs(ch[1].rate) : std::abs(ch[2].rate), 1e-10 * scale);
    const auto [d1, d2] = relaxation_canonical_rates(g);
    EXPECT_NEAR(d1, ch[0].rate, 1e-10 * scale);
    const double smallest = ch[1].rate < ch[2].rate ? ch[1].rate : ch[2].rate;
    EXPECT_NEAR(d2, smallest, 1e-10 * scale);
  }
}

TEST(QubitRelaxation, RandomIdentityMatrixHasZeroEigenvalue) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  for (int i = 0; i < 20; ++i) {
    const double t = 10.0 * std::abs(n(rng));
    const cplx e2 = std::exp(cplx(0.0, 2.0 * t));
    RelaxationMatrix g{};
    g.gamma_ns = cplx(n(rng), n(rng));
    const double sum = 2.0 * (e2 * g.gamma_ns).real();
    g.gamma_plus = 0.5 * sum + n(rng) * 0.1;
    g.gamma_minus = sum - g.gamma_plus;
    g.gamma_zm = cplx(n(rng), n(rng));
    g.gamma_zp = e2 * g.gamma_zm;
    Eigen::Matrix3cd m;
    m << g.gamma_minus, std::conj(g.gamma_ns), 0.5 * std::conj(g.gamma_zm), g.gamma_ns, g.gamma_plus,
        0.5 * std::conj(g.gamma_zp), 0.5 * g.gamma_zm, 0.5 * g.gamma_zp, 0.0;
    const Vector ev = hermitian_eigenvalues(Matrix(m));
    const double scale = ev.cwiseAbs().maxCoeff();
    double smallest = scale;
    for (int j = 0; j < 3; ++j) smallest = std::min(smallest, std::abs(ev[j]));
    EXPECT_LT(smallest, 1e-10 * scale);
    const auto [d1, d2] = relaxation_canonical_rates(g);
    EXPECT_NEAR(d1, ev[2], 1e-10 * scale);
    EXPECT_NEAR(d2, ev[0], 1e-10 * scale);
  }
}

TEST(QubitRelaxation, UndrivenGoldenRule) {
  const NoiseSpectrum s = ohmic_bath(2.5e-7, 10.0, 24.0);
  FilterEngine e = run_to(qubit_model(rabi_envelope(0.0, 0.0, 1.0)), {make_channel("sigma_x", 2, s)}, 0.05,
                          FilterMode::production, 20000);
  const RelaxationMatrix g = qubit_relaxation_matrix(e.current()[0], 1.0);
  EXPECT_NEAR(g.gamma_plus, s.total(1.0), 1e-6 * s.total(1.0));
  EXPECT_NEAR(g.gamma_minus, s.total(-1.0), 1e-6 * s.total(1.0));
  // non-secular: sigma_-/sigma_+ coherences survive, so the canonical rates follow the closed form
  const auto ch = canonical_channels(Matrix(g.gamma), {sigma_minus(), sigma_plus(), pauli_z()});
  const auto [d1, d2] = relaxation_canonical_rates(g);
  EXPECT_NEAR(ch[0].rate, d1, 1e-10 * d1);
  EXPECT_NEAR(ch[1].rate, 0.0, 1e-10 * d1);
  EXPECT_NEAR(ch[2].rate, d2, 1e-10 * d1);
  EXPECT_LT(d2, 0.0);
  EXPECT_NEAR(d1 + d2, g.gamma_plus + g.gamma_minus, 1e-10 * d1);
}

TEST(QubitRelaxation, RabiAsymptoticRates) {
  const NoiseSpectrum s = fig2_bath();
  const double w = 0.08;
  FilterEngine e = run_to(qubit_model(rabi_envelope(w, 0.0, 1.0), true), {make_channel("sigma_x", 2, s)}, 0.05,
                          FilterMode::production, 200000);
  const double scale = s.total(1.0);
  for (const auto& c : e.current()[0].components) {
    const double wq = -c.bohr.omega;  // rate of the component at w is S(-w)
    const double ref = 0.5 * s.total(wq) + 0.25 * (s.total(wq + w) + s.total(wq - w));
    EXPECT_NEAR(2.0 * c.rate.real(), ref, 2e-5 * scale) << c.bohr.omega;
  }
}

TEST(Qutrit, ZeroDriveMatrices) {
  const double anh = -0.06;
  const NoiseSpectrum s = ohmic_bath(2.5e-7, 10.0, 24.0);
  const long k = 600;
  const double delta = 0.04;
  FilterEngine e = run_to(transmon_model(anh, 3, rabi_envelope(0.0, 0.0, 1.0)), {make_channel("charge", 3, s)}, delta,
                          FilterMode::production, k);
  const QutritRelaxation q = qutrit_decoherence_matrices(e.current()[0], anh);
  MomentTable t1(s, 1.0, delta), t2(s, 1.0 + anh, delta);
  t1.extend(static_cast<int>(k));
  t2.extend(static_cast<int>(k));
  const cplx g1 = t1.gamma(static_cast<int>(k)), g2 = t2.gamma(static_cast<int>(k));
  EXPECT_NEAR(q.d_minus(0, 0).real(), 2.0 * g1.real(), 1e-12 * std::abs(g1));
  EXPECT_NEAR(q.d_minus(1, 1).real(), 4.0 * g2.real(), 1e-12 * std::abs(g2));
  const cplx off = std::sqrt(2.0) * std::exp(cplx(0.0, -anh * k * delta)) * (g1 + std::conj(g2));
  EXPECT_LT(std::abs(q.d_minus(0, 1) - off), 1e-12 * std::abs(off));
  EXPECT_LT(hermiticity_defect(Matrix(q.d_minus)), 1e-16);
  EXPECT_LT(hermiticity_defect(Matrix(q.d_plus)), 1e-16);
}

TEST(Qutrit, RateFormulaAtQubitFrequency) {
  // gamma~(w_q) = int C e^{-i w_q tau} (|K|^2/9 + f(w_q, dK)) with the diagonal-generator form of f
  const double anh = -0.08;
  const ClosedSystemModel m = transmon_model(anh, 3, drag_envelope(kPi / 2, 25.0, 6.25, 0.5, anh, 1.0));
  const NoiseSpectrum s = ohmic_bath(1e-3, 10.0, 24.0);
  const double delta = 0.025;
  const long k = 800;
  FilterEngine e = run_to(m, {make_channel("charge", 3, s)}, delta, FilterMode::production, k);
  WindowHistory h(m, delta);
  h.extend_to(k);
  MomentTable t(s, 1.0, delta);
  t.extend(static_cast<int>(k));
  const auto basis = build_basis(3);
  const double r3 = std::sqrt(3.0);
  cplx ref = 0.0;
  for (long j = 0; j <= k; ++j) {
    const CharacteristicFunction kf = characteristic_fn(h.r(k, j), *basis);
    const cplx K = kf.value, d7 = kf.gradient[6], d8 = kf.gradient[7];
    const cplx f = kI / 6.0 * ((std::conj(K) * d8 - K * std::conj(d8)) / r3 - (std::conj(K) * d7 + K * std::conj(d7))) +
                   0.25 * (-d7 * std::conj(d7) - (d7 * std::conj(d8) - d8 * std::conj(d7)) / r3 + d8 * std::conj(d8) / 3.0);
    ref += t.node_weight(static_cast<int>(j), static_cast<int>(k)) * (std::norm(K) / 9.0 + f);
  }
  const QutritRelaxation q = qutrit_decoherence_matrices(e.current()[0], anh);
  EXPECT_LT(std::abs(q.rate_q - ref), 1e-10 * std::abs(ref));
}

TEST(Qutrit, RenormalizationHamiltonianTwoPaths) {
  const double anh = -0.08;
  const ClosedSystemModel m = transmon_model(anh, 3, drag_envelope(kPi / 2, 25.0, 6.25, 0.5, anh, 1.0));
  const std::vector<NoiseChannel> ch = {make_channel("charge", 3, ohmic_bath(1e-3, 10.0, 24.0)),
                                        make_channel("number", 3, one_over_f(1e-5, 1e-3))};
  FilterEngine p = run_to(m, ch, 0.025, FilterMode::production, 500);
  FilterEngine o = run_to(m, ch, 0.025, FilterMode::oracle, 500);
  const Matrix a = renormalization_hamiltonian(p.current());
  const Matrix b = renormalization_hamiltonian(o.current());
  EXPECT_LT(rel_diff(a, b), 1e-8);
  EXPECT_LT(hermiticity_defect(a), 1e-10 * max_abs(a));
}
