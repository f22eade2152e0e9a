#pragma once

// Bath spectra and correlation functions. Conventions:
//   S(w) = Sbar(w) + J(w), Sbar even, J odd,
//   C(tau) = (1/2pi) int S(w) exp(-i w tau) dw
//          = (1/pi) int_0^inf [Sbar(w) cos(w tau) - i J(w) sin(w tau)] dw.

#include "dtcl/linalg.hpp"
#include "dtcl/quadrature.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/expint.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace dtcl {

inline constexpr double kEulerGamma = 0.57721566490153286061;

inline double exponential_integral_E1(double x) {
  if (!(x > 0.0)) throw ConfigError("exponential_integral_E1: argument must be positive");
  return boost::math::expint(1, x);
}

/// Trigamma function psi_1(z) for Re z > 0: upward recurrence to |z| >= 20,
/// then the asymptotic Bernoulli series.
inline cplx trigamma(cplx z) {
  if (z.real() <= 0.0) throw NumericalError("trigamma: requires Re z > 0");
  cplx acc = 0.0;
  while (std::abs(z) < 20.0) {
    acc += 1.0 / (z * z);
    z += 1.0;
  }
  const cplx iz = 1.0 / z;
  const cplx iz2 = iz * iz;
  // B_2k coefficients: 1/6, -1/30, 1/42, -1/30, 5/66, -691/2730, 7/6
  static constexpr double b[] = {1.0 / 6.0, -1.0 / 30.0, 1.0 / 42.0, -1.0 / 30.0, 5.0 / 66.0, -691.0 / 2730.0, 7.0 / 6.0};
  cplx series = 0.0;
  for (int k = 6; k >= 0; --k) series = series * iz2 + b[k];
  return acc + iz + 0.5 * iz2 + iz * iz2 * series;
}

enum class SpectrumKind { ohmic, one_over_f, tabulated };

struct NoiseSpectrum {
  SpectrumKind kind = SpectrumKind::ohmic;
  double lambda = 0.0;
  double omega_c = 1.0;
  double beta = std::numeric_limits<double>::infinity();
  double omega_ir = 0.0;
  std::vector<double> table_omega;  // ascending
  std::vector<double> table_s;      // S(w), not symmetrized

  double symmetrized(double w) const {
    switch (kind) {
      case SpectrumKind::ohmic: {
        const double aw = std::abs(w);
        const double damp = lambda * std::exp(-aw / omega_c);
        if (std::isinf(beta)) return damp * aw;
        const double x = 0.5 * beta * aw;
        const double xcothx = x < 1e-8 ? 1.0 + x * x / 3.0 : x / std::tanh(x);
        return damp * 2.0 * xcothx / beta;
      }
      case SpectrumKind::one_over_f: {
        const double aw = std::abs(w);
        if (aw < 1e-8 * omega_ir) return 2.0 * lambda / omega_ir;
        return 2.0 * lambda * std::atan(aw / omega_ir) / aw;
      }
      case SpectrumKind::tabulated:
        return 0.5 * (table_value(w) + table_value(-w));
    }
    return 0.0;
  }

  double antisymmetrized(double w) const {
    switch (kind) {
      case SpectrumKind::ohmic:
        return lambda * w * std::exp(-std::abs(w) / omega_c);
      case SpectrumKind::one_over_f:
        return 0.0;
      case SpectrumKind::tabulated:
        return 0.5 * (table_value(w) - table_value(-w));
    }
    return 0.0;
  }

  double total(double w) const { return symmetrized(w) + antisymmetrized(w); }

  /// C(tau) for tau >= 0 from the closed forms (ohmic, 1/f) or from the
  /// exact transform of the piecewise-linear table.
  cplx correlation(double tau) const {
    switch (kind) {
      case SpectrumKind::ohmic: {
        const cplx z{1.0 / omega_c, tau};
        cplx c = 1.0 / (z * z);
        if (!std::isinf(beta)) c += 2.0 / (beta * beta) * trigamma(z / beta + 1.0).real();
        return lambda / kPi * c;
      }
      case SpectrumKind::one_over_f:
        return lambda * exponential_integral_E1(omega_ir * tau);
      case SpectrumKind::tabulated:
        return table_correlation(tau);
    }
    return 0.0;
  }

  bool singular_at_zero() const { return kind == SpectrumKind::one_over_f; }

  /// Length over which C(tau) changes appreciably near the origin.
  double structure_time() const {
    switch (kind) {
      case SpectrumKind::ohmic:
        return 1.0 / omega_c;
      case SpectrumKind::one_over_f:
        return std::numeric_limits<double>::infinity();
      case SpectrumKind::tabulated: {
        const double w = std::max(std::abs(table_omega.front()), std::abs(table_omega.back()));
        return 1.0 / w;
      }
    }
    return 1.0;
  }

  /// Smallest tau beyond which |C| stays below rel_tol |C(0)|; infinity for
  /// correlations that never decay that far.
  double memory_time(double rel_tol = 1e-14) const {
    if (kind == SpectrumKind::one_over_f) return std::numeric_limits<double>::infinity();
    if (kind == SpectrumKind::ohmic && std::isinf(beta)) return std::numeric_limits<double>::infinity();
    const double c0 = std::abs(correlation(0.0));
    if (c0 == 0.0) return 0.0;
    auto small = [&](double tau) { return std::abs(correlation(tau)) < rel_tol * c0; };
    double hi = structure_time();
    constexpr double cap = 1e7;
    while (!(small(hi) && small(1.5 * hi) && small(2.0 * hi))) {
      hi *= 2.0;
      if (hi > cap) return std::numeric_limits<double>::infinity();
    }
    double lo = 0.5 * hi;
    if (small(lo)) lo = 0.0;
    for (int it = 0; it < 60 && hi - lo > 1e-6 * hi; ++it) {
      const double mid = 0.5 * (lo + hi);
      (small(mid) ? hi : lo) = mid;
    }
    return hi;
  }

 private:
  double table_value(double w) const {
    if (table_omega.empty() || w < table_omega.front() || w > table_omega.back()) return 0.0;
    const auto it = std::upper_bound(table_omega.begin(), table_omega.end(), w);
    if (it == table_omega.end()) return table_s.back();
    const std::size_t i = static_cast<std::size_t>(it - table_omega.begin()) - 1;
    const double f = (w - table_omega[i]) / (table_omega[i + 1] - table_omega[i]);
    return table_s[i] + f * (table_s[i + 1] - table_s[i]);
  }

  // int_0^1 x^p exp(z x) dx for p = 0, 1
  static std::pair<cplx, cplx> phi(cplx z) {
    if (std::abs(z) < 0.5) {
      cplx p0 = 0.0, p1 = 0.0, term = 1.0;
      for (int n = 0; n < 24; ++n) {
        p0 += term / (n + 1.0);
        p1 += term / (n + 2.0);
        term *= z / (n + 1.0);
      }
      return {p0, p1};
    }
    const cplx ez = std::exp(z);
    return {(ez - 1.0) / z, ((z - 1.0) * ez + 1.0) / (z * z)};
  }

  cplx table_correlation(double tau) const {
    cplx acc = 0.0;
    const cplx k{0.0, -tau};
    for (std::size_t i = 0; i + 1 < table_omega.size(); ++i) {
      const double h = table_omega[i + 1] - table_omega[i];
      const auto [p0, p1] = phi(k * h);
      acc += h * std::exp(k * table_omega[i]) * (table_s[i] * p0 + (table_s[i + 1] - table_s[i]) * p1);
    }
    return acc / (2.0 * kPi);
  }
};

inline NoiseSpectrum ohmic_bath(double lambda, double omega_c, double beta) {
  if (!(lambda > 0.0) || !(omega_c > 0.0) || !(beta > 0.0))
    throw ConfigError("ohmic_bath: lambda, omega_c and beta must be positive");
  NoiseSpectrum s;
  s.kind = SpectrumKind::ohmic;
  s.lambda = lambda;
  s.omega_c = omega_c;
  s.beta = beta;
  return s;
}

inline NoiseSpectrum one_over_f(double lambda, double omega_ir) {
  if (!(lambda > 0.0) || !(omega_ir > 0.0)) throw ConfigError("one_over_f: lambda and omega_ir must be positive");
  NoiseSpectrum s;
  s.kind = SpectrumKind::one_over_f;
  s.lambda = lambda;
  s.omega_ir = omega_ir;
  return s;
}

inline NoiseSpectrum tabulated_spectrum(std::vector<double> omega, std::vector<double> s_values) {
  if (omega.size() < 2 || omega.size() != s_values.size())
    throw ConfigError("tabulated spectrum needs at least two (omega, S) rows");
  for (std::size_t i = 1; i < omega.size(); ++i)
    if (!(omega[i] > omega[i - 1])) throw ConfigError("tabulated spectrum: omega must be strictly ascending");
  NoiseSpectrum s;
  s.kind = SpectrumKind::tabulated;
  s.table_omega = std::move(omega);
  s.table_s = std::move(s_values);
  return s;
}

/// Two-column CSV (omega, S(omega)), omega in units of the qubit frequency.
/// Lines starting with '#' and a non-numeric header row are skipped.
inline NoiseSpectrum load_spectrum_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open spectrum file: " + path);
  std::vector<double> w, s;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream row(line);
    double a, b;
    if (!(row >> a >> b)) {
      if (lineno == 1) continue;
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected two numbers");
    }
    w.push_back(a);
    s.push_back(b);
  }
  return tabulated_spectrum(std::move(w), std::move(s));
}

/// C(tau) by adaptive Gauss-Kronrod quadrature of the spectrum. Independent
/// of the closed forms used by NoiseSpectrum::correlation. Panels follow the
/// oscillation of the kernel and, for tables, the table nodes.
inline cplx correlation_from_spectrum(const NoiseSpectrum& s, double tau) {
  if (tau < 0.0) throw ConfigError("correlation_from_spectrum: tau must be non-negative");
  std::vector<double> edges;
  switch (s.kind) {
    case SpectrumKind::ohmic: {
      const double w_max = 20.0 * s.omega_c;
      const int panels = std::max(4, static_cast<int>(std::ceil(w_max * tau / kPi)));
      for (int p = 0; p <= panels; ++p) edges.push_back(w_max * p / panels);
      break;
    }
    case SpectrumKind::tabulated: {
      const double w_max = std::max(std::abs(s.table_omega.front()), std::abs(s.table_omega.back()));
      edges.push_back(0.0);
      for (double w : s.table_omega)
        if (w > 0.0) edges.push_back(w);
      for (double w : s.table_omega)
        if (w < 0.0) edges.push_back(-w);
      edges.push_back(w_max);
      std::sort(edges.begin(), edges.end());
      edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
      break;
    }
    case SpectrumKind::one_over_f:
      throw ConfigError("correlation_from_spectrum: 1/f noise is specified in the time domain");
  }
  using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
  double re = 0.0, im = 0.0, err_total = 0.0, l1 = 0.0;
  for (std::size_t p = 0; p + 1 < edges.size(); ++p) {
    const double a = edges[p], b = edges[p + 1];
    if (!(b > a)) continue;
    double err = 0.0, norm = 0.0;
    re += GK::integrate([&](double w) { return s.symmetrized(w) * std::cos(w * tau); }, a, b, 10, 1e-11, &err, &norm);
    err_total += err;
    l1 += norm;
    im -= GK::integrate([&](double w) { return s.antisymmetrized(w) * std::sin(w * tau); }, a, b, 10, 1e-11, &err,
                        &norm);
    err_total += err;
    l1 += norm;
  }
  if (err_total > 1e-9 * l1) throw NumericalError("correlation_from_spectrum: quadrature did not converge");
  return cplx(re, im) / kPi;
}

/// Product-integration moments of C(tau) exp(-i w tau) on a uniform tau grid
/// of spacing delta: for cell j with local coordinate u in [0,1],
///   a_j = int C e^{-i w tau} (1 - u) dtau,   b_j = int C e^{-i w tau} u dtau,
/// so that int_0^{K delta} C e^{-i w tau} g(tau) dtau ~ sum_j a_j g_j + b_j g_{j+1}
/// for g linear on each cell. The first cell is graded geometrically toward
/// tau = 0 to absorb an integrable logarithmic singularity.
class MomentTable {
 public:
  MomentTable(const NoiseSpectrum& spectrum, double omega, double delta, int gl_nodes = 16)
      : spectrum_(spectrum), omega_(omega), delta_(delta), rule_(gauss_legendre(gl_nodes)) {
    if (!(delta > 0.0)) throw ConfigError("MomentTable: grid spacing must be positive");
    const double scale = std::min(spectrum.structure_time(), omega != 0.0 ? 1.0 / std::abs(omega) : 1e300);
    panels_ = std::max(1, static_cast<int>(std::ceil(delta / scale)));
  }

  double omega() const { return omega_; }
  double delta() const { return delta_; }
  int cells() const { return static_cast<int>(a_.size()); }

  void extend(int cells) {
    while (static_cast<int>(a_.size()) < cells) {
      const int j = static_cast<int>(a_.size());
      cplx a = 0.0, b = 0.0;
      const double t0 = j * delta_;
      auto add_panel = [&](double lo, double hi) {
        std::vector<double> x, w;
        rule_->mapped(lo, hi, x, w);
        for (std::size_t i = 0; i < x.size(); ++i) {
          const cplx f = w[i] * spectrum_.correlation(x[i]) * std::exp(cplx(0.0, -omega_ * x[i]));
          const double u = (x[i] - t0) / delta_;
          a += f * (1.0 - u);
          b += f * u;
        }
      };
      if (j == 0) {
        double hi = delta_ / panels_;
        for (int p = panels_ - 1; p >= 1; --p) add_panel(p * hi, (p + 1) * hi);
        constexpr double q = 0.25;
        for (int m = 0; m < 28; ++m) {
          add_panel(hi * q, hi);
          hi *= q;
        }
      } else {
        const double width = delta_ / panels_;
        for (int p = 0; p < panels_; ++p) add_panel(t0 + p * width, t0 + (p + 1) * width);
      }
      a_.push_back(a);
      b_.push_back(b);
    }
  }

  cplx a(int j) const { return a_[j]; }
  cplx b(int j) const { return b_[j]; }

  /// Weight of node j when integrating over the first k cells.
  cplx node_weight(int j, int k) const {
    cplx w = 0.0;
    if (j < k) w += a_[j];
    if (j >= 1) w += b_[j - 1];
    return w;
  }

  /// int_0^{k delta} C(tau) exp(-i w tau) dtau, the field-free rate Gamma(w, k delta).
  cplx gamma(int k) const {
    cplx acc = 0.0;
    for (int j = 0; j <= k; ++j) acc += node_weight(j, k);
    return acc;
  }

 private:
  NoiseSpectrum spectrum_;
  double omega_;
  double delta_;
  std::shared_ptr<const GaussLegendre> rule_;
  int panels_ = 1;
  std::vector<cplx> a_, b_;
};

}  // namespace dtcl
