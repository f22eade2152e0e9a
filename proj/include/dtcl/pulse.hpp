#pragma once

// Drive envelopes Omega(t) = Omega_x(t) cos(w_d t) + Omega_y(t) sin(w_d t).

#include "dtcl/linalg.hpp"

#include <cmath>
#include <limits>

namespace dtcl {

enum class PulseShape { rabi, drag };

struct PulseEnvelope {
  PulseShape shape = PulseShape::rabi;
  double omega_d = 0.0;  // carrier (angular) frequency
  double t_g = std::numeric_limits<double>::infinity();

  // constant quadratures (rabi)
  double omega_x = 0.0;
  double omega_y = 0.0;

  // DRAG metadata
  double theta = 0.0;
  double sigma = 0.0;
  double xi = 0.0;
  double anharmonicity = 0.0;
  double amplitude = 0.0;  // normalization prefactor of the Gaussian
  double baseline = 0.0;   // exp(-t_g^2 / 8 sigma^2)

  bool windowed() const { return shape == PulseShape::drag; }
  bool inside(double t) const { return t >= 0.0 && (!windowed() || t <= t_g); }

  double rabi_frequency() const { return std::hypot(omega_x, omega_y); }

  double quadrature_x(double t) const {
    if (!inside(t)) return 0.0;
    if (shape == PulseShape::rabi) return omega_x;
    const double u = t - 0.5 * t_g;
    return amplitude * (std::exp(-u * u / (2.0 * sigma * sigma)) - baseline);
  }

  double derivative_x(double t) const {
    if (!inside(t) || shape == PulseShape::rabi) return 0.0;
    const double u = t - 0.5 * t_g;
    return -amplitude * u / (sigma * sigma) * std::exp(-u * u / (2.0 * sigma * sigma));
  }

  double quadrature_y(double t) const {
    if (!inside(t)) return 0.0;
    if (shape == PulseShape::rabi) return omega_y;
    return -xi * derivative_x(t) / anharmonicity;
  }

  /// True when both quadratures are time independent.
  bool constant_quadratures() const { return shape == PulseShape::rabi; }
};

inline PulseEnvelope rabi_envelope(double omega_x, double omega_y, double omega_d) {
  PulseEnvelope p;
  p.shape = PulseShape::rabi;
  p.omega_x = omega_x;
  p.omega_y = omega_y;
  p.omega_d = omega_d;
  return p;
}

/// Truncated, baseline-subtracted Gaussian normalized to a rotation angle
/// theta, with derivative-removal quadrature Omega_y = -xi dOmega_x/dt / Delta_a.
inline PulseEnvelope drag_envelope(double theta, double t_g, double sigma, double xi, double anharmonicity,
                                   double omega_d) {
  if (!(t_g > 0.0)) throw ConfigError("drag_envelope: gate time must be positive");
  if (!(sigma > 0.0)) throw ConfigError("drag_envelope: sigma must be positive");
  if (anharmonicity == 0.0) throw ConfigError("drag_envelope: anharmonicity must be nonzero");
  PulseEnvelope p;
  p.shape = PulseShape::drag;
  p.theta = theta;
  p.t_g = t_g;
  p.sigma = sigma;
  p.xi = xi;
  p.anharmonicity = anharmonicity;
  p.omega_d = omega_d;
  const double s2 = sigma * sigma;
  p.baseline = std::exp(-t_g * t_g / (8.0 * s2));
  const double norm = std::sqrt(2.0 * kPi * s2) * std::erf(t_g / std::sqrt(8.0 * s2)) - t_g * p.baseline;
  p.amplitude = theta / norm;
  return p;
}

inline double evaluate_drive(const PulseEnvelope& p, double t) {
  if (!p.inside(t)) return 0.0;
  return p.quadrature_x(t) * std::cos(p.omega_d * t) + p.quadrature_y(t) * std::sin(p.omega_d * t);
}

}  // namespace dtcl
