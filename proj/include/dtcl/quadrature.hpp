#pragma once

#include "dtcl/linalg.hpp"

#include <boost/math/special_functions/legendre.hpp>

#include <map>
#include <memory>
#include <mutex>

namespace dtcl {

/// Gauss-Legendre rule on [-1, 1] with a runtime node count.
struct GaussLegendre {
  std::vector<double> nodes;
  std::vector<double> weights;

  int size() const { return static_cast<int>(nodes.size()); }

  /// Nodes and weights mapped to [a, b].
  void mapped(double a, double b, std::vector<double>& x, std::vector<double>& w) const {
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (a + b);
    x.resize(nodes.size());
    w.resize(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      x[i] = mid + half * nodes[i];
      w[i] = half * weights[i];
    }
  }

  template <typename F>
  auto integrate(F&& f, double a, double b) const -> decltype(f(a)) {
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (a + b);
    decltype(f(a)) acc = weights[0] * f(mid + half * nodes[0]);
    for (std::size_t i = 1; i < nodes.size(); ++i) acc += weights[i] * f(mid + half * nodes[i]);
    return half * acc;
  }
};

inline std::shared_ptr<const GaussLegendre> gauss_legendre(int n) {
  if (n < 1 || n > 200) throw ConfigError("Gauss-Legendre node count out of range: " + std::to_string(n));
  static std::mutex mutex;
  static std::map<int, std::shared_ptr<const GaussLegendre>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[n];
  if (slot) return slot;
  auto rule = std::make_shared<GaussLegendre>();
  const std::vector<double> zeros = boost::math::legendre_p_zeros<double>(n);
  auto weight = [n](double x) {
    const double p = boost::math::legendre_p_prime(n, x);
    return 2.0 / ((1.0 - x * x) * p * p);
  };
  for (auto it = zeros.rbegin(); it != zeros.rend(); ++it) {
    if (*it == 0.0) continue;
    rule->nodes.push_back(-*it);
    rule->weights.push_back(weight(*it));
  }
  for (double z : zeros) {
    rule->nodes.push_back(z);
    rule->weights.push_back(weight(z));
  }
  slot = rule;
  return slot;
}

}  // namespace dtcl
