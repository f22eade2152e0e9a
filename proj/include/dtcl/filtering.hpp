#pragma once

// Filtering of jump operators with the windowed unitaries, renormalized rates
// and correction matrices, and the qubit/qutrit decoherence matrices built
// from them.

#include "dtcl/magnus.hpp"
#include "dtcl/noise.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <optional>

namespace dtcl {

/// How F(P) is evaluated: Gamma(w) P (drive ignored), the K / grad K
/// assembly, or the matrix-exponential reference.
enum class FilterMode { field_independent, production, oracle };

struct NoiseChannel {
  std::string tag;  // sigma_x, sigma_z, charge, number
  Matrix op;        // system operator in the H0 eigenbasis
  NoiseSpectrum spectrum;
};

inline Matrix channel_operator(const std::string& tag, int n_levels) {
  if (tag == "sigma_x" || tag == "sigma_z") {
    if (n_levels != 2) throw ConfigError("operator '" + tag + "' needs a two-level system");
    return tag == "sigma_x" ? pauli_x() : pauli_z();
  }
  const Matrix a = annihilation(n_levels);
  if (tag == "charge") return a + a.adjoint();
  if (tag == "number") return a.adjoint() * a;
  throw ConfigError("unknown operator tag '" + tag + "' (expected sigma_x, sigma_z, charge, number)");
}

inline NoiseChannel make_channel(const std::string& tag, int n_levels, const NoiseSpectrum& spectrum) {
  return {tag, channel_operator(tag, n_levels), spectrum};
}

/// A_nm |n><m| with Bohr frequency E_n - E_m.
struct BohrComponent {
  int n, m;
  double omega;
  cplx amplitude;
};

inline std::vector<BohrComponent> bohr_components(const Matrix& op, const Vector& energies) {
  std::vector<BohrComponent> out;
  for (int n = 0; n < op.rows(); ++n)
    for (int m = 0; m < op.cols(); ++m)
      if (op(n, m) != cplx(0.0)) out.push_back({n, m, energies[n] - energies[m], op(n, m)});
  return out;
}

/// F(P_n) = rate P_n + correction.
struct FilteredComponent {
  BohrComponent bohr;
  cplx rate;
  Matrix correction;

  Matrix filtered() const {
    Matrix f = correction;
    f(bohr.n, bohr.m) += rate;
    return f;
  }
};

/// One channel at one time: interaction-frame operator A~(t), its filtered
/// version, and the per-component split.
struct ChannelFilter {
  double t = 0.0;
  Matrix a_tilde;
  Matrix a_filtered;
  std::vector<FilteredComponent> components;
};

/// Gamma~ and M from accumulated moments of K and grad K for P = |n><m|.
///   s0 = int w |K|^2, s1_l = int w K dK*_l, s2_k = int w K* dK_k, s3_kl = int w dK_k dK*_l.
inline std::pair<cplx, Matrix> assemble_rate_and_correction(const GellMannBasis& basis, int n, int m, cplx s0,
                                                            const CVector& s1, const CVector& s2,
                                                            const Matrix& s3) {
  const int dim = basis.levels();
  const int size = basis.size();
  const int off = basis.off_diagonal_count();
  const double nd = dim;
  const CVector l1 = (-kI / (2.0 * nd)) * s1;
  const CVector l2 = (kI / (2.0 * nd)) * s2;

  cplx rate = s0 / (nd * nd);
  for (int l = 1; l < dim; ++l) {
    rate += basis.diagonal_entry(l, m) * l1[off + l - 1] + basis.diagonal_entry(l, n) * l2[off + l - 1];
    for (int k = 1; k < dim; ++k)
      rate += 0.25 * basis.diagonal_entry(k, n) * basis.diagonal_entry(l, m) * s3(off + k - 1, off + l - 1);
  }

  CVector l1o = l1, l2o = l2;
  l1o.tail(dim - 1).setZero();
  l2o.tail(dim - 1).setZero();
  const Matrix x1 = basis.compose(l1o);
  const Matrix x2 = basis.compose(l2o);
  Matrix corr = Matrix::Zero(dim, dim);
  corr.row(n) += x1.row(m);
  corr.col(m) += x2.col(n);
  Matrix cols(dim, size), rows(size, dim);
  for (int k = 0; k < size; ++k) {
    cols.col(k) = basis[k].col(n);
    rows.row(k) = basis[k].row(m);
  }
  Matrix l3 = 0.25 * s3;
  l3.bottomRightCorner(dim - 1, dim - 1).setZero();
  corr += cols * l3 * rows;
  corr(n, m) = 0.0;
  return {rate, corr};
}

/// Sequential evaluation of the filtering operation on the grid t_k = k delta
/// for every channel. Product integration: the drive-dependent factor is
/// linear between nodes, C(tau) exp(-i w tau) is integrated exactly per cell.
/// memory_cells > 0 truncates the tau integral at memory_cells * delta.
class FilterEngine {
 public:
  FilterEngine(const ClosedSystemModel& model, std::vector<NoiseChannel> channels, double delta, FilterMode mode,
               long memory_cells = 0)
      : model_(model), channels_(std::move(channels)), history_(model, delta), basis_(build_basis(model.levels())),
        mode_(mode), memory_(memory_cells) {
    const int dim = model.levels();
    double max_omega = 0.0;
    for (int c = 0; c < static_cast<int>(channels_.size()); ++c) {
      const auto& ch = channels_[c];
      if (ch.op.rows() != dim || ch.op.cols() != dim)
        throw ConfigError("channel '" + ch.tag + "' operator dimension does not match the model");
      if (hermiticity_defect(ch.op) > 1e-12 * std::max(1.0, max_abs(ch.op)))
        throw ConfigError("channel '" + ch.tag + "' operator is not Hermitian");
      auto comps = bohr_components(ch.op, model.energies);
      std::vector<int> slot_of;
      for (const auto& bc : comps) {
        max_omega = std::max(max_omega, std::abs(bc.omega));
        int s = -1;
        for (int i = 0; i < static_cast<int>(slots_.size()); ++i)
          if (slots_[i].channel == c && std::abs(slots_[i].omega - bc.omega) <= 1e-13 * std::max(1.0, std::abs(bc.omega)))
            s = i;
        if (s < 0) {
          s = static_cast<int>(slots_.size());
          slots_.push_back(Slot{c, bc.omega, MomentTable(ch.spectrum, bc.omega, delta), 0.0, 0.0, {}, {}, {}});
          slots_.back().reset(basis_->size());
        }
        slot_of.push_back(s);
      }
      comps_.push_back(std::move(comps));
      comp_slot_.push_back(std::move(slot_of));
      oracle_acc_.emplace_back(comps_.back().size(), Matrix::Zero(dim, dim));
    }
    if (max_omega > 0.0 && delta > 1.0 / (20.0 * max_omega) * (1.0 + 1e-12))
      throw ConfigError("rate grid step " + std::to_string(delta) + " exceeds 1/(20 max|w_n|) = " +
                        std::to_string(1.0 / (20.0 * max_omega)));
    stationary_ = model.stationary();
  }

  double delta() const { return history_.delta(); }
  long node() const { return node_; }
  double time() const { return node_ * history_.delta(); }
  FilterMode mode() const { return mode_; }
  const ClosedSystemModel& model() const { return model_; }
  const std::vector<NoiseChannel>& channels() const { return channels_; }
  const std::vector<ChannelFilter>& current() const { return current_; }
  bool stationary() const { return stationary_; }

  /// Move to the next grid node (the first call gives t = 0).
  void advance() {
    ++node_;
    const long k = node_;
    const long span = memory_ > 0 ? std::min(k, memory_) : k;
    for (auto& s : slots_) s.table.extend(static_cast<int>(span));
    if (mode_ == FilterMode::field_independent) {
      if (k >= 1 && (memory_ == 0 || k <= memory_))
        for (auto& s : slots_) s.gamma += s.table.a(static_cast<int>(k - 1)) + s.table.b(static_cast<int>(k - 1));
    } else {
      history_.extend_to(k);
      if (stationary_)
        advance_stationary(k);
      else
        advance_general(k, span);
    }
    assemble(k);
  }

 private:
  struct Slot {
    int channel;
    double omega;
    MomentTable table;
    cplx gamma = 0.0;
    cplx s0 = 0.0;
    CVector s1, s2;
    Matrix s3;
    void reset(int size) {
      s0 = 0.0;
      s1 = CVector::Zero(size);
      s2 = CVector::Zero(size);
      s3 = Matrix::Zero(size, size);
    }
  };

  // Drive-dependent integrand pieces for one window.
  struct NodeTerms {
    cplx q0;
    CVector q1, q2;
    Matrix q3;
    Matrix u;  // oracle unitary
  };

  NodeTerms node_terms(const Matrix& exponent) const {
    NodeTerms t;
    const CoeffVector r(0.5 * basis_->traces(exponent).real());
    if (mode_ == FilterMode::oracle) {
      t.u = (-kI * basis_->compose(r)).exp();
      return t;
    }
    const CharacteristicFunction kf = characteristic_fn(r, *basis_);
    t.q0 = std::norm(kf.value);
    t.q1 = kf.value * kf.gradient.conjugate();
    t.q2 = std::conj(kf.value) * kf.gradient;
    t.q3 = kf.gradient * kf.gradient.adjoint();
    return t;
  }

  void accumulate(const NodeTerms& t, const std::vector<cplx>& weights) {
    if (mode_ == FilterMode::oracle) {
      for (std::size_t c = 0; c < comps_.size(); ++c)
        for (std::size_t i = 0; i < comps_[c].size(); ++i) {
          const cplx w = weights[comp_slot_[c][i]];
          const auto& bc = comps_[c][i];
          oracle_acc_[c][i].noalias() += w * t.u.col(bc.n) * t.u.col(bc.m).adjoint();
        }
      return;
    }
    for (std::size_t s = 0; s < slots_.size(); ++s) {
      const cplx w = weights[s];
      auto& sl = slots_[s];
      sl.s0 += w * t.q0;
      sl.s1.noalias() += w * t.q1;
      sl.s2.noalias() += w * t.q2;
      sl.s3.noalias() += w * t.q3;
    }
  }

  void clear() {
    for (auto& s : slots_) s.reset(basis_->size());
    for (auto& acc : oracle_acc_)
      for (auto& m : acc) m.setZero();
  }

  void advance_general(long k, long span) {
    clear();
    std::vector<cplx> w(slots_.size());
    for (long j = 0; j <= span; ++j) {
      for (std::size_t s = 0; s < slots_.size(); ++s) w[s] = slots_[s].table.node_weight(static_cast<int>(j), static_cast<int>(span));
      accumulate(node_terms(history_.exponent(k, j)), w);
    }
    if (memory_ > 0 && k - memory_ > history_.first_node()) history_.discard_before(k - memory_);
  }

  // Windows depend only on their length, so F(k) = F(k-1) + a_{k-1} x_{k-1} + b_{k-1} x_k.
  void advance_stationary(long k) {
    NodeTerms now = node_terms(history_.exponent_from_origin(k));
    if (k >= 1 && (memory_ == 0 || k <= memory_)) {
      std::vector<cplx> wa(slots_.size()), wb(slots_.size());
      for (std::size_t s = 0; s < slots_.size(); ++s) {
        wa[s] = slots_[s].table.a(static_cast<int>(k - 1));
        wb[s] = slots_[s].table.b(static_cast<int>(k - 1));
      }
      accumulate(*previous_, wa);
      accumulate(now, wb);
    }
    previous_ = std::move(now);
    history_.discard_before(k);
  }

  void assemble(long k) {
    const int dim = model_.levels();
    const double t = k * history_.delta();
    current_.assign(channels_.size(), ChannelFilter{});
    for (std::size_t c = 0; c < channels_.size(); ++c) {
      ChannelFilter& out = current_[c];
      out.t = t;
      out.a_tilde = Matrix::Zero(dim, dim);
      out.a_filtered = Matrix::Zero(dim, dim);
      for (std::size_t i = 0; i < comps_[c].size(); ++i) {
        const BohrComponent& bc = comps_[c][i];
        const Slot& sl = slots_[comp_slot_[c][i]];
        FilteredComponent fc{bc, 0.0, Matrix::Zero(dim, dim)};
        switch (mode_) {
          case FilterMode::field_independent:
            fc.rate = sl.gamma;
            break;
          case FilterMode::production: {
            auto [rate, corr] = assemble_rate_and_correction(*basis_, bc.n, bc.m, sl.s0, sl.s1, sl.s2, sl.s3);
            fc.rate = rate;
            fc.correction = std::move(corr);
            break;
          }
          case FilterMode::oracle: {
            const Matrix& f = oracle_acc_[c][i];
            fc.rate = f(bc.n, bc.m);
            fc.correction = f;
            fc.correction(bc.n, bc.m) = 0.0;
            break;
          }
        }
        const cplx phase = bc.amplitude * std::exp(cplx(0.0, bc.omega * t));
        out.a_tilde(bc.n, bc.m) += phase;
        out.a_filtered += phase * fc.filtered();
        out.components.push_back(std::move(fc));
      }
    }
  }

  ClosedSystemModel model_;
  std::vector<NoiseChannel> channels_;
  WindowHistory history_;
  std::shared_ptr<const GellMannBasis> basis_;
  FilterMode mode_;
  long memory_;
  bool stationary_ = false;
  long node_ = -1;
  std::vector<Slot> slots_;
  std::vector<std::vector<BohrComponent>> comps_;
  std::vector<std::vector<int>> comp_slot_;
  std::vector<std::vector<Matrix>> oracle_acc_;
  std::optional<NodeTerms> previous_;
  std::vector<ChannelFilter> current_;
};

/// V~_ren = (1/2i) sum_a (A~^dag A~f - A~f^dag A~).
inline Matrix renormalization_hamiltonian(const std::vector<ChannelFilter>& filters) {
  if (filters.empty()) return Matrix();
  const int dim = static_cast<int>(filters.front().a_tilde.rows());
  Matrix v = Matrix::Zero(dim, dim);
  for (const auto& f : filters) {
    const Matrix x = f.a_tilde.adjoint() * f.a_filtered;
    v += (x - x.adjoint()) / (2.0 * kI);
  }
  if (hermiticity_defect(v) > 1e-10 * std::max(1.0, max_abs(v)))
    throw NumericalError("renormalization Hamiltonian lost Hermiticity");
  return v;
}

/// Pauli coefficients of a traceless 2x2 matrix: X = cx sx + cy sy + cz sz.
inline Eigen::Vector3cd pauli_coefficients(const Matrix& x) {
  return {0.5 * (x(0, 1) + x(1, 0)), 0.5 * kI * (x(0, 1) - x(1, 0)), 0.5 * (x(0, 0) - x(1, 1))};
}

struct DephasingRates {
  double gamma_phi;
  cplx gamma_x, gamma_y;
};

/// gamma_phi = 2 Re(phi_z), gamma_{x,y} = phi_{x,y} for F(sigma_z) = sum phi_i sigma_i.
inline DephasingRates dephasing_from_filter(const ChannelFilter& f) {
  const Eigen::Vector3cd c = pauli_coefficients(f.a_filtered);
  return {2.0 * c[2].real(), c[0], c[1]};
}

/// Qubit dephasing rates from the closed-form integrands in r(t, tau), over
/// windows ending at node k of the history. The moment table must be built
/// for w = 0 on the same grid.
inline DephasingRates qubit_dephasing_rates(const WindowHistory& history, const MomentTable& table, long k) {
  if (history.model().levels() != 2) throw ConfigError("qubit dephasing rates need N = 2");
  cplx phi = 0.0, gx = 0.0, gy = 0.0;
  for (long j = 0; j <= k; ++j) {
    const cplx w = table.node_weight(static_cast<int>(j), static_cast<int>(k));
    const CoeffVector rv = history.r(k, j);
    const double r = rv.norm();
    double fz = 1.0, fx = 0.0, fy = 0.0;
    if (r > 0.0) {
      const double s2 = std::sin(r) * std::sin(r);
      const double sd = std::sin(2.0 * r);
      fz = 1.0 - 2.0 * (rv[0] * rv[0] + rv[1] * rv[1]) / (r * r) * s2;
      fx = rv[1] / r * sd + 2.0 * rv[0] * rv[2] / (r * r) * s2;
      fy = -rv[0] / r * sd + 2.0 * rv[1] * rv[2] / (r * r) * s2;
    }
    phi += w * fz;
    gx += w * fx;
    gy += w * fy;
  }
  return {2.0 * phi.real(), gx, gy};
}

/// Decoherence matrix of a transversely coupled qubit over {sigma_-, sigma_+, sigma_z}.
/// gamma_z+- are the trace forms Tr[sigma_z (...)], twice the matrix entries.
struct RelaxationMatrix {
  Eigen::Matrix3cd gamma;
  double gamma_plus, gamma_minus;
  cplx gamma_ns, gamma_zp, gamma_zm;
  double identity_defect;  // relative
};

inline RelaxationMatrix qubit_relaxation_matrix(const ChannelFilter& f, double omega_q, double tol = 1e-8) {
  if (f.a_tilde.rows() != 2) throw ConfigError("qubit relaxation matrix needs N = 2");
  const FilteredComponent* lower = nullptr;  // sigma_- = |1><0|, w = +w_q
  const FilteredComponent* upper = nullptr;  // sigma_+ = |0><1|, w = -w_q
  for (const auto& c : f.components) {
    if (c.bohr.n == 1 && c.bohr.m == 0) lower = &c;
    if (c.bohr.n == 0 && c.bohr.m == 1) upper = &c;
    if (c.bohr.n == c.bohr.m) throw ConfigError("qubit relaxation matrix needs a purely transverse coupling");
  }
  if (!lower || !upper) throw ConfigError("qubit relaxation matrix needs both sigma_- and sigma_+ components");
  const Matrix sm = sigma_minus(), sp = sigma_plus(), sz = pauli_z();
  const cplx g_w = lower->rate, g_mw = upper->rate;
  const Matrix& m_w = lower->correction;
  const Matrix& m_mw = upper->correction;
  const cplx e2 = std::exp(cplx(0.0, 2.0 * omega_q * f.t));

  RelaxationMatrix out;
  out.gamma_plus = (g_mw + std::conj(g_mw) + e2 * (sm * m_w).trace() + std::conj(e2) * (sp * m_w.adjoint()).trace()).real();
  out.gamma_minus = (g_w + std::conj(g_w) + std::conj(e2) * (sp * m_mw).trace() + e2 * (sm * m_mw.adjoint()).trace()).real();
  out.gamma_ns = (sm * (m_w + m_mw.adjoint())).trace() + std::conj(e2) * (g_mw + std::conj(g_w));
  out.gamma_zp = (sz * (m_mw + e2 * m_w)).trace();
  out.gamma_zm = (sz * (m_w + std::conj(e2) * m_mw)).trace();

  const double scale = std::max({std::abs(out.gamma_plus) + std::abs(out.gamma_minus), std::abs(out.gamma_ns),
                                 std::abs(out.gamma_zp), 1e-300});
  const double d1 = std::abs(out.gamma_plus + out.gamma_minus - 2.0 * (e2 * out.gamma_ns).real());
  const double d2 = std::abs(out.gamma_zp - e2 * out.gamma_zm);
  out.identity_defect = std::max(d1, d2) / scale;
  if (out.identity_defect > tol) throw NumericalError("relaxation decoherence matrix violates its identities");

  // order: sigma_-, sigma_+, sigma_z
  out.gamma.setZero();
  out.gamma(0, 0) = out.gamma_minus;
  out.gamma(1, 1) = out.gamma_plus;
  out.gamma(1, 0) = out.gamma_ns;
  out.gamma(0, 1) = std::conj(out.gamma_ns);
  out.gamma(2, 1) = 0.5 * out.gamma_zp;
  out.gamma(2, 0) = 0.5 * out.gamma_zm;
  out.gamma(1, 2) = std::conj(out.gamma(2, 1));
  out.gamma(0, 2) = std::conj(out.gamma(2, 0));
  return out;
}

/// Closed-form nonzero canonical rates d_1 >= d_2 of the relaxation matrix.
inline std::pair<double, double> relaxation_canonical_rates(const RelaxationMatrix& g) {
  const double mean = 0.5 * (g.gamma_plus + g.gamma_minus);
  const double half = 0.5 * (g.gamma_plus - g.gamma_minus);
  const double root = std::sqrt(half * half + std::norm(g.gamma_ns) + 2.0 * std::norm(0.5 * g.gamma_zm));
  return {mean + root, mean - root};
}

struct CanonicalChannel {
  double rate;
  Matrix jump;
};

/// Eigen-decomposition gamma = W d W^dag, L_k = sum_i W_ik op_i; rates descending.
inline std::vector<CanonicalChannel> canonical_channels(const Matrix& gamma, const std::vector<Matrix>& ops) {
  if (gamma.rows() != static_cast<long>(ops.size())) throw ConfigError("canonical_channels: basis size mismatch");
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (gamma + gamma.adjoint()));
  std::vector<CanonicalChannel> out;
  for (long k = gamma.rows() - 1; k >= 0; --k) {
    Matrix l = Matrix::Zero(ops.front().rows(), ops.front().cols());
    for (long i = 0; i < gamma.rows(); ++i) l += es.eigenvectors()(i, k) * ops[i];
    out.push_back({es.eigenvalues()[k], l});
  }
  return out;
}

/// 2x2 decoherence matrices of the truncated charge coupling over
/// {Pi_1 = |1><0|, Pi_2 = |2><1|} (d_minus) and their adjoints (d_plus),
/// with renormalized rates gamma~(w). The remaining terms of the dissipator
/// are the non-secular cross terms and the correction matrices.
struct QutritRelaxation {
  Eigen::Matrix2cd d_minus, d_plus;
  cplx rate_q, rate_q2, rate_mq, rate_mq2;  // gamma~ at w_q, w_q + D, -w_q, -(w_q + D)
};

inline QutritRelaxation qutrit_decoherence_matrices(const ChannelFilter& f, double anharmonicity) {
  if (f.a_tilde.rows() < 3) throw ConfigError("qutrit decoherence matrices need N >= 3");
  auto rate = [&](int n, int m) {
    for (const auto& c : f.components)
      if (c.bohr.n == n && c.bohr.m == m) return c.rate;
    throw ConfigError("charge channel lacks the |" + std::to_string(n) + "><" + std::to_string(m) + "| component");
  };
  QutritRelaxation q;
  q.rate_q = rate(1, 0);
  q.rate_q2 = rate(2, 1);
  q.rate_mq = rate(0, 1);
  q.rate_mq2 = rate(1, 2);
  const double s2 = std::sqrt(2.0);
  const cplx ph = std::exp(cplx(0.0, anharmonicity * f.t));
  q.d_minus << 2.0 * q.rate_q.real(), s2 * std::conj(ph) * (q.rate_q + std::conj(q.rate_q2)),
      s2 * ph * (std::conj(q.rate_q) + q.rate_q2), 4.0 * q.rate_q2.real();
  q.d_plus << 2.0 * q.rate_mq.real(), s2 * ph * (q.rate_mq + std::conj(q.rate_mq2)),
      s2 * std::conj(ph) * (std::conj(q.rate_mq) + q.rate_mq2), 4.0 * q.rate_mq2.real();
  return q;
}

}  // namespace dtcl
