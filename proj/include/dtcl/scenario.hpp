#pragma once

// Scenario files (TOML), DRAG calibration, gate-time sweeps, the error
// decomposition table and staged CSV output.

#include "dtcl/metrics.hpp"

#include <toml.hpp>

#include <algorithm>
#include <array>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <thread>
#include <unistd.h>

namespace dtcl {

namespace fs = std::filesystem;

// Units: frequencies in w_q, times in 1/w_q. Keys carry a suffix:
//   _wq     angular frequency in units of w_q
//   _ghz    ordinary frequency in GHz, converted with system.qubit_frequency_ghz
//   _invwq  time in units of 1/w_q
//   _ns     time in ns
// Keys without suffix are dimensionless.

struct Scenario {
  std::string name;
  fs::path source_dir;

  // system
  std::string model = "transmon";
  int levels = 3;
  double qubit_frequency_ghz = 5.0;
  double anharmonicity = 0.0;
  bool rwa = false;
  int magnus_order = 2;
  int quadrature_nodes = 16;

  // pulse
  PulseShape shape = PulseShape::drag;
  double omega_d = 1.0;
  double omega_x = 0.0, omega_y = 0.0;
  double theta = kPi / 2;
  double gate_time = 0.0;
  double sigma = 0.0;           // absolute width if > 0
  double sigma_fraction = 0.25;  // sigma / t_g otherwise
  std::optional<double> xi;      // empty: calibrate on closed dynamics

  std::vector<NoiseChannel> channels;

  // solver
  std::vector<SolverMode> modes{SolverMode::full_tcl, SolverMode::redfield};
  double h = 0.1;
  double t_f = 0.0;  // 0: gate time
  int initial_level = 0;
  long record_every = 1;
  long memory_cells = 0;
  FilterMode filter = FilterMode::production;

  // output
  bool write_trajectories = true;
  bool write_metrics = false;
  int subspace = 2;
  double spectra_omega_max = 3.0;
  double spectra_tau_max = 100.0;
  int spectra_points = 1001;

  double ns() const { return 2.0 * kPi * qubit_frequency_ghz; }  // 1 ns in units of 1/w_q
  double to_ns(double t) const { return t / ns(); }
  double width(double t_g) const { return sigma > 0.0 ? sigma : sigma_fraction * t_g; }
  double final_time(double t_g) const { return t_f > 0.0 ? t_f : t_g; }
};

namespace detail {

/// Strict view of one TOML table: every key has to be consumed.
class Block {
 public:
  Block(const toml::table* t, std::string name, const Scenario* units = nullptr)
      : table_(t), name_(std::move(name)), units_(units) {}

  bool present() const { return table_ != nullptr; }

  bool has(const std::string& key) const { return table_ && table_->contains(key); }

  const toml::node* node(const std::string& key) {
    if (!table_) return nullptr;
    const toml::node* n = table_->get(key);
    if (n) used_.insert(key);
    return n;
  }

  double number(const std::string& key, std::optional<double> fallback = std::nullopt) {
    const toml::node* n = node(key);
    if (!n) {
      if (fallback) return *fallback;
      throw error("missing required key '" + key + "'");
    }
    if (!n->is_number()) throw error("'" + key + "' must be a number");
    const double v = *n->value<double>();
    if (!std::isfinite(v)) throw error("'" + key + "' must be finite");
    return v;
  }

  long integer(const std::string& key, long fallback) {
    const toml::node* n = node(key);
    if (!n) return fallback;
    if (!n->is_integer()) throw error("'" + key + "' must be an integer");
    return static_cast<long>(*n->value<int64_t>());
  }

  bool boolean(const std::string& key, bool fallback) {
    const toml::node* n = node(key);
    if (!n) return fallback;
    if (!n->is_boolean()) throw error("'" + key + "' must be true or false");
    return *n->value<bool>();
  }

  std::string text(const std::string& key, std::optional<std::string> fallback = std::nullopt) {
    const toml::node* n = node(key);
    if (!n) {
      if (fallback) return *fallback;
      throw error("missing required key '" + key + "'");
    }
    if (!n->is_string()) throw error("'" + key + "' must be a string");
    return *n->value<std::string>();
  }

  std::optional<double> frequency(const std::string& base) {
    return quantity(base, {{"_wq", 1.0}, {"_ghz", units_ ? 1.0 / units_->qubit_frequency_ghz : 0.0}});
  }

  std::optional<double> time(const std::string& base) {
    return quantity(base, {{"_invwq", 1.0}, {"_ns", units_ ? units_->ns() : 0.0}});
  }

  void finish() const {
    if (!table_) return;
    for (auto&& [k, v] : *table_)
      if (!used_.count(std::string(k.str()))) throw error("unknown key '" + std::string(k.str()) + "'");
  }

  ConfigError error(const std::string& what) const { return ConfigError("[" + name_ + "] " + what); }

 private:
  std::optional<double> quantity(const std::string& base, const std::vector<std::pair<std::string, double>>& units) {
    std::optional<double> out;
    if (has(base)) throw error("'" + base + "' needs a unit suffix (" + units[0].first + " or " + units[1].first + ")");
    for (const auto& [suffix, scale] : units) {
      if (!has(base + suffix)) continue;
      if (out) throw error("'" + base + "' given in more than one unit");
      out = number(base + suffix) * scale;
    }
    return out;
  }

  const toml::table* table_;
  std::string name_;
  const Scenario* units_;
  std::set<std::string> used_;
};

inline const toml::table* sub_table(const toml::table& root, const std::string& key, bool required) {
  const toml::node* n = root.get(key);
  if (!n) {
    if (required) throw ConfigError("missing [" + key + "] block");
    return nullptr;
  }
  if (!n->is_table()) throw ConfigError("'" + key + "' must be a table");
  return n->as_table();
}

inline NoiseChannel parse_channel(Block& b, const Scenario& sc) {
  const std::string tag = b.text("operator");
  const std::string kind = b.text("spectrum");
  NoiseSpectrum s;
  if (kind == "ohmic") {
    const auto wc = b.frequency("cutoff");
    const auto beta = b.time("beta");
    if (!wc) throw b.error("ohmic spectrum needs cutoff_wq or cutoff_ghz");
    s = ohmic_bath(b.number("lambda"), *wc, beta ? *beta : std::numeric_limits<double>::infinity());
  } else if (kind == "one_over_f") {
    const auto wir = b.frequency("infrared");
    if (!wir) throw b.error("1/f spectrum needs infrared_wq or infrared_ghz");
    s = one_over_f(b.number("lambda"), *wir);
  } else if (kind == "tabulated") {
    fs::path p = b.text("file");
    if (p.is_relative()) p = sc.source_dir / p;
    s = load_spectrum_csv(p.string());
  } else {
    throw b.error("unknown spectrum '" + kind + "' (expected ohmic, one_over_f, tabulated)");
  }
  b.finish();
  return make_channel(tag, sc.levels, s);
}

}  // namespace detail

inline ClosedSystemModel build_model(const Scenario& sc, double t_g, double xi) {
  PulseEnvelope p = sc.shape == PulseShape::rabi
                        ? rabi_envelope(sc.omega_x, sc.omega_y, sc.omega_d)
                        : drag_envelope(sc.theta, t_g, sc.width(t_g), xi, sc.anharmonicity, sc.omega_d);
  ClosedSystemModel m = sc.model == "qubit" ? qubit_model(p, sc.rwa) : transmon_model(sc.anharmonicity, sc.levels, p, sc.rwa);
  m.magnus_order = sc.magnus_order;
  m.quadrature_nodes = sc.quadrature_nodes;
  return m;
}

inline Matrix initial_state(const Scenario& sc) { return unit_matrix(sc.levels, sc.initial_level, sc.initial_level); }

inline SimulationConfig make_config(const Scenario& sc, SolverMode mode, double t_g, double xi) {
  SimulationConfig c;
  c.model = build_model(sc, t_g, xi);
  c.channels = sc.channels;
  c.mode = mode;
  c.h = sc.h;
  c.t_f = sc.final_time(t_g);
  c.rho0 = initial_state(sc);
  c.memory_cells = sc.memory_cells;
  c.record_every = sc.record_every;
  c.filter = sc.filter;
  return c;
}

/// exp(-i theta sigma_x / 2) on the computational subspace.
inline Matrix target_unitary(const Scenario& sc) {
  if (sc.subspace != 2) throw ConfigError("gate metrics are defined for a two-level computational subspace");
  return std::cos(0.5 * sc.theta) * Matrix::Identity(2, 2) - kI * std::sin(0.5 * sc.theta) * pauli_x();
}

inline Scenario parse_scenario(const toml::table& root, const std::string& name, const fs::path& dir) {
  Scenario sc;
  sc.name = name;
  sc.source_dir = dir;
  for (auto&& [k, v] : root) {
    const std::string key(k.str());
    if (key != "system" && key != "pulse" && key != "noise" && key != "solver" && key != "output")
      throw ConfigError("unknown block '" + key + "'");
  }

  detail::Block system(detail::sub_table(root, "system", true), "system", &sc);
  sc.model = system.text("model", std::string("transmon"));
  if (sc.model != "qubit" && sc.model != "transmon") throw system.error("model must be 'qubit' or 'transmon'");
  sc.qubit_frequency_ghz = system.number("qubit_frequency_ghz", 5.0);
  if (!(sc.qubit_frequency_ghz > 0.0)) throw system.error("qubit_frequency_ghz must be positive");
  if (sc.model == "qubit") {
    sc.levels = 2;
    if (system.has("levels") && system.integer("levels", 2) != 2) throw system.error("a qubit has two levels");
    if (system.frequency("anharmonicity")) throw system.error("a qubit has no anharmonicity");
  } else {
    sc.levels = static_cast<int>(system.integer("levels", 3));
    if (sc.levels < 2 || sc.levels > 8) throw system.error("levels must lie in [2, 8]");
    const auto anh = system.frequency("anharmonicity");
    if (!anh) throw system.error("transmon needs anharmonicity_ghz or anharmonicity_wq");
    sc.anharmonicity = *anh;
  }
  sc.rwa = system.boolean("rwa", false);
  sc.magnus_order = static_cast<int>(system.integer("magnus_order", 2));
  sc.quadrature_nodes = static_cast<int>(system.integer("quadrature_nodes", 16));
  system.finish();

  detail::Block pulse(detail::sub_table(root, "pulse", true), "pulse", &sc);
  const std::string shape = pulse.text("shape");
  sc.omega_d = pulse.frequency("drive_frequency").value_or(1.0);
  if (shape == "rabi") {
    sc.shape = PulseShape::rabi;
    sc.omega_x = pulse.frequency("omega_x").value_or(0.0);
    sc.omega_y = pulse.frequency("omega_y").value_or(0.0);
  } else if (shape == "drag") {
    sc.shape = PulseShape::drag;
    if (sc.model == "qubit") throw pulse.error("DRAG pulses need a transmon model");
    sc.theta = pulse.number("theta", kPi / 2);
    const auto tg = pulse.time("gate_time");
    if (!tg || !(*tg > 0.0)) throw pulse.error("DRAG pulse needs a positive gate_time_ns or gate_time_invwq");
    sc.gate_time = *tg;
    const auto sigma = pulse.time("sigma");
    if (sigma && pulse.has("sigma_fraction")) throw pulse.error("give sigma or sigma_fraction, not both");
    if (sigma) {
      if (!(*sigma > 0.0)) throw pulse.error("sigma must be positive");
      sc.sigma = *sigma;
    }
    sc.sigma_fraction = pulse.number("sigma_fraction", 0.25);
    if (!(sc.sigma_fraction > 0.0)) throw pulse.error("sigma_fraction must be positive");
    if (pulse.has("xi")) {
      const toml::node* n = pulse.node("xi");
      if (n->is_number())
        sc.xi = *n->value<double>();
      else if (!(n->is_string() && *n->value<std::string>() == "optimize"))
        throw pulse.error("xi must be a number or \"optimize\"");
    }
  } else {
    throw pulse.error("shape must be 'rabi' or 'drag'");
  }
  pulse.finish();

  if (const toml::node* n = root.get("noise")) {
    const toml::array* arr = n->as_array();
    if (!arr || !arr->is_array_of_tables()) throw ConfigError("'noise' must be an array of tables ([[noise]])");
    int idx = 0;
    for (const auto& item : *arr) {
      detail::Block b(item.as_table(), "noise " + std::to_string(idx++), &sc);
      sc.channels.push_back(detail::parse_channel(b, sc));
    }
  }

  detail::Block solver(detail::sub_table(root, "solver", true), "solver", &sc);
  if (const toml::node* n = solver.node("modes")) {
    const toml::array* arr = n->as_array();
    if (!arr || arr->empty()) throw solver.error("modes must be a non-empty array of strings");
    sc.modes.clear();
    for (const auto& m : *arr) {
      if (!m.is_string()) throw solver.error("modes must be a non-empty array of strings");
      const SolverMode mode = parse_mode(*m.value<std::string>());
      if (std::find(sc.modes.begin(), sc.modes.end(), mode) != sc.modes.end()) throw solver.error("duplicate mode");
      sc.modes.push_back(mode);
    }
  }
  const auto h = solver.time("step");
  if (!h) throw solver.error("missing step_invwq or step_ns");
  sc.h = *h;
  sc.t_f = solver.time("final_time").value_or(0.0);
  if (sc.shape == PulseShape::rabi && !(sc.t_f > 0.0)) throw solver.error("a Rabi drive needs a positive final time");
  if (sc.t_f < 0.0) throw solver.error("final time must be positive");
  sc.initial_level = static_cast<int>(solver.integer("initial_level", 0));
  if (sc.initial_level < 0 || sc.initial_level >= sc.levels) throw solver.error("initial_level out of range");
  sc.record_every = solver.integer("record_every", 1);
  sc.memory_cells = solver.integer("memory_cells", 0);
  const std::string filter = solver.text("filter", std::string("production"));
  if (filter == "production")
    sc.filter = FilterMode::production;
  else if (filter == "oracle")
    sc.filter = FilterMode::oracle;
  else
    throw solver.error("filter must be 'production' or 'oracle'");
  solver.finish();

  detail::Block out(detail::sub_table(root, "output", false), "output", &sc);
  sc.name = out.text("prefix", name);
  if (sc.name.empty() || sc.name.find('/') != std::string::npos) throw out.error("prefix must be a plain file name");
  sc.write_trajectories = out.boolean("trajectories", true);
  sc.write_metrics = out.boolean("metrics", sc.shape == PulseShape::drag);
  sc.subspace = static_cast<int>(out.integer("subspace", 2));
  sc.spectra_omega_max = out.frequency("spectra_omega_max").value_or(3.0);
  sc.spectra_tau_max = out.time("spectra_tau_max").value_or(100.0);
  sc.spectra_points = static_cast<int>(out.integer("spectra_points", 1001));
  if (!(sc.spectra_omega_max > 0.0) || !(sc.spectra_tau_max > 0.0) || sc.spectra_points < 2)
    throw out.error("spectra grid must have positive extent and at least two points");
  out.finish();

  if (sc.write_metrics) {
    if (sc.subspace < 1 || sc.subspace > sc.levels) throw ConfigError("[output] subspace out of range");
    target_unitary(sc);
  }
  // resolvability of every frequency by h, for every requested mode
  const double t_g = sc.shape == PulseShape::drag ? sc.gate_time : 0.0;
  for (SolverMode m : sc.modes) validate_config(make_config(sc, m, t_g, sc.xi.value_or(0.0)));
  if (sc.write_metrics) validate_config(make_config(sc, SolverMode::closed, t_g, sc.xi.value_or(0.0)));
  return sc;
}

inline Scenario parse_scenario_text(const std::string& text, const std::string& name = "scenario",
                                    const fs::path& dir = ".") {
  try {
    return parse_scenario(toml::parse(text), name, dir);
  } catch (const toml::parse_error& e) {
    throw ConfigError("TOML syntax error at line " + std::to_string(e.source().begin.line) + ": " +
                      std::string(e.description()));
  }
}

inline Scenario load_scenario(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_scenario_text(ss.str(), path.stem().string(), path.parent_path());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

/// Overrides from the command line.
inline void set_step(Scenario& sc, double h) {
  sc.h = h;
  const double t_g = sc.shape == PulseShape::drag ? sc.gate_time : 0.0;
  for (SolverMode m : sc.modes) validate_config(make_config(sc, m, t_g, sc.xi.value_or(0.0)));
}

inline std::vector<SolverMode> parse_mode_list(const std::string& s) {
  std::vector<SolverMode> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const SolverMode m = parse_mode(item);
    if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
  }
  if (out.empty()) throw ConfigError("empty mode list");
  return out;
}

// ---------------------------------------------------------------------------
// Runs

struct ModeRun {
  SolverMode mode = SolverMode::closed;
  std::optional<Trajectory> trajectory;
  std::optional<GateMetrics> metrics;
  Diagnostics worst;  // over every integrated operator
  std::vector<std::string> warnings;
};

inline void merge_worst(Diagnostics& into, const Diagnostics& d) {
  into.trace_defect = std::max(into.trace_defect, d.trace_defect);
  into.hermiticity_defect = std::max(into.hermiticity_defect, d.hermiticity_defect);
  into.min_eigenvalue = std::min(into.min_eigenvalue, d.min_eigenvalue);
}

/// One mode at one gate time. The map inputs and the scenario's initial
/// state share a single pass of the filtered rates.
inline ModeRun run_mode(const Scenario& sc, SolverMode mode, double t_g, double xi, bool want_trajectory,
                        bool want_metrics) {
  SimulationConfig cfg = make_config(sc, mode, t_g, xi);
  std::vector<Matrix> inputs;
  if (want_metrics) inputs = map_inputs(sc.subspace, sc.levels);
  const std::size_t n_map = inputs.size();
  if (want_trajectory)
    inputs.push_back(cfg.rho0);
  else
    cfg.record_every = std::max(1L, step_count(cfg));
  std::vector<Trajectory> tr = integrate_states(cfg, inputs);

  ModeRun run;
  run.mode = mode;
  for (const auto& t : tr) merge_worst(run.worst, t.worst);
  if (want_metrics) {
    std::vector<Matrix> finals;
    for (std::size_t i = 0; i < n_map; ++i) finals.push_back(tr[i].final_state());
    QuantumMap e = assemble_map(finals, sc.subspace);
    if (map_determinant(e) < 1e-12) run.warnings.push_back("projected dynamical map is close to singular (|det| < 1e-12)");
    run.metrics = gate_metrics(e, target_unitary(sc));
  }
  if (want_trajectory) {
    run.trajectory = std::move(tr.back());
    for (const auto& w : run.trajectory->warnings) run.warnings.push_back(w);
  }
  return run;
}

inline GateMetrics closed_gate_metrics(const Scenario& sc, double t_g, double xi) {
  return *run_mode(sc, SolverMode::closed, t_g, xi, false, true).metrics;
}

struct XiOptimum {
  double xi = 0.0;
  double fidelity = 0.0;
  double fidelity_at_zero = 0.0;
  bool unimodal = true;
  std::vector<std::string> warnings;
};

inline constexpr int kXiGridPoints = 31;
inline constexpr double kXiMax = 1.5;
inline constexpr double kXiTolerance = 1e-4;

/// Maximizes f over xi: 31-point grid on [0, 1.5], then golden section in
/// the cell pair around the best grid point. A grid that is not unimodal
/// returns its best point with a warning.
inline XiOptimum maximize_xi(const std::function<double(double)>& f) {
  std::vector<double> grid(kXiGridPoints), val(kXiGridPoints);
  for (int i = 0; i < kXiGridPoints; ++i) {
    grid[i] = kXiMax * i / (kXiGridPoints - 1);
    val[i] = f(grid[i]);
  }
  const int b = static_cast<int>(std::max_element(val.begin(), val.end()) - val.begin());
  XiOptimum out;
  out.fidelity_at_zero = val[0];
  out.xi = grid[b];
  out.fidelity = val[b];
  for (int i = 0; i + 1 < kXiGridPoints; ++i)
    if ((i < b && val[i] > val[i + 1]) || (i >= b && val[i] < val[i + 1])) out.unimodal = false;
  if (!out.unimodal) {
    out.warnings.push_back("xi grid is not unimodal; using best grid point xi = " + csv_number(out.xi));
    return out;
  }
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double lo = grid[std::max(b - 1, 0)], hi = grid[std::min(b + 1, kXiGridPoints - 1)];
  double x1 = hi - g * (hi - lo), x2 = lo + g * (hi - lo);
  double f1 = f(x1), f2 = f(x2);
  while (hi - lo > kXiTolerance) {
    if (f1 >= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - g * (hi - lo);
      f1 = f(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + g * (hi - lo);
      f2 = f(x2);
    }
  }
  const double xm = 0.5 * (lo + hi), fm = f(xm);
  if (fm >= out.fidelity) {
    out.xi = xm;
    out.fidelity = fm;
  }
  return out;
}

/// Closed-dynamics DRAG calibration of the sqrt(X)-type target.
inline XiOptimum optimize_drag_xi(const Scenario& sc, double t_g) {
  if (sc.shape != PulseShape::drag) throw ConfigError("DRAG calibration needs a DRAG pulse");
  XiOptimum x = maximize_xi([&](double xi) { return closed_gate_metrics(sc, t_g, xi).fidelity; });
  for (auto& w : x.warnings) w = "t_g = " + csv_number(sc.to_ns(t_g)) + " ns: " + w;
  return x;
}

struct MetricsRow {
  double t_g_ns = 0.0;
  SolverMode mode = SolverMode::closed;
  GateMetrics gate;
  GateMetrics unitary;
  Diagnostics worst;
};

struct SweepPoint {
  double t_g = 0.0;
  XiOptimum xi;
  std::vector<MetricsRow> rows;  // closed first, then the requested modes
  std::vector<std::string> warnings;
};

/// Calibrates xi on closed dynamics, then evaluates every mode at xi*.
inline SweepPoint evaluate_gate(const Scenario& sc, double t_g, const std::vector<SolverMode>& modes) {
  SweepPoint p;
  p.t_g = t_g;
  p.xi = optimize_drag_xi(sc, t_g);
  p.warnings = p.xi.warnings;
  const ModeRun closed = run_mode(sc, SolverMode::closed, t_g, p.xi.xi, false, true);
  const GateMetrics unitary = *closed.metrics;
  p.rows.push_back({sc.to_ns(t_g), SolverMode::closed, unitary, unitary, closed.worst});
  for (SolverMode m : modes) {
    if (m == SolverMode::closed) continue;
    ModeRun r = run_mode(sc, m, t_g, p.xi.xi, false, true);
    for (auto& w : r.warnings) p.warnings.push_back(w);
    p.rows.push_back({sc.to_ns(t_g), m, *r.metrics, unitary, r.worst});
  }
  return p;
}

struct Table1 {
  double t_g_ns = 0.0;
  double xi = 0.0;
  GateMetrics closed, redfield, full;
  // rows: unitary, uncorrelated, correlated, total
  std::array<double, 4> gate_error{}, leakage{};
  Diagnostics worst;
  std::vector<std::string> warnings;
};

/// (u, r - u, f - r, f) after snapping u, r, f to a common power-of-two
/// quantum a few ulps of the largest of them; every difference and sum is
/// then exact, so the first three entries add up to the last.
inline std::array<double, 4> decompose(double u, double r, double f) {
  const double m = std::max({std::abs(u), std::abs(r), std::abs(f)});
  if (m == 0.0) return {0.0, 0.0, 0.0, 0.0};
  const double q = std::ldexp(1.0, std::ilogb(m) - 50);
  auto snap = [&](double x) { return std::nearbyint(x / q) * q; };
  u = snap(u);
  r = snap(r);
  f = snap(f);
  return {u, r - u, f - r, f};
}

inline Table1 emit_table1(const Scenario& sc) {
  if (sc.shape != PulseShape::drag) throw ConfigError("the error table needs a DRAG pulse");
  if (sc.channels.empty()) throw ConfigError("the error table needs at least one noise channel");
  const SweepPoint p = evaluate_gate(sc, sc.gate_time, {SolverMode::redfield, SolverMode::full_tcl});
  Table1 t;
  t.t_g_ns = sc.to_ns(sc.gate_time);
  t.xi = p.xi.xi;
  t.closed = p.rows[0].gate;
  t.redfield = p.rows[1].gate;
  t.full = p.rows[2].gate;
  t.gate_error = decompose(t.closed.infidelity(), t.redfield.infidelity(), t.full.infidelity());
  t.leakage = decompose(t.closed.leakage, t.redfield.leakage, t.full.leakage);
  for (const auto& r : p.rows) merge_worst(t.worst, r.worst);
  t.warnings = p.warnings;
  return t;
}

// ---------------------------------------------------------------------------
// Work pool and staged output

/// Runs job(i) for i in [0, n) on up to `threads` workers. All jobs run to
/// completion; the exception of the lowest failing index is rethrown.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& job) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < n;) {
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t nt = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < nt; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Files are written under a private staging directory and moved into place
/// only by commit(); without a commit nothing is left behind.
class StagedOutput {
 public:
  explicit StagedOutput(const fs::path& out_dir) : out_(out_dir) {
    if (!fs::exists(out_)) {
      fs::create_directories(out_);
      created_ = true;
    } else if (!fs::is_directory(out_)) {
      throw ConfigError("output path is not a directory: " + out_.string());
    }
    stage_ = out_ / (".dtcl-staging-" + std::to_string(::getpid()));
    fs::remove_all(stage_);
    fs::create_directory(stage_);
  }

  StagedOutput(const StagedOutput&) = delete;
  StagedOutput& operator=(const StagedOutput&) = delete;

  ~StagedOutput() {
    std::error_code ec;
    if (!committed_) {
      fs::remove_all(stage_, ec);
      if (created_ && fs::is_empty(out_, ec)) fs::remove(out_, ec);
    }
  }

  /// Path for a file that becomes out_dir/name on commit.
  fs::path file(const std::string& name) {
    std::lock_guard<std::mutex> lock(mu_);
    if (!finals_.insert(name).second) throw ConfigError("output file written twice: " + name);
    return stage_ / name;
  }

  /// Path for an intermediate file that is discarded on commit.
  fs::path scratch(const std::string& name) const { return stage_ / ("part." + name); }

  std::vector<fs::path> commit() {
    std::vector<fs::path> out;
    for (const auto& name : finals_) {
      fs::rename(stage_ / name, out_ / name);
      out.push_back(out_ / name);
    }
    fs::remove_all(stage_);
    committed_ = true;
    return out;
  }

 private:
  fs::path out_, stage_;
  bool created_ = false;
  bool committed_ = false;
  std::set<std::string> finals_;
  std::mutex mu_;
};

inline std::ofstream open_csv(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw ConfigError("cannot write " + p.string());
  return os;
}

inline const char* kMetricsHeader = "t_g_ns,mode,fidelity,infidelity,leakage,unitary_fidelity,unitary_leakage\n";

inline void write_metrics_row(std::ostream& os, const MetricsRow& r) {
  os << csv_number(r.t_g_ns) << ',' << to_string(r.mode) << ',' << csv_number(r.gate.fidelity) << ','
     << csv_number(r.gate.infidelity()) << ',' << csv_number(r.gate.leakage) << ',' << csv_number(r.unitary.fidelity)
     << ',' << csv_number(r.unitary.leakage) << '\n';
}

inline const char* kXiHeader = "t_g_ns,xi,fidelity,fidelity_at_xi0,unimodal\n";

inline void write_xi_row(std::ostream& os, double t_g_ns, const XiOptimum& x) {
  os << csv_number(t_g_ns) << ',' << csv_number(x.xi) << ',' << csv_number(x.fidelity) << ','
     << csv_number(x.fidelity_at_zero) << ',' << (x.unimodal ? 1 : 0) << '\n';
}

inline void write_table1(std::ostream& os, const Table1& t) {
  static const char* names[4] = {"unitary", "uncorrelated", "correlated", "total"};
  os << "row,gate_error,leakage\n";
  for (int i = 0; i < 4; ++i) os << names[i] << ',' << csv_number(t.gate_error[i]) << ',' << csv_number(t.leakage[i]) << '\n';
}

inline std::vector<std::string> channel_labels(const Scenario& sc) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < sc.channels.size(); ++i) {
    const std::string& tag = sc.channels[i].tag;
    const bool dup = std::count_if(sc.channels.begin(), sc.channels.end(), [&](const NoiseChannel& c) {
                       return c.tag == tag;
                     }) > 1;
    out.push_back(dup ? tag + std::to_string(i) : tag);
  }
  return out;
}

/// Sbar(w) and J(w) on a symmetric frequency grid.
inline void write_spectra(std::ostream& os, const Scenario& sc) {
  const auto labels = channel_labels(sc);
  os << "omega";
  for (const auto& l : labels) os << ',' << l << ".sbar," << l << ".j";
  os << '\n';
  const int n = sc.spectra_points;
  for (int i = 0; i < n; ++i) {
    const double w = -sc.spectra_omega_max + 2.0 * sc.spectra_omega_max * i / (n - 1);
    os << csv_number(w);
    for (const auto& ch : sc.channels)
      os << ',' << csv_number(ch.spectrum.symmetrized(w)) << ',' << csv_number(ch.spectrum.antisymmetrized(w));
    os << '\n';
  }
}

/// C(tau) for tau in (0, tau_max]; the origin is left out since C_phi diverges there.
inline void write_correlations(std::ostream& os, const Scenario& sc) {
  const auto labels = channel_labels(sc);
  os << "tau";
  for (const auto& l : labels) os << ',' << l << ".re_c," << l << ".im_c";
  os << '\n';
  const int n = sc.spectra_points;
  for (int i = 1; i <= n; ++i) {
    const double tau = sc.spectra_tau_max * i / n;
    os << csv_number(tau);
    for (const auto& ch : sc.channels) {
      const cplx c = ch.spectrum.correlation(tau);
      os << ',' << csv_number(c.real()) << ',' << csv_number(c.imag());
    }
    os << '\n';
  }
}

/// Gate times a:b:step in ns, both ends included up to rounding.
inline std::vector<double> parse_gate_times(const std::string& spec) {
  std::vector<double> v;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ':')) {
    std::size_t pos = 0;
    double x;
    try {
      x = std::stod(item, &pos);
    } catch (const std::exception&) {
      throw ConfigError("bad gate-time range '" + spec + "' (expected a:b:step in ns)");
    }
    if (pos != item.size()) throw ConfigError("bad gate-time range '" + spec + "' (expected a:b:step in ns)");
    v.push_back(x);
  }
  if (v.size() != 3) throw ConfigError("bad gate-time range '" + spec + "' (expected a:b:step in ns)");
  const double a = v[0], b = v[1], step = v[2];
  if (!(a > 0.0) || !(b >= a) || !(step > 0.0)) throw ConfigError("gate-time range needs 0 < a <= b and step > 0");
  const long n = static_cast<long>(std::floor((b - a) / step + 1e-9)) + 1;
  if (n > 10000) throw ConfigError("gate-time range has too many points");
  std::vector<double> out;
  for (long i = 0; i < n; ++i) out.push_back(a + i * step);
  return out;
}

}  // namespace dtcl
