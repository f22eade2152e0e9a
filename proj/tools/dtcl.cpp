// dtcl: driven open-system simulations from TOML scenario files.
//
//   dtcl simulate <file>                 trajectories (+ gate metrics for DRAG pulses)
//   dtcl sweep <file> --tg a:b:step      xi calibration and metrics over gate times (ns)
//   dtcl optimize-drag <file> --tg x     closed-dynamics xi calibration at one gate time
//   dtcl table1 <file>                   unitary / uncorrelated / correlated / total errors
//   dtcl spectra <file>                  Sbar, J and C tables of every noise channel
//
// Exit codes: 0 ok, 2 configuration error, 3 numerical abort.

#include "dtcl/scenario.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace dtcl;

namespace {

struct Options {
  std::string file;
  std::string out_dir = ".";
  std::string modes;
  std::string tg_range = "3:8.5:0.5";
  double tg = 0.0;
  double step = 0.0;
  int threads = 1;
};

Scenario load(const Options& o, bool use_modes) {
  Scenario sc = load_scenario(o.file);
  if (use_modes && !o.modes.empty()) sc.modes = parse_mode_list(o.modes);
  if (o.step > 0.0) set_step(sc, o.step);
  return sc;
}

void report(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

void finish(StagedOutput& out) {
  for (const auto& p : out.commit()) std::cout << "wrote " << p.string() << '\n';
}

void simulate(const Options& o) {
  const Scenario sc = load(o, true);
  std::vector<std::string> warnings;
  double xi = sc.xi.value_or(0.0);
  const double t_g = sc.shape == PulseShape::drag ? sc.gate_time : 0.0;
  if (sc.shape == PulseShape::drag && !sc.xi) {
    const XiOptimum x = optimize_drag_xi(sc, t_g);
    report(x.warnings);
    xi = x.xi;
    std::cout << "xi* = " << csv_number(xi) << '\n';
  }

  std::vector<SolverMode> modes = sc.modes;
  if (sc.write_metrics && std::find(modes.begin(), modes.end(), SolverMode::closed) == modes.end())
    modes.insert(modes.begin(), SolverMode::closed);
  std::vector<ModeRun> runs(modes.size());
  StagedOutput out(o.out_dir);
  parallel_for(modes.size(), o.threads, [&](std::size_t i) {
    const bool traj = sc.write_trajectories &&
                      std::find(sc.modes.begin(), sc.modes.end(), modes[i]) != sc.modes.end();
    runs[i] = run_mode(sc, modes[i], t_g, xi, traj, sc.write_metrics);
    if (!runs[i].trajectory) return;
    std::ofstream os = open_csv(out.file(sc.name + "_" + to_string(modes[i]) + ".csv"));
    write_trajectory_csv(os, *runs[i].trajectory);
  });
  for (const auto& r : runs) {
    report(r.warnings);
    if (r.trajectory) {
      const Diagnostics& d = r.trajectory->worst;
      std::cout << to_string(r.mode) << ": max trace defect " << csv_number(d.trace_defect)
                << ", max Hermiticity defect " << csv_number(d.hermiticity_defect) << '\n';
    }
  }
  if (sc.write_metrics) {
    const GateMetrics unitary = *runs.front().metrics;
    std::ofstream os = open_csv(out.file(sc.name + "_metrics.csv"));
    os << kMetricsHeader;
    for (const auto& r : runs) write_metrics_row(os, {sc.to_ns(t_g), r.mode, *r.metrics, unitary, r.worst});
  }
  finish(out);
}

void sweep(const Options& o) {
  Scenario sc = load(o, true);
  if (sc.shape != PulseShape::drag) throw ConfigError("sweep needs a DRAG pulse");
  const std::vector<double> tgs = parse_gate_times(o.tg_range);
  // fail before any work if a point is not resolvable by the step
  for (double t : tgs)
    for (SolverMode m : sc.modes) validate_config(make_config(sc, m, t * sc.ns(), 0.0));

  StagedOutput out(o.out_dir);
  std::vector<std::vector<std::string>> warnings(tgs.size());
  parallel_for(tgs.size(), o.threads, [&](std::size_t i) {
    SweepPoint p = evaluate_gate(sc, tgs[i] * sc.ns(), sc.modes);
    warnings[i] = p.warnings;
    std::ofstream os = open_csv(out.scratch(std::to_string(i)));
    for (auto& r : p.rows) {
      r.t_g_ns = tgs[i];
      write_metrics_row(os, r);
    }
    std::ofstream xs = open_csv(out.scratch(std::to_string(i) + ".xi"));
    write_xi_row(xs, tgs[i], p.xi);
  });

  std::ofstream metrics = open_csv(out.file(sc.name + "_sweep.csv"));
  std::ofstream xi = open_csv(out.file(sc.name + "_xi.csv"));
  metrics << kMetricsHeader;
  xi << kXiHeader;
  for (std::size_t i = 0; i < tgs.size(); ++i) {
    report(warnings[i]);
    metrics << std::ifstream(out.scratch(std::to_string(i))).rdbuf();
    xi << std::ifstream(out.scratch(std::to_string(i) + ".xi")).rdbuf();
  }
  metrics.close();
  xi.close();
  finish(out);
}

void optimize_drag(const Options& o) {
  const Scenario sc = load(o, false);
  if (sc.shape != PulseShape::drag) throw ConfigError("optimize-drag needs a DRAG pulse");
  const double t_g = o.tg > 0.0 ? o.tg * sc.ns() : sc.gate_time;
  validate_config(make_config(sc, SolverMode::closed, t_g, 0.0));
  const XiOptimum x = optimize_drag_xi(sc, t_g);
  report(x.warnings);
  std::cout << "xi* = " << csv_number(x.xi) << ", closed fidelity " << csv_number(x.fidelity) << " (xi = 0: "
            << csv_number(x.fidelity_at_zero) << ")\n";
  StagedOutput out(o.out_dir);
  std::ofstream os = open_csv(out.file(sc.name + "_xi.csv"));
  os << kXiHeader;
  write_xi_row(os, o.tg > 0.0 ? o.tg : sc.to_ns(t_g), x);
  os.close();
  finish(out);
}

void table1(const Options& o) {
  const Scenario sc = load(o, false);
  const Table1 t = emit_table1(sc);
  report(t.warnings);
  std::cout << "t_g = " << csv_number(t.t_g_ns) << " ns, xi* = " << csv_number(t.xi) << '\n';
  static const char* names[4] = {"Unitary", "Uncorrelated", "Correlated", "Total"};
  for (int i = 0; i < 4; ++i) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-13s gate error % .3e   leakage % .3e", names[i], t.gate_error[i], t.leakage[i]);
    std::cout << buf << '\n';
  }
  StagedOutput out(o.out_dir);
  {
    std::ofstream os = open_csv(out.file(sc.name + "_table1.csv"));
    write_table1(os, t);
    std::ofstream ms = open_csv(out.file(sc.name + "_table1_metrics.csv"));
    ms << kMetricsHeader;
    write_metrics_row(ms, {t.t_g_ns, SolverMode::closed, t.closed, t.closed, t.worst});
    write_metrics_row(ms, {t.t_g_ns, SolverMode::redfield, t.redfield, t.closed, t.worst});
    write_metrics_row(ms, {t.t_g_ns, SolverMode::full_tcl, t.full, t.closed, t.worst});
  }
  finish(out);
}

void spectra(const Options& o) {
  const Scenario sc = load(o, false);
  if (sc.channels.empty()) throw ConfigError("scenario has no noise channels");
  StagedOutput out(o.out_dir);
  {
    std::ofstream s = open_csv(out.file(sc.name + "_spectra.csv"));
    write_spectra(s, sc);
    std::ofstream c = open_csv(out.file(sc.name + "_correlation.csv"));
    write_correlations(c, sc);
  }
  finish(out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Driven open quantum systems with the time-convolutionless master equation"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("file", o.file, "scenario TOML file")->required();
    sub->add_option("--out-dir", o.out_dir, "directory for the CSV outputs");
    sub->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--step", o.step, "RK4 step h in units of 1/w_q (overrides the file)")->check(CLI::PositiveNumber);
  };

  CLI::App* sim = app.add_subcommand("simulate", "run every requested mode of a scenario");
  common(sim);
  sim->add_option("--mode", o.modes, "comma-separated modes: closed, redfield, full_tcl");

  CLI::App* sw = app.add_subcommand("sweep", "xi calibration and gate metrics over gate times");
  common(sw);
  sw->add_option("--mode", o.modes, "comma-separated modes: closed, redfield, full_tcl");
  sw->add_option("--tg", o.tg_range, "gate times a:b:step in ns");

  CLI::App* opt = app.add_subcommand("optimize-drag", "closed-dynamics DRAG calibration");
  common(opt);
  opt->add_option("--tg", o.tg, "gate time in ns (default: the file's)")->check(CLI::PositiveNumber);

  CLI::App* t1 = app.add_subcommand("table1", "error decomposition at the scenario's gate time");
  common(t1);

  CLI::App* sp = app.add_subcommand("spectra", "dump Sbar, J and C tables");
  common(sp);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*sim) simulate(o);
    if (*sw) sweep(o);
    if (*opt) optimize_drag(o);
    if (*t1) table1(o);
    if (*sp) spectra(o);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << '\n';
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
