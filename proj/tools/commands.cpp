#include "commands.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <vector>

#include "dtpbc/config.hpp"
#include "dtpbc/errors.hpp"
#include "dtpbc/trajectory_csv.hpp"
#include "dtpbc/verify.hpp"

namespace dtpbc::cli {

namespace {

/// Maps a library exception to its exit code and prints the diagnostic.
template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "dtpbc: config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const SolverFailure& e) {
    err << "dtpbc: solver failure: " << e.what() << '\n';
    return kExitSolverFailure;
  } catch (const NotAssignable& e) {
    err << "dtpbc: equilibrium not assignable: " << e.what() << '\n';
    return kExitNotAssignable;
  } catch (const RankDeficient& e) {
    err << "dtpbc: equilibrium not assignable: " << e.what() << '\n';
    return kExitNotAssignable;
  } catch (const std::exception& e) {
    err << "dtpbc: error: " << e.what() << '\n';
    return kExitUsage;
  }
}

std::string fmt(double v) { return format_double(v); }

std::string fmt_vector(const Vector& v) {
  std::string s = "[";
  for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt(v(i));
  return s + "]";
}

std::string fmt_matrix(const Matrix& m) {
  std::string s = "[";
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    s += r ? "; " : "";
    for (Eigen::Index c = 0; c < m.cols(); ++c) s += (c ? ", " : "") + fmt(m(r, c));
  }
  return s + "]";
}

void print_summary(std::ostream& out, const Trajectory& traj) {
  const RunSummary& s = traj.summary;
  out << "summary\n"
      << "  mode            " << to_string(traj.mode) << '\n'
      << "  delta           " << fmt(traj.delta) << '\n'
      << "  steps           " << s.steps << '\n'
      << "  diverged        " << (s.diverged ? "true" : "false") << '\n'
      << "  final_v         " << fmt(s.final_v) << '\n'
      << "  final_error     " << fmt(s.final_error) << '\n'
      << "  settling_time   " << fmt(s.settling_time) << '\n'
      << "  peak_error      " << fmt(s.peak_error) << '\n'
      << "  max_abs_u       " << fmt(s.max_abs_u) << '\n'
      << "  dV_range        " << fmt(s.min_dV) << " .. " << fmt(s.max_dV) << '\n'
      << "  z_converged_at  " << fmt(s.z_converged_at) << '\n'
      << "  x_converged_at  " << fmt(s.x_converged_at) << '\n'
      << "  wall_seconds    " << fmt(s.wall_seconds) << '\n';
}

void print_report(std::ostream& out, const CheckReport& r) {
  out << std::left << std::setw(22) << r.name << (r.passed ? "PASS" : "FAIL")
      << "  max_violation=" << fmt(r.max_violation) << " worst_step=" << r.worst_step
      << " first_violation=" << (r.first_violation ? std::to_string(*r.first_violation) : "none")
      << " tol=" << fmt(r.tolerance) << " steps=" << r.steps_checked << '\n';
}

void print_skipped(std::ostream& out, const char* name, const std::string& why) {
  out << std::left << std::setw(22) << name << "SKIPPED  " << why << '\n';
}

int exit_code(RunStatus status) {
  switch (status) {
    case RunStatus::Ok: return kExitOk;
    case RunStatus::Diverged: return kExitDiverged;
    case RunStatus::SolverFailure: return kExitSolverFailure;
    case RunStatus::NotAssignable: return kExitNotAssignable;
    case RunStatus::Invalid: return kExitUsage;
  }
  return kExitUsage;
}

std::string_view status_name(RunStatus status) {
  switch (status) {
    case RunStatus::Ok: return "ok";
    case RunStatus::Diverged: return "diverged";
    case RunStatus::SolverFailure: return "solver_failure";
    case RunStatus::NotAssignable: return "not_assignable";
    case RunStatus::Invalid: return "invalid";
  }
  return "invalid";
}

std::vector<std::string> split_values(const std::string& text) {
  std::vector<std::string> items;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    items.push_back(item.substr(first, item.find_last_not_of(" \t") - first + 1));
  }
  return items;
}

/// Gain triples are written "K_P:K_I:K_D".
PIDGains parse_gain_triple(const std::string& text) {
  std::vector<double> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ':')) parts.push_back(parse_double(item, "sweep.values"));
  if (parts.size() != 3) {
    throw ConfigError("sweep.values", "gain values are written K_P:K_I:K_D, got '" + text + "'");
  }
  return PIDGains::scalar(parts[0], parts[1], parts[2]);
}

}  // namespace

int cmd_simulate(const std::filesystem::path& config_path, const std::filesystem::path& out_path,
                 const std::optional<std::string>& mode_override, std::ostream& out,
                 std::ostream& err) {
  return guarded(err, [&] {
    Scenario scenario = scenario_from_config(load_config(config_path));
    if (mode_override) {
      scenario.mode = parse_mode(*mode_override);
      scenario.validate();
    }
    const Trajectory traj = run_scenario(scenario);
    save_trajectory_csv(out_path, traj, scenario);
    print_summary(out, traj);
    if (traj.summary.diverged) {
      err << "dtpbc: trajectory diverged after " << traj.summary.steps << " steps\n";
      return static_cast<int>(kExitDiverged);
    }
    return static_cast<int>(kExitOk);
  });
}

int cmd_verify(const std::filesystem::path& trajectory_csv,
               const std::filesystem::path& config_path, double tol, std::ostream& out,
               std::ostream& err) {
  return guarded(err, [&] {
    const CsvTrajectory csv = load_trajectory_csv(trajectory_csv);
    Scenario scenario = scenario_from_config(load_config(config_path));
    scenario.mode = csv.mode;
    const std::string expected = scenario_hash_hex(scenario);
    if (expected != csv.scenario_hash) {
      err << "dtpbc: scenario hash mismatch: trajectory " << csv.scenario_hash << ", config "
          << expected << '\n';
      return static_cast<int>(kExitUsage);
    }
    if (csv.record_every != 1) {
      out << "trajectory is decimated (record_every=" << csv.record_every
          << "); step identities cannot be checked\n";
      for (const char* name : {"recorded_energy", "plant_passivity", "controller_passivity",
                               "lyapunov", "lyapunov_decrease"}) {
        print_skipped(out, name, "needs every step recorded");
      }
      return static_cast<int>(kExitOk);
    }

    const Trajectory traj = rebuild_trajectory(csv, scenario);
    const BilinearPHModel model = plant_model(scenario.plant);
    std::vector<CheckReport> reports;
    reports.push_back(check_recorded_energy(traj, model, scenario.gains, tol));
    if (traj.mode == Mode::DtMidpoint) {
      reports.push_back(check_plant_passivity(traj, model, tol));
      reports.push_back(check_controller_passivity(traj, scenario.gains, tol));
      reports.push_back(check_lyapunov(traj, model, scenario.gains, tol));
    } else {
      const std::string why = "midpoint-only check, trajectory mode is " +
                              std::string(to_string(traj.mode));
      print_skipped(out, "plant_passivity", why);
      print_skipped(out, "controller_passivity", why);
      print_skipped(out, "lyapunov", why);
      reports.push_back(check_lyapunov_decrease(traj, model, scenario.gains, tol));
    }
    bool all = true;
    for (const CheckReport& r : reports) {
      print_report(out, r);
      all = all && r.passed;
    }
    return static_cast<int>(all ? kExitOk : kExitCheckFailed);
  });
}

int cmd_sweep(const std::filesystem::path& config_path, const std::string& axis_name,
              const std::string& values, const std::filesystem::path& out_dir, std::ostream& out,
              std::ostream& err) {
  return guarded(err, [&] {
    const Scenario scenario = scenario_from_config(load_config(config_path));
    const SweepAxis axis = parse_sweep_axis(axis_name);
    const std::vector<std::string> items = split_values(values);
    if (items.empty()) throw ConfigError("sweep.values", "value list is empty");
    std::vector<SweepValue> parsed;
    for (const std::string& item : items) {
      if (axis == SweepAxis::Gains) {
        parsed.emplace_back(parse_gain_triple(item));
      } else {
        parsed.emplace_back(parse_double(item, "sweep.values"));
      }
    }

    const std::vector<SweepOutcome> outcomes = sweep(scenario, axis, parsed);
    std::ostringstream table;
    table << "value,status,steps,diverged,final_v,final_error,settling_time,peak_error,"
             "max_abs_u,min_dV,max_dV,z_converged_at,x_converged_at,wall_seconds,error\n";
    int code = kExitOk;
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
      const SweepOutcome& o = outcomes[i];
      table << items[i] << ',' << status_name(o.status) << ',';
      if (o.summary) {
        const RunSummary& s = *o.summary;
        table << s.steps << ',' << (s.diverged ? 1 : 0) << ',' << fmt(s.final_v) << ','
              << fmt(s.final_error) << ',' << fmt(s.settling_time) << ',' << fmt(s.peak_error)
              << ',' << fmt(s.max_abs_u) << ',' << fmt(s.min_dV) << ',' << fmt(s.max_dV) << ','
              << fmt(s.z_converged_at) << ',' << fmt(s.x_converged_at) << ','
              << fmt(s.wall_seconds) << ',';
      } else {
        table << ",,,,,,,,,,,,,";
      }
      std::string message = o.error;
      for (char& c : message) {
        if (c == ',' || c == '\n') c = ';';
      }
      table << message << '\n';
      if (code == kExitOk && o.status != RunStatus::Ok) code = exit_code(o.status);
    }

    std::filesystem::create_directories(out_dir);
    write_file_atomically(out_dir / ("sweep_" + std::string(to_string(axis)) + ".csv"),
                          table.str());
    out << table.str();
    return code;
  });
}

int cmd_equilibrium(const std::filesystem::path& config_path, double v_star, std::ostream& out,
                    std::ostream& err) {
  return guarded(err, [&] {
    const ConfigDocument doc = load_config(config_path);
    const BuckBoostParams p = buck_boost_from_config(doc);
    const EquilibriumSpec eq = buck_boost_reference(p, v_star);
    const BilinearPHModel model = buck_boost_model(p);

    out << "x_star  " << fmt_vector(eq.x_star) << '\n'
        << "i_star  " << fmt(inductor_current(p, eq.x_star)) << '\n'
        << "v_star  " << fmt(output_voltage(p, eq.x_star)) << '\n'
        << "u_star  " << fmt_vector(eq.u_star) << '\n'
        << "y_star  " << fmt_vector(eq.y_star) << '\n'
        << "C       " << fmt_matrix(eq.C_mat) << '\n';

    const bool has_gains = doc.sections.contains("gains");
    if (has_gains) {
      const PIDGains gains = gains_from_config(doc);
      out << "xi_star " << fmt_vector(integrator_equilibrium(gains, eq)) << '\n';
      const DampingReport damping = damping_injection(model, eq, gains);
      out << "damping " << fmt_matrix(damping.matrix) << '\n'
          << "alpha   " << fmt(damping.alpha) << '\n'
          << "damping_satisfied " << (damping.satisfied ? "true" : "false") << '\n';
    } else {
      out << "xi_star (needs a [gains] section)\n";
    }
    return static_cast<int>(kExitOk);
  });
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Discrete-time passivity-based PID control of port-Hamiltonian systems"};
  app.require_subcommand(1);

  std::string config, output, mode, csv_path, axis, values, out_dir;
  double tol = kDefaultIdentityTol;
  double v_star = 0.0;

  auto* sim = app.add_subcommand("simulate", "Run a scenario and write its trajectory CSV");
  sim->add_option("config", config, "Scenario config file")->required();
  sim->add_option("-o,--out", output, "Trajectory CSV path")->required();
  sim->add_option("--mode", mode, "Override the mode: dt-midpoint, dt-euler, emulation");

  auto* ver = app.add_subcommand("verify", "Check the passivity identities along a trajectory");
  ver->add_option("trajectory", csv_path, "Trajectory CSV")->required();
  ver->add_option("config", config, "Scenario config the trajectory was produced from")->required();
  ver->add_option("--tol", tol, "Relative tolerance of the identity checks");

  auto* swp = app.add_subcommand("sweep", "Run one scenario per value along an axis");
  swp->add_option("config", config, "Scenario config file")->required();
  swp->add_option("--axis", axis, "delta, gains or reference")->required();
  swp->add_option("--values", values, "Comma-separated values; gains as K_P:K_I:K_D")->required();
  swp->add_option("-o,--out-dir", out_dir, "Directory for the sweep table")->required();

  auto* eqc = app.add_subcommand("equilibrium", "Print the equilibrium for an output voltage");
  eqc->add_option("config", config, "Config with a [model] section")->required();
  eqc->add_option("--v-star", v_star, "Output voltage setpoint [V]")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "dtpbc: " << e.what() << '\n';
    return kExitUsage;
  }

  if (sim->parsed()) {
    return cmd_simulate(config, output, mode.empty() ? std::nullopt : std::optional(mode), out,
                        err);
  }
  if (ver->parsed()) return cmd_verify(csv_path, config, tol, out, err);
  if (swp->parsed()) return cmd_sweep(config, axis, values, out_dir, out, err);
  return cmd_equilibrium(config, v_star, out, err);
}

}  // namespace dtpbc::cli
