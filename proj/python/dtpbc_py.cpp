#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dtpbc/config.hpp"
#include "dtpbc/engine.hpp"
#include "dtpbc/errors.hpp"
#include "dtpbc/trajectory_csv.hpp"
#include "dtpbc/verify.hpp"

namespace py = pybind11;
using namespace dtpbc;

namespace {

// Row-per-sample arrays; one numpy array per recorded quantity.
py::dict record_arrays(const Trajectory& t) {
  const auto rows = static_cast<Eigen::Index>(t.records.size());
  const Eigen::Index n = rows ? t.records.front().x.size() : 0;
  const Eigen::Index m = rows ? t.records.front().u.size() : 0;
  Eigen::VectorXd time(rows), H(rows), Hc(rows), V(rows), dV(rows);
  Matrix x(rows, n), u(rows, m), y(rows, m), xi(rows, m);
  Eigen::VectorXi iters(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const StepRecord& r = t.records[static_cast<std::size_t>(i)];
    time(i) = r.t;
    x.row(i) = r.x.transpose();
    u.row(i) = r.u.transpose();
    y.row(i) = r.y.transpose();
    xi.row(i) = r.xi.transpose();
    H(i) = r.H;
    Hc(i) = r.Hc;
    V(i) = r.V;
    dV(i) = r.dV;
    iters(i) = r.newton_iters;
  }
  py::dict d;
  d["t"] = time;
  d["x"] = x;
  d["u"] = u;
  d["y"] = y;
  d["xi"] = xi;
  d["H"] = H;
  d["Hc"] = Hc;
  d["V"] = V;
  d["dV"] = dV;
  d["newton_iters"] = iters;
  return d;
}

py::dict summary_dict(const RunSummary& s) {
  py::dict d;
  d["steps"] = s.steps;
  d["diverged"] = s.diverged;
  d["final_x"] = s.final_x;
  d["final_xi"] = s.final_xi;
  d["final_v"] = s.final_v;
  d["final_error"] = s.final_error;
  d["settling_time"] = s.settling_time;
  d["peak_error"] = s.peak_error;
  d["max_abs_u"] = s.max_abs_u;
  d["min_dV"] = s.min_dV;
  d["max_dV"] = s.max_dV;
  d["z_converged_at"] = s.z_converged_at;
  d["x_converged_at"] = s.x_converged_at;
  d["wall_seconds"] = s.wall_seconds;
  return d;
}

// Checks that apply to the trajectory's mode, keyed by check name.
std::vector<CheckReport> verify_all(const Trajectory& t, const Scenario& s, double tol) {
  const BilinearPHModel model = plant_model(s.plant);
  std::vector<CheckReport> out{check_recorded_energy(t, model, s.gains, tol)};
  if (t.mode == Mode::DtMidpoint) {
    out.push_back(check_plant_passivity(t, model, tol));
    out.push_back(check_controller_passivity(t, s.gains, tol));
    out.push_back(check_lyapunov(t, model, s.gains, tol));
  } else {
    out.push_back(check_lyapunov_decrease(t, model, s.gains, tol));
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Discrete-time passivity-based PID control of bilinear port-Hamiltonian plants";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<SolverFailure>(m, "SolverFailure", base.ptr());
  py::register_exception<NotAssignable>(m, "NotAssignable", base.ptr());
  py::register_exception<WrongMode>(m, "WrongMode", base.ptr());

  py::class_<BuckBoostParams>(m, "BuckBoostParams")
      .def(py::init<>())
      .def_readwrite("V_in", &BuckBoostParams::V_in)
      .def_readwrite("L", &BuckBoostParams::L)
      .def_readwrite("C", &BuckBoostParams::C_cap)
      .def_readwrite("r", &BuckBoostParams::r);

  py::class_<EquilibriumSpec>(m, "EquilibriumSpec")
      .def_readonly("x_star", &EquilibriumSpec::x_star)
      .def_readonly("u_star", &EquilibriumSpec::u_star)
      .def_readonly("y_star", &EquilibriumSpec::y_star)
      .def_readonly("g_star", &EquilibriumSpec::g_star)
      .def_readonly("C", &EquilibriumSpec::C_mat)
      .def_readonly("residual", &EquilibriumSpec::residual);

  py::class_<PIDGains>(m, "PIDGains")
      .def(py::init(&PIDGains::scalar), py::arg("K_P"), py::arg("K_I"), py::arg("K_D"), py::arg("m") = 1)
      .def_readwrite("K_P", &PIDGains::K_P)
      .def_readwrite("K_I", &PIDGains::K_I)
      .def_readwrite("K_D", &PIDGains::K_D);

  py::class_<DampingReport>(m, "DampingReport")
      .def_readonly("matrix", &DampingReport::matrix)
      .def_readonly("alpha", &DampingReport::alpha)
      .def_readonly("satisfied", &DampingReport::satisfied);

  py::class_<CheckReport>(m, "CheckReport")
      .def_readonly("name", &CheckReport::name)
      .def_readonly("max_violation", &CheckReport::max_violation)
      .def_readonly("worst_step", &CheckReport::worst_step)
      .def_readonly("first_violation", &CheckReport::first_violation)
      .def_readonly("tolerance", &CheckReport::tolerance)
      .def_readonly("steps_checked", &CheckReport::steps_checked)
      .def_readonly("passed", &CheckReport::passed);

  py::class_<Scenario>(m, "Scenario")
      .def_readwrite("gains", &Scenario::gains)
      .def_readwrite("t_final", &Scenario::t_final)
      .def_readwrite("record_every", &Scenario::record_every)
      .def_property(
          "delta", [](const Scenario& s) { return s.stepper.delta; },
          [](Scenario& s, double d) { s.stepper.delta = d; })
      .def_property(
          "mode", [](const Scenario& s) { return std::string(to_string(s.mode)); },
          [](Scenario& s, const std::string& text) { s.mode = parse_mode(text); })
      .def_property_readonly("hash", &scenario_hash_hex);

  py::class_<Trajectory>(m, "Trajectory")
      .def_property_readonly("mode", [](const Trajectory& t) { return std::string(to_string(t.mode)); })
      .def_readonly("delta", &Trajectory::delta)
      .def_property_readonly("summary", [](const Trajectory& t) { return summary_dict(t.summary); })
      .def("arrays", &record_arrays)
      .def("__len__", [](const Trajectory& t) { return t.records.size(); });

  m.def("buck_boost_reference", &buck_boost_reference, py::arg("params"), py::arg("v_star"));
  m.def(
      "damping_injection",
      [](const BuckBoostParams& p, double v_star, const PIDGains& g) {
        return damping_injection(buck_boost_model(p), buck_boost_reference(p, v_star), g);
      },
      py::arg("params"), py::arg("v_star"), py::arg("gains"));
  m.def(
      "load_scenario", [](const std::filesystem::path& path) { return scenario_from_config(load_config(path)); },
      py::arg("path"));
  m.def(
      "parse_scenario", [](const std::string& text) { return scenario_from_config(parse_config_text(text)); },
      py::arg("text"));
  m.def("run_scenario", &run_scenario, py::arg("scenario"), py::call_guard<py::gil_scoped_release>());
  m.def("verify", &verify_all, py::arg("trajectory"), py::arg("scenario"),
        py::arg("tol") = kDefaultIdentityTol);
  m.def(
      "save_csv",
      [](const std::filesystem::path& path, const Trajectory& t, const Scenario& s) {
        save_trajectory_csv(path, t, s);
      },
      py::arg("path"), py::arg("trajectory"), py::arg("scenario"));
}
