#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "dtpbc/controller.hpp"
#include "dtpbc/discretize.hpp"
#include "dtpbc/model.hpp"

namespace dtpbc {

enum class Mode {
  DtMidpoint,  ///< midpoint plant + midpoint PID, coupled implicit solve
  DtEuler,     ///< forward Euler on plant and controller
  Emulation,   ///< sampled PID driving a finely integrated plant through a zero-order hold
};

std::string_view to_string(Mode mode);
Mode parse_mode(std::string_view text);

/// Either the buck-boost family (setpoints are output voltages) or an
/// explicit model (setpoints are full equilibrium states).
using Plant = std::variant<BuckBoostParams, BilinearPHModel>;

struct ScheduleEntry {
  double t = 0.0;
  Vector setpoint;  ///< [v*] for buck-boost, x* otherwise
};

struct Scenario {
  Plant plant = BuckBoostParams::bench();
  PIDGains gains = PIDGains::scalar(0.1, 0.1, 6e-4);
  StepperSettings stepper;  ///< stepper.delta is the sampling time
  double t_final = 1.0;
  Vector x0;   ///< empty means zero
  Vector xi0;  ///< empty means zero
  std::vector<ScheduleEntry> schedule;
  Mode mode = Mode::DtMidpoint;
  int record_every = 1;
  double blowup_bound = 1e6;
  bool clamp_input = false;  ///< clamp u to [0, 1]; voids the passivity certificates

  double delta() const noexcept { return stepper.delta; }
  void validate() const;
};

BilinearPHModel plant_model(const Plant& plant);
EquilibriumSpec plant_equilibrium(const Plant& plant, const Vector& setpoint);

struct StepRecord {
  std::size_t k = 0;
  double t = 0.0;
  Vector x;                 ///< x_k
  std::optional<Vector> z;  ///< midpoint (x_k + x_{k+1}) / 2, dt-midpoint only
  Vector u;
  Vector y;   ///< passive output used by the controller at step k
  Vector xi;  ///< xi_k
  double H = 0.0;   ///< H(x~_k)
  double Hc = 0.0;  ///< H_c(xi~_k, x~_k)
  double V = 0.0;   ///< (H + H_c) / delta
  double dV = 0.0;  ///< V_{k+1} - V_k under the same equilibrium
  int newton_iters = 0;
  std::size_t segment = 0;
};

struct Segment {
  std::size_t start_step = 0;
  double t = 0.0;
  Vector setpoint;
  EquilibriumSpec eq;
  Vector xi_star;
};

struct RunSummary {
  std::size_t steps = 0;
  bool diverged = false;
  Vector final_x;
  Vector final_xi;
  double final_v = 0.0;            ///< output voltage (buck-boost) or ||x_N||
  double final_error = 0.0;        ///< relative tracking error at t_final
  double settling_time = 0.0;      ///< 1% band, measured from the last reference change
  double peak_error = 0.0;         ///< max |v - v*| over the last segment
  double max_abs_u = 0.0;
  double min_dV = 0.0;
  double max_dV = 0.0;
  double z_converged_at = 0.0;     ///< NaN unless ||z_k - x*|| <= 1e-6 ||x*|| holds to the end
  double x_converged_at = 0.0;     ///< same criterion applied to x_k
  double wall_seconds = 0.0;
};

struct Trajectory {
  Mode mode = Mode::DtMidpoint;
  double delta = 0.0;
  int record_every = 1;
  std::vector<StepRecord> records;
  std::vector<Segment> segments;
  RunSummary summary;
};

struct ClosedLoopState {
  Vector x;
  Vector xi;
  std::optional<Vector> x_prev;
};

struct StepResult {
  ClosedLoopState next;
  StepRecord record;  ///< k, t and segment are left for the caller
  double plant_residual = 0.0;
  double controller_residual = 0.0;
};

struct DtSolveOptions {
  bool clamp_input = false;
};

/// Exact DT interconnection: solves the midpoint plant and midpoint PID
/// simultaneously for z_k, then advances x and xi.
StepResult closed_loop_step_dt(const BilinearPHModel& model, const PIDGains& gains,
                               const EquilibriumSpec& eq, const ClosedLoopState& state,
                               const StepperSettings& settings, DtSolveOptions options = {});

/// Forward Euler on plant and controller; the derivative term uses a backward difference.
StepResult closed_loop_step_euler(const BilinearPHModel& model, const PIDGains& gains,
                                  const EquilibriumSpec& eq, const ClosedLoopState& state,
                                  double delta, bool clamp_input = false);

/// Sampled controller, plant integrated with RK4 under the held input. substeps >= 10.
StepResult closed_loop_step_emulation(const BilinearPHModel& model, const PIDGains& gains,
                                      const EquilibriumSpec& eq, const ClosedLoopState& state,
                                      double delta, int substeps, bool clamp_input = false);

/// One segment per distinct reference-change sample, equilibria resolved.
std::vector<Segment> build_segments(const Scenario& scenario);

Trajectory run_scenario(const Scenario& scenario);

enum class SweepAxis { Delta, Gains, Reference };

std::string_view to_string(SweepAxis axis);
SweepAxis parse_sweep_axis(std::string_view text);

/// Sampling time, a gain set, or an output setpoint, depending on the axis.
using SweepValue = std::variant<double, PIDGains>;

enum class RunStatus { Ok, Diverged, SolverFailure, NotAssignable, Invalid };

struct SweepOutcome {
  RunStatus status = RunStatus::Ok;
  std::optional<RunSummary> summary;
  std::string error;
};

/// Independent runs, one per value, returned in input order. The reference
/// axis replaces the setpoint of the last schedule entry. Failures are captured
/// per run. Runs execute on up to `threads` workers (0 picks the
/// DTPBC_THREADS environment variable, then the hardware concurrency).
std::vector<SweepOutcome> sweep(const Scenario& scenario_template, SweepAxis axis,
                                const std::vector<SweepValue>& values, unsigned threads = 0);

}  // namespace dtpbc
