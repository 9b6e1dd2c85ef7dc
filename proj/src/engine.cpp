#include "dtpbc/engine.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <limits>
#include <string>
#include <thread>

#include "dtpbc/errors.hpp"

namespace dtpbc {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kSettlingBand = 0.01;
constexpr double kConvergenceBand = 1e-6;
constexpr int kZHalvings = 6;
constexpr int kInputHalvings = 30;
constexpr double kMinRcond = 1e-15;
constexpr int kBracketExpansions = 200;

Vector clamp_unit(const Vector& u) { return u.cwiseMax(0.0).cwiseMin(1.0); }

/// Coupled midpoint-plant / midpoint-PID equations for one sample.
///
/// Substituting xi_{k+1} = xi_k + d y~_k and x_{k+1} - x_k = 2 (z - x_k) into
/// the PID law gives u as an affine function of the midpoint,
///   U(z) = -(K_P + d/2 K_I)(C z - y*) - K_I xi_k - (2/d) K_D C (z - x_k),
/// which leaves the plant relation z = x_k + d/2 [f(z) + g(z) U(z)] as the
/// only unknown.
class CoupledStep {
 public:
  CoupledStep(const BilinearPHModel& model, const PIDGains& gains, const EquilibriumSpec& eq,
              const Vector& x, const Vector& xi, double delta, bool clamp)
      : model_(model), x_(x), delta_(delta), clamp_(clamp) {
    const Matrix prop = gains.K_P + (0.5 * delta) * gains.K_I;
    du_dz_ = -(prop + (2.0 / delta) * gains.K_D) * eq.C_mat;
    offset_ = prop * eq.y_star - gains.K_I * xi + (2.0 / delta) * (gains.K_D * (eq.C_mat * x));
    identity_ = Matrix::Identity(model.n(), model.n());
    base_jac_ = (model.J0() - model.R()) * model.Q();
  }

  Vector raw_control(const Vector& z) const { return du_dz_ * z + offset_; }
  Vector control(const Vector& z) const {
    return clamp_ ? clamp_unit(raw_control(z)) : raw_control(z);
  }

  Vector residual(const Vector& z, const Vector& u) const {
    return z - x_ - (0.5 * delta_) * (eval_drift(model_, z) + eval_input_matrix(model_, z) * u);
  }

  /// Residual norm accepted as converged: tol times the magnitude of the
  /// largest term that enters the residual, so the floor follows rounding in
  /// the field, in the input columns and in the cancelling parts of the law.
  double threshold(const Vector& z, const Vector& u, double tol) const {
    const Vector Qz = model_.Q() * z;
    double field = (base_jac_ * z).norm() + (model_.G0() * model_.E()).norm();
    for (Eigen::Index i = 0; i < model_.m(); ++i) {
      field += std::abs(u(i)) * ((model_.J(i) * Qz).norm() + (model_.G(i) * model_.E()).norm());
    }
    const double law = (du_dz_ * z).norm() + offset_.norm();
    field += eval_input_matrix(model_, z).norm() * law;
    return tol * std::max({1.0, x_.norm(), z.norm(), 0.5 * delta_ * field});
  }

  /// d r / d z for the unclamped law.
  Matrix jacobian(const Vector& z, const Vector& u) const {
    Matrix field = base_jac_;
    for (Eigen::Index i = 0; i < model_.m(); ++i) field += u(i) * model_.J(i) * model_.Q();
    field += eval_input_matrix(model_, z) * du_dz_;
    return identity_ - (0.5 * delta_) * field;
  }

  /// Plant midpoint for a fixed input: z = [I - d/2 N Q]^{-1} (x + d/2 M E).
  Vector midpoint_for_input(const Vector& u, Eigen::PartialPivLU<Matrix>& lu) const {
    const NMPair nm = build_NM(model_, u);
    lu.compute(identity_ - (0.5 * delta_) * nm.N * model_.Q());
    return lu.solve(x_ + (0.5 * delta_) * nm.M * model_.E());
  }

  const Matrix& du_dz() const { return du_dz_; }

 private:
  const BilinearPHModel& model_;
  const Vector& x_;
  double delta_;
  bool clamp_;
  Matrix du_dz_;
  Vector offset_;
  Matrix identity_;
  Matrix base_jac_;
};

struct CoupledSolution {
  Vector z;
  Vector u;
  int iterations = 0;
  double residual = kInf;
  bool converged = false;
  bool singular = false;
};

// Damped Newton on the midpoint, seeded at x_k.
CoupledSolution solve_in_state(const CoupledStep& step, const Vector& x,
                               const StepperSettings& settings) {
  CoupledSolution sol;
  sol.z = x;
  sol.u = step.control(sol.z);
  Vector r = step.residual(sol.z, sol.u);
  sol.residual = r.norm();
  while (true) {
    if (sol.residual <= step.threshold(sol.z, sol.u, settings.newton_tol)) {
      sol.converged = true;
      return sol;
    }
    if (sol.iterations >= settings.newton_max_iter || !std::isfinite(sol.residual)) return sol;

    const Matrix jac = step.jacobian(sol.z, sol.u);
    if (!jac.allFinite()) {
      sol.singular = true;
      return sol;
    }
    Eigen::PartialPivLU<Matrix> lu(jac);
    if (!(lu.rcond() > kMinRcond)) {
      sol.singular = true;
      return sol;
    }
    const Vector dir = -lu.solve(r);
    double t = 1.0;
    Vector z_try, u_try, r_try;
    for (int h = 0; h <= kZHalvings; ++h) {
      z_try = sol.z + t * dir;
      u_try = step.control(z_try);
      r_try = step.residual(z_try, u_try);
      if (r_try.norm() < sol.residual) break;
      t *= 0.5;
    }
    sol.z = std::move(z_try);
    sol.u = std::move(u_try);
    r = std::move(r_try);
    sol.residual = r.norm();
    ++sol.iterations;
  }
}

// Newton on phi(u) = u - U(z(u)), where z(u) is the (linear) plant midpoint
// for a frozen input. m-dimensional and well behaved where the state-space
// iteration stalls.
CoupledSolution solve_in_input(const CoupledStep& step, const BilinearPHModel& model,
                               const Vector& x, double delta, bool clamp,
                               const StepperSettings& settings) {
  CoupledSolution sol;
  Eigen::PartialPivLU<Matrix> plant_lu;
  const Eigen::Index m = model.m();

  Vector u = step.control(x);
  auto evaluate = [&](const Vector& u_in, Vector& z_out, Vector& phi_out) {
    z_out = step.midpoint_for_input(u_in, plant_lu);
    phi_out = u_in - step.control(z_out);
  };

  Vector z, phi;
  evaluate(u, z, phi);
  while (true) {
    if (!z.allFinite() || !phi.allFinite()) return sol;
    sol.z = z;
    sol.u = step.control(z);
    sol.residual = step.residual(sol.z, sol.u).norm();
    if (sol.residual <= step.threshold(sol.z, sol.u, settings.newton_tol)) {
      sol.converged = true;
      return sol;
    }
    if (sol.iterations >= settings.newton_max_iter) return sol;

    // dz/du_i = d/2 [I - d/2 N Q]^{-1} g_i(z)
    const Matrix dz_du = (0.5 * delta) * plant_lu.solve(eval_input_matrix(model, z));
    Matrix sens = step.du_dz() * dz_du;
    if (clamp) {
      const Vector raw = step.raw_control(z);
      for (Eigen::Index i = 0; i < m; ++i) {
        if (raw(i) < 0.0 || raw(i) > 1.0) sens.row(i).setZero();
      }
    }
    const Matrix dphi = Matrix::Identity(m, m) - sens;
    Eigen::PartialPivLU<Matrix> lu(dphi);
    if (!dphi.allFinite() || !(lu.rcond() > kMinRcond)) {
      sol.singular = true;
      return sol;
    }
    const Vector dir = -lu.solve(phi);
    const double phi_norm = phi.norm();
    double t = 1.0;
    Vector u_try, z_try, phi_try;
    for (int h = 0; h <= kInputHalvings; ++h) {
      u_try = u + t * dir;
      evaluate(u_try, z_try, phi_try);
      if (phi_try.allFinite() && phi_try.norm() < phi_norm) break;
      t *= 0.5;
    }
    u = std::move(u_try);
    z = std::move(z_try);
    phi = std::move(phi_try);
    ++sol.iterations;
  }
}

// Single-input safeguard. z(u) stays bounded as |u| grows, so
// phi(u) = u - U(z(u)) has the sign of u far out and a sign change always
// exists. Expand geometrically from the start to bracket it, then shrink the
// bracket with Illinois-modified regula falsi within the Newton budget.
CoupledSolution solve_by_bracketing(const CoupledStep& step, const Vector& x,
                                    const StepperSettings& settings) {
  CoupledSolution sol;
  Eigen::PartialPivLU<Matrix> plant_lu;
  auto phi = [&](double u_in, Vector& z_out) {
    const Vector u = Vector::Constant(1, u_in);
    z_out = step.midpoint_for_input(u, plant_lu);
    return u_in - step.control(z_out)(0);
  };
  auto accept = [&](const Vector& z) {
    sol.z = z;
    sol.u = step.control(z);
    sol.residual = step.residual(sol.z, sol.u).norm();
    sol.converged = sol.residual <= step.threshold(sol.z, sol.u, settings.newton_tol);
    return sol.converged;
  };

  Vector z_a, z_b;
  double a = step.control(x)(0);
  double fa = phi(a, z_a);
  if (!std::isfinite(fa)) return sol;
  if (accept(z_a)) return sol;
  if (fa == 0.0) {
    sol.converged = std::isfinite(sol.residual);
    return sol;
  }

  const double direction = fa > 0.0 ? -1.0 : 1.0;
  double width = std::max(1.0, std::abs(a));
  double b = a, fb = fa;
  for (int e = 0; e < kBracketExpansions; ++e, ++sol.iterations) {
    b = a + direction * width;
    fb = phi(b, z_b);
    if (!std::isfinite(fb)) return sol;
    if ((fb > 0.0) != (fa > 0.0) || fb == 0.0) break;
    a = b;
    fa = fb;
    z_a = z_b;
    width *= 2.0;
  }
  if ((fb > 0.0) == (fa > 0.0) && fb != 0.0) return sol;

  int stale = 0;
  for (int it = 0; it < settings.newton_max_iter; ++it, ++sol.iterations) {
    if (accept(z_b)) return sol;
    if (fb == 0.0) {
      sol.converged = std::isfinite(sol.residual);
      return sol;
    }
    double c = b - fb * (b - a) / (fb - fa);
    if (!(c > std::min(a, b) && c < std::max(a, b))) c = 0.5 * (a + b);
    if (c == a || c == b) {
      // Bracket is down to adjacent doubles: the root is as resolved as it can be.
      accept(std::abs(fa) < std::abs(fb) ? z_a : z_b);
      sol.converged = std::isfinite(sol.residual);
      return sol;
    }
    Vector z_c;
    const double fc = phi(c, z_c);
    if (!std::isfinite(fc)) return sol;
    if ((fc > 0.0) != (fb > 0.0)) {
      a = b;
      fa = fb;
      z_a = z_b;
      stale = 0;
    } else if (++stale >= 2) {
      fa *= 0.5;
    }
    b = c;
    fb = fc;
    z_b = std::move(z_c);
  }
  accept(z_b);
  return sol;
}

// One undamped Newton step in the state; kept only if it lowers the residual.
void polish(const CoupledStep& step, CoupledSolution& sol) {
  const Vector r = step.residual(sol.z, sol.u);
  Eigen::PartialPivLU<Matrix> lu(step.jacobian(sol.z, sol.u));
  if (!(lu.rcond() > kMinRcond)) return;
  const Vector z_try = sol.z - lu.solve(r);
  const Vector u_try = step.control(z_try);
  const double r_try = step.residual(z_try, u_try).norm();
  if (r_try < r.norm()) {
    sol.z = z_try;
    sol.u = u_try;
    sol.residual = r_try;
  }
}

void fill_energy(const BilinearPHModel& model, const PIDGains& gains, const EquilibriumSpec& eq,
                 const Vector& x, const Vector& xi, const Vector& x_next, const Vector& xi_next,
                 double delta, StepRecord& rec) {
  const Vector xi_star = integrator_equilibrium(gains, eq);
  rec.H = shifted_storage(model, x, eq.x_star);
  rec.Hc = controller_storage(gains, eq, xi, x, xi_star, eq.x_star);
  rec.V = (rec.H + rec.Hc) / delta;
  const double V_next = (shifted_storage(model, x_next, eq.x_star) +
                         controller_storage(gains, eq, xi_next, x_next, xi_star, eq.x_star)) /
                        delta;
  rec.dV = V_next - rec.V;
}

void require_state(const BilinearPHModel& model, const PIDGains& gains,
                   const ClosedLoopState& state) {
  require_size(state.x, model.n(), "x");
  require_size(state.xi, gains.m(), "xi");
  if (gains.m() != model.m()) throw DimensionError("gain dimension does not match model inputs");
}

void warn_clamp_once(bool& warned) {
  if (!warned) {
    std::clog << "dtpbc: warning: input clamp to [0, 1] is active; the passivity and "
                 "Lyapunov certificates do not apply to this run\n";
    warned = true;
  }
}

double tracking_error(const Plant& plant, const Vector& x, const EquilibriumSpec& eq,
                      const Vector& setpoint) {
  if (const auto* bb = std::get_if<BuckBoostParams>(&plant)) {
    const double v = output_voltage(*bb, x);
    const double v_star = setpoint(0);
    return v_star != 0.0 ? std::abs(v - v_star) / std::abs(v_star) : std::abs(v);
  }
  const double ref = eq.x_star.norm();
  return ref > 0.0 ? (x - eq.x_star).norm() / ref : (x - eq.x_star).norm();
}

double absolute_error(const Plant& plant, const Vector& x, const EquilibriumSpec& eq,
                      const Vector& setpoint) {
  if (const auto* bb = std::get_if<BuckBoostParams>(&plant)) {
    return std::abs(output_voltage(*bb, x) - setpoint(0));
  }
  return (x - eq.x_star).norm();
}

}  // namespace

std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::DtMidpoint: return "dt-midpoint";
    case Mode::DtEuler: return "dt-euler";
    case Mode::Emulation: return "emulation";
  }
  return "unknown";
}

Mode parse_mode(std::string_view text) {
  if (text == "dt-midpoint") return Mode::DtMidpoint;
  if (text == "dt-euler") return Mode::DtEuler;
  if (text == "emulation") return Mode::Emulation;
  throw InvalidArgument("unknown mode '" + std::string(text) +
                        "' (expected dt-midpoint, dt-euler or emulation)");
}

std::string_view to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::Delta: return "delta";
    case SweepAxis::Gains: return "gains";
    case SweepAxis::Reference: return "reference";
  }
  return "unknown";
}

SweepAxis parse_sweep_axis(std::string_view text) {
  if (text == "delta") return SweepAxis::Delta;
  if (text == "gains") return SweepAxis::Gains;
  if (text == "reference") return SweepAxis::Reference;
  throw InvalidArgument("unknown sweep axis '" + std::string(text) +
                        "' (expected delta, gains or reference)");
}

BilinearPHModel plant_model(const Plant& plant) {
  if (const auto* bb = std::get_if<BuckBoostParams>(&plant)) return buck_boost_model(*bb);
  return std::get<BilinearPHModel>(plant);
}

EquilibriumSpec plant_equilibrium(const Plant& plant, const Vector& setpoint) {
  if (const auto* bb = std::get_if<BuckBoostParams>(&plant)) {
    require_size(setpoint, 1, "buck-boost setpoint");
    return buck_boost_reference(*bb, setpoint(0));
  }
  return make_equilibrium(std::get<BilinearPHModel>(plant), setpoint);
}

void Scenario::validate() const {
  stepper.validate();
  gains.validate();
  if (!(t_final > 0.0) || !std::isfinite(t_final)) {
    throw InvalidArgument("t_final must be finite and positive");
  }
  if (record_every < 1) throw InvalidArgument("record_every must be >= 1");
  if (!(blowup_bound > 0.0)) throw InvalidArgument("blow-up bound must be positive");
  if (schedule.empty()) throw InvalidArgument("reference schedule is empty");
  if (schedule.front().t != 0.0) throw InvalidArgument("first schedule entry must be at t = 0");
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    const double t = schedule[i].t;
    if (!(t >= 0.0 && t <= t_final)) {
      throw InvalidArgument("schedule times must lie within [0, t_final]");
    }
    if (i > 0 && t < schedule[i - 1].t) throw InvalidArgument("schedule times must be nondecreasing");
  }
  if (mode == Mode::Emulation && stepper.substeps < 10) {
    throw InvalidArgument("emulation mode needs at least 10 substeps");
  }
}

StepResult closed_loop_step_dt(const BilinearPHModel& model, const PIDGains& gains,
                               const EquilibriumSpec& eq, const ClosedLoopState& state,
                               const StepperSettings& settings, DtSolveOptions options) {
  settings.validate();
  require_state(model, gains, state);
  const double delta = settings.delta;
  const Vector& x = state.x;
  const CoupledStep step(model, gains, eq, x, state.xi, delta, options.clamp_input);

  CoupledSolution sol;
  int spent = 0;
  bool singular = false;
  if (!options.clamp_input) {
    sol = solve_in_state(step, x, settings);
    spent = sol.iterations;
    singular = sol.singular;
  }
  if (!sol.converged) {
    CoupledSolution fallback = solve_in_input(step, model, x, delta, options.clamp_input, settings);
    fallback.iterations += spent;
    if (!fallback.converged && model.m() == 1) {
      spent = fallback.iterations;
      const bool input_singular = fallback.singular;
      fallback = solve_by_bracketing(step, x, settings);
      fallback.iterations += spent;
      fallback.singular = input_singular;
    }
    if (!fallback.converged) {
      if (fallback.singular && singular) throw SingularJacobian(0.0);
      throw NoConvergence(fallback.iterations, fallback.residual);
    }
    sol = std::move(fallback);
  }
  if (!options.clamp_input) polish(step, sol);

  StepResult result;
  const Vector x_next = 2.0 * sol.z - x;
  const Vector y = eq.C_mat * sol.z;
  const Vector y_tilde = y - eq.y_star;
  PidOutput pid = dt_pid_output(gains, eq, state.xi, y_tilde, x_next - x, delta);
  if (options.clamp_input) pid.u = clamp_unit(pid.u);

  result.next = {x_next, pid.xi_next, x};
  result.plant_residual = sol.residual;
  result.controller_residual = (pid.u - sol.u).norm();

  StepRecord& rec = result.record;
  rec.x = x;
  rec.z = sol.z;
  rec.u = sol.u;
  rec.y = y;
  rec.xi = state.xi;
  rec.newton_iters = sol.iterations;
  fill_energy(model, gains, eq, x, state.xi, x_next, pid.xi_next, delta, rec);
  return result;
}

StepResult closed_loop_step_euler(const BilinearPHModel& model, const PIDGains& gains,
                                  const EquilibriumSpec& eq, const ClosedLoopState& state,
                                  double delta, bool clamp_input) {
  require_state(model, gains, state);
  const Vector& x = state.x;
  const Vector x_prev = state.x_prev.value_or(x);
  const Vector y = eq.C_mat * x;
  PidOutput pid = dt_pid_output(gains, eq, state.xi, y - eq.y_star, x - x_prev, delta);
  if (clamp_input) pid.u = clamp_unit(pid.u);
  const Vector x_next = euler_step(model, x, pid.u, delta);

  StepResult result;
  result.next = {x_next, pid.xi_next, x};
  StepRecord& rec = result.record;
  rec.x = x;
  rec.u = pid.u;
  rec.y = y;
  rec.xi = state.xi;
  fill_energy(model, gains, eq, x, state.xi, x_next, pid.xi_next, delta, rec);
  return result;
}

StepResult closed_loop_step_emulation(const BilinearPHModel& model, const PIDGains& gains,
                                      const EquilibriumSpec& eq, const ClosedLoopState& state,
                                      double delta, int substeps, bool clamp_input) {
  if (substeps < 10) throw InvalidArgument("emulation mode needs at least 10 substeps");
  require_state(model, gains, state);
  const Vector& x = state.x;
  const Vector x_prev = state.x_prev.value_or(x);
  const Vector y = eq.C_mat * x;
  PidOutput pid = dt_pid_output(gains, eq, state.xi, y - eq.y_star, x - x_prev, delta);
  if (clamp_input) pid.u = clamp_unit(pid.u);
  const Vector x_next = rk4_hold(model, x, pid.u, delta, substeps);

  StepResult result;
  result.next = {x_next, pid.xi_next, x};
  StepRecord& rec = result.record;
  rec.x = x;
  rec.u = pid.u;
  rec.y = y;
  rec.xi = state.xi;
  fill_energy(model, gains, eq, x, state.xi, x_next, pid.xi_next, delta, rec);
  return result;
}

std::vector<Segment> build_segments(const Scenario& scenario) {
  const double delta = scenario.delta();
  std::vector<Segment> segments;
  for (const ScheduleEntry& entry : scenario.schedule) {
    Segment seg;
    seg.start_step = static_cast<std::size_t>(std::llround(entry.t / delta));
    seg.t = static_cast<double>(seg.start_step) * delta;
    seg.setpoint = entry.setpoint;
    seg.eq = plant_equilibrium(scenario.plant, entry.setpoint);
    seg.xi_star = integrator_equilibrium(scenario.gains, seg.eq);
    // Later entries landing on the same sample supersede earlier ones.
    if (!segments.empty() && segments.back().start_step == seg.start_step) {
      segments.back() = std::move(seg);
    } else {
      segments.push_back(std::move(seg));
    }
  }
  return segments;
}

Trajectory run_scenario(const Scenario& scenario) {
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  scenario.validate();

  const BilinearPHModel model = plant_model(scenario.plant);
  const double delta = scenario.delta();
  const auto n_steps =
      static_cast<std::size_t>(std::max<long long>(1, std::llround(scenario.t_final / delta)));

  Trajectory traj;
  traj.mode = scenario.mode;
  traj.delta = delta;
  traj.record_every = scenario.record_every;
  traj.records.reserve(n_steps / static_cast<std::size_t>(scenario.record_every) + 1);

  traj.segments = build_segments(scenario);

  ClosedLoopState state;
  state.x = scenario.x0.size() == 0 ? Vector::Zero(model.n()) : scenario.x0;
  state.xi = scenario.xi0.size() == 0 ? Vector::Zero(model.m()) : scenario.xi0;
  require_size(state.x, model.n(), "x0");
  require_size(state.xi, model.m(), "xi0");
  state.x_prev = state.x;

  bool warned = false;
  RunSummary& sum = traj.summary;
  sum.min_dV = kInf;
  sum.max_dV = -kInf;

  std::size_t seg_index = 0;
  double last_out = kNaN;       // time of the latest sample outside the settling band
  double last_z_out = kNaN;     // latest step whose midpoint misses the convergence band
  double last_x_out = kNaN;
  bool z_seen = false;
  double peak = 0.0;

  auto observe_sample = [&](const Vector& x, double t, const Segment& seg) {
    const double err = tracking_error(scenario.plant, x, seg.eq, seg.setpoint);
    if (!(err <= kSettlingBand)) last_out = t;
    peak = std::max(peak, absolute_error(scenario.plant, x, seg.eq, seg.setpoint));
    const double band = kConvergenceBand * seg.eq.x_star.norm();
    if (!((x - seg.eq.x_star).norm() <= band)) last_x_out = t;
  };

  observe_sample(state.x, 0.0, traj.segments.front());

  std::size_t k = 0;
  for (; k < n_steps; ++k) {
    if (seg_index + 1 < traj.segments.size() && traj.segments[seg_index + 1].start_step == k) {
      ++seg_index;
      last_out = kNaN;
      last_z_out = kNaN;
      last_x_out = kNaN;
      peak = 0.0;
      observe_sample(state.x, static_cast<double>(k) * delta, traj.segments[seg_index]);
    }
    const Segment& seg = traj.segments[seg_index];
    const double t = static_cast<double>(k) * delta;

    StepResult step;
    try {
      switch (scenario.mode) {
        case Mode::DtMidpoint:
          step = closed_loop_step_dt(model, scenario.gains, seg.eq, state, scenario.stepper,
                                     {scenario.clamp_input});
          break;
        case Mode::DtEuler:
          step = closed_loop_step_euler(model, scenario.gains, seg.eq, state, delta,
                                        scenario.clamp_input);
          break;
        case Mode::Emulation:
          step = closed_loop_step_emulation(model, scenario.gains, seg.eq, state, delta,
                                            scenario.stepper.substeps, scenario.clamp_input);
          break;
      }
    } catch (const NoConvergence& e) {
      throw SolverFailure(k, std::chrono::duration<double>(Clock::now() - start).count(),
                          e.what());
    } catch (const SingularJacobian& e) {
      throw SolverFailure(k, std::chrono::duration<double>(Clock::now() - start).count(),
                          e.what());
    } catch (const SingularStepMatrix& e) {
      throw SolverFailure(k, std::chrono::duration<double>(Clock::now() - start).count(),
                          e.what());
    }
    if (scenario.clamp_input) warn_clamp_once(warned);

    StepRecord& rec = step.record;
    rec.k = k;
    rec.t = t;
    rec.segment = seg_index;

    sum.max_abs_u = std::max(sum.max_abs_u, rec.u.cwiseAbs().maxCoeff());
    sum.min_dV = std::min(sum.min_dV, rec.dV);
    sum.max_dV = std::max(sum.max_dV, rec.dV);
    if (rec.z) {
      z_seen = true;
      if (!((*rec.z - seg.eq.x_star).norm() <= kConvergenceBand * seg.eq.x_star.norm())) {
        last_z_out = t;
      }
    }

    if (k % static_cast<std::size_t>(scenario.record_every) == 0) {
      traj.records.push_back(std::move(rec));
    }
    state = std::move(step.next);

    const double t_next = static_cast<double>(k + 1) * delta;
    if (!state.x.allFinite() || state.x.norm() > scenario.blowup_bound) {
      sum.diverged = true;
      ++k;
      break;
    }
    observe_sample(state.x, t_next, seg);
  }

  const Segment& last = traj.segments[seg_index];
  const double t_end = static_cast<double>(k) * delta;
  sum.steps = k;
  sum.final_x = state.x;
  sum.final_xi = state.xi;
  if (const auto* bb = std::get_if<BuckBoostParams>(&scenario.plant)) {
    sum.final_v = output_voltage(*bb, state.x);
  } else {
    sum.final_v = state.x.norm();
  }
  sum.final_error = tracking_error(scenario.plant, state.x, last.eq, last.setpoint);
  sum.peak_error = peak;

  const bool in_band_at_end = !sum.diverged && sum.final_error <= kSettlingBand;
  if (!in_band_at_end) {
    sum.settling_time = kInf;
  } else if (std::isnan(last_out)) {
    sum.settling_time = 0.0;
  } else {
    sum.settling_time = last_out + delta - last.t;
  }

  // Convergence instants are the first samples after which the band holds to the end.
  if (!z_seen || sum.diverged || (!std::isnan(last_z_out) && last_z_out + delta > t_end - 0.5 * delta)) {
    sum.z_converged_at = kNaN;
  } else {
    sum.z_converged_at = std::isnan(last_z_out) ? last.t : last_z_out + delta;
  }
  if (sum.diverged || (!std::isnan(last_x_out) && last_x_out >= t_end - 0.5 * delta)) {
    sum.x_converged_at = kNaN;
  } else {
    sum.x_converged_at = std::isnan(last_x_out) ? last.t : last_x_out + delta;
  }
  if (sum.steps == 0 || !std::isfinite(sum.min_dV)) {
    sum.min_dV = 0.0;
    sum.max_dV = 0.0;
  }
  sum.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return traj;
}

std::vector<SweepOutcome> sweep(const Scenario& scenario_template, SweepAxis axis,
                                const std::vector<SweepValue>& values, unsigned threads) {
  if (values.empty()) throw InvalidArgument("sweep needs at least one value");

  std::vector<Scenario> runs;
  runs.reserve(values.size());
  for (const SweepValue& value : values) {
    Scenario s = scenario_template;
    switch (axis) {
      case SweepAxis::Delta:
        s.stepper.delta = std::get<double>(value);
        break;
      case SweepAxis::Gains:
        s.gains = std::get<PIDGains>(value);
        break;
      case SweepAxis::Reference:
        if (s.schedule.empty()) throw InvalidArgument("reference sweep needs a schedule");
        s.schedule.back().setpoint = Vector::Constant(1, std::get<double>(value));
        break;
    }
    runs.push_back(std::move(s));
  }

  if (threads == 0) {
    if (const char* env = std::getenv("DTPBC_THREADS")) {
      threads = static_cast<unsigned>(std::max(1L, std::strtol(env, nullptr, 10)));
    } else {
      threads = std::max(1U, std::thread::hardware_concurrency());
    }
  }
  threads = std::min<unsigned>(threads, static_cast<unsigned>(runs.size()));

  std::vector<SweepOutcome> outcomes(runs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) {
      SweepOutcome& out = outcomes[i];
      try {
        Trajectory traj = run_scenario(runs[i]);
        out.status = traj.summary.diverged ? RunStatus::Diverged : RunStatus::Ok;
        out.summary = std::move(traj.summary);
      } catch (const SolverFailure& e) {
        out.status = RunStatus::SolverFailure;
        out.error = e.what();
      } catch (const NotAssignable& e) {
        out.status = RunStatus::NotAssignable;
        out.error = e.what();
      } catch (const std::exception& e) {
        out.status = RunStatus::Invalid;
        out.error = e.what();
      }
    }
  };

  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  return outcomes;
}

}  // namespace dtpbc
