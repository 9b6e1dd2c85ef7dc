#include "dtpbc/verify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dtpbc/discretize.hpp"
#include "dtpbc/errors.hpp"

namespace dtpbc {

namespace {

/// Consecutive-sample view over a trajectory recorded at every step.
struct StepPair {
  const StepRecord& rec;
  const Vector& x_next;
  const Vector& xi_next;
  const Segment& seg;
};

template <typename Fn>
void for_each_step(const Trajectory& traj, Fn&& fn) {
  if (traj.record_every != 1) {
    throw InvalidArgument("identity checks need a trajectory recorded at every step");
  }
  const auto& recs = traj.records;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const bool last = i + 1 == recs.size();
    const Vector& x_next = last ? traj.summary.final_x : recs[i + 1].x;
    const Vector& xi_next = last ? traj.summary.final_xi : recs[i + 1].xi;
    if (recs[i].segment >= traj.segments.size()) {
      throw InvalidArgument("record refers to an unknown reference segment");
    }
    fn(StepPair{recs[i], x_next, xi_next, traj.segments[recs[i].segment]});
  }
}

void require_midpoints(const Trajectory& traj, const char* check) {
  if (traj.mode != Mode::DtMidpoint) {
    throw WrongMode(std::string(check) + " applies to dt-midpoint trajectories only (got " +
                    std::string(to_string(traj.mode)) + ")");
  }
  for (const StepRecord& rec : traj.records) {
    if (!rec.z) throw WrongMode(std::string(check) + ": trajectory has no midpoint samples");
  }
}

/// 1/2 b^T K b - 1/2 a^T K a evaluated as 1/2 (b - a)^T K (b + a).
double quadratic_difference(const Matrix& K, const Vector& a, const Vector& b) {
  return 0.5 * (b - a).dot(K * (b + a));
}

double relative(double lhs, double rhs) {
  return std::abs(lhs - rhs) / std::max({1.0, std::abs(lhs), std::abs(rhs)});
}

void accumulate(CheckReport& report, double violation, std::size_t step) {
  ++report.steps_checked;
  if (std::isnan(violation)) violation = HUGE_VAL;
  if (violation > report.max_violation) {
    report.max_violation = violation;
    report.worst_step = step;
  }
  if (violation > report.tolerance && !report.first_violation) report.first_violation = step;
}

CheckReport make_report(const char* name, double tol) {
  CheckReport report;
  report.name = name;
  report.tolerance = tol;
  return report;
}

void finish(CheckReport& report) { report.passed = report.max_violation <= report.tolerance; }

double delta_H(const BilinearPHModel& model, const StepPair& s) {
  const Vector& x_star = s.seg.eq.x_star;
  return quadratic_difference(model.Q(), s.rec.x - x_star, s.x_next - x_star);
}

double delta_Hc(const PIDGains& gains, const StepPair& s) {
  const EquilibriumSpec& eq = s.seg.eq;
  const Matrix CtKC = eq.C_mat.transpose() * gains.K_D * eq.C_mat;
  return quadratic_difference(gains.K_I, s.rec.xi - s.seg.xi_star, s.xi_next - s.seg.xi_star) +
         quadratic_difference(CtKC, s.rec.x - eq.x_star, s.x_next - eq.x_star);
}

}  // namespace

CheckReport check_plant_passivity(const Trajectory& traj, const BilinearPHModel& model,
                                  double tol) {
  require_midpoints(traj, "plant passivity check");
  CheckReport report = make_report("plant_passivity", tol);
  const Matrix QRQ = model.Q() * model.R() * model.Q();
  for_each_step(traj, [&](const StepPair& s) {
    const EquilibriumSpec& eq = s.seg.eq;
    const Vector z_t = *s.rec.z - eq.x_star;
    const double supply = (s.rec.y - eq.y_star).dot(s.rec.u - eq.u_star);
    const double lhs = delta_H(model, s) / traj.delta;
    const double rhs = -z_t.dot(QRQ * z_t) + supply;
    const double identity = relative(lhs, rhs);
    const double inequality = std::max(0.0, lhs - supply) / std::max({1.0, std::abs(lhs), std::abs(supply)});
    accumulate(report, std::max(identity, inequality), s.rec.k);
  });
  finish(report);
  return report;
}

CheckReport check_controller_passivity(const Trajectory& traj, const PIDGains& gains,
                                       double tol) {
  require_midpoints(traj, "controller passivity check");
  CheckReport report = make_report("controller_passivity", tol);
  for_each_step(traj, [&](const StepPair& s) {
    const EquilibriumSpec& eq = s.seg.eq;
    const Vector y_t = s.rec.y - eq.y_star;
    const double lhs = delta_Hc(gains, s) / traj.delta;
    const double rhs = -y_t.dot(gains.K_P * y_t) - y_t.dot(s.rec.u - eq.u_star);
    accumulate(report, relative(lhs, rhs), s.rec.k);
  });
  finish(report);
  return report;
}

CheckReport check_lyapunov(const Trajectory& traj, const BilinearPHModel& model,
                           const PIDGains& gains, double tol) {
  require_midpoints(traj, "Lyapunov check");
  CheckReport report = make_report("lyapunov", tol);
  for_each_step(traj, [&](const StepPair& s) {
    const EquilibriumSpec& eq = s.seg.eq;
    const Matrix damping = model.R() + eq.g_star * gains.K_P * eq.g_star.transpose();
    const Vector qz = model.Q() * (*s.rec.z - eq.x_star);
    const double dV = (delta_H(model, s) + delta_Hc(gains, s)) / traj.delta;
    const double rhs = -qz.dot(damping * qz);
    const double V = (shifted_storage(model, s.rec.x, eq.x_star) +
                      controller_storage(gains, eq, s.rec.xi, s.rec.x, s.seg.xi_star, eq.x_star)) /
                     traj.delta;
    const double increase = std::max(0.0, dV) / std::max(1.0, std::abs(V));
    accumulate(report, std::max(relative(dV, rhs), increase), s.rec.k);
  });
  finish(report);
  return report;
}

CheckReport check_lyapunov_decrease(const Trajectory& traj, const BilinearPHModel& model,
                                    const PIDGains& gains, double tol) {
  CheckReport report = make_report("lyapunov_decrease", tol);
  for_each_step(traj, [&](const StepPair& s) {
    const EquilibriumSpec& eq = s.seg.eq;
    const double dV = (delta_H(model, s) + delta_Hc(gains, s)) / traj.delta;
    const double V = (shifted_storage(model, s.rec.x, eq.x_star) +
                      controller_storage(gains, eq, s.rec.xi, s.rec.x, s.seg.xi_star, eq.x_star)) /
                     traj.delta;
    const double violation = std::isfinite(dV) ? std::max(0.0, dV) / std::max(1.0, std::abs(V))
                                               : HUGE_VAL;
    accumulate(report, violation, s.rec.k);
  });
  finish(report);
  return report;
}

CheckReport check_recorded_energy(const Trajectory& traj, const BilinearPHModel& model,
                                  const PIDGains& gains, double tol) {
  CheckReport report = make_report("recorded_energy", tol);
  for_each_step(traj, [&](const StepPair& s) {
    const EquilibriumSpec& eq = s.seg.eq;
    const double H = shifted_storage(model, s.rec.x, eq.x_star);
    const double Hc = controller_storage(gains, eq, s.rec.xi, s.rec.x, s.seg.xi_star, eq.x_star);
    const double V = (H + Hc) / traj.delta;
    const double V_next = (shifted_storage(model, s.x_next, eq.x_star) +
                           controller_storage(gains, eq, s.xi_next, s.x_next, s.seg.xi_star,
                                              eq.x_star)) /
                          traj.delta;
    const double violation = std::max({relative(H, s.rec.H), relative(Hc, s.rec.Hc),
                                        relative(V, s.rec.V),
                                        std::abs((V_next - V) - s.rec.dV) /
                                            std::max({1.0, std::abs(V), std::abs(V_next)})});
    accumulate(report, violation, s.rec.k);
  });
  finish(report);
  return report;
}

DampingReport damping_injection(const BilinearPHModel& model, const EquilibriumSpec& eq,
                                const PIDGains& gains) {
  DampingReport report;
  report.matrix = model.R() + eq.g_star * gains.K_P * eq.g_star.transpose();
  report.matrix = 0.5 * (report.matrix + report.matrix.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(report.matrix, Eigen::EigenvaluesOnly);
  report.alpha = eig.eigenvalues().minCoeff();
  const double floor = 64.0 * std::numeric_limits<double>::epsilon() *
                       std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
  report.satisfied = report.alpha > floor;
  return report;
}

OrderResult order_check(const BilinearPHModel& model, const Vector& x0,
                        const std::function<Vector(double)>& u_of_t,
                        const std::vector<double>& deltas, double T, OrderMethod method,
                        int reference_substeps) {
  if (deltas.size() < 3) throw InvalidArgument("order check needs at least three step sizes");
  const double ratio = deltas[1] / deltas[0];
  for (std::size_t i = 1; i < deltas.size(); ++i) {
    if (!(deltas[i] > 0.0) || std::abs(deltas[i] / deltas[i - 1] - ratio) > 1e-9 * ratio) {
      throw InvalidArgument("order check step sizes must form a geometric progression");
    }
  }
  if (!(T > 0.0)) throw InvalidArgument("order check horizon must be positive");

  OrderResult result;
  result.deltas = deltas;
  double scale = 1.0;
  for (double delta : deltas) {
    const auto steps = static_cast<std::size_t>(std::llround(T / delta));
    std::vector<Vector> inputs;
    inputs.reserve(steps);
    for (std::size_t k = 0; k < steps; ++k) inputs.push_back(u_of_t(static_cast<double>(k) * delta));

    const Vector reference =
        reference_trajectory(model, x0, inputs, delta, reference_substeps).back();
    Vector x = x0;
    for (const Vector& u : inputs) {
      x = method == OrderMethod::Midpoint ? midpoint_step_explicit(model, x, u, delta)
                                          : euler_step(model, x, u, delta);
    }
    result.errors.push_back((x - reference).norm());
    scale = std::max(scale, reference.norm());
  }

  const double largest = *std::max_element(result.errors.begin(), result.errors.end());
  if (!(largest > 1e-13 * scale) ||
      std::any_of(result.errors.begin(), result.errors.end(), [](double e) { return !(e > 0.0); })) {
    result.degenerate = true;
    return result;
  }

  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  const auto n = static_cast<double>(deltas.size());
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    const double lx = std::log(deltas[i]);
    const double ly = std::log(result.errors[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  result.exponent = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  return result;
}

}  // namespace dtpbc
