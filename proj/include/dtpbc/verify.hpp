#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dtpbc/controller.hpp"
#include "dtpbc/engine.hpp"
#include "dtpbc/model.hpp"

namespace dtpbc {

struct DampingReport {
  Matrix matrix;  ///< R + g* K_P (g*)^T
  double alpha = 0.0;
  bool satisfied = false;
};

struct CheckReport {
  std::string name;
  double max_violation = 0.0;
  std::size_t worst_step = 0;
  std::optional<std::size_t> first_violation;
  double tolerance = 0.0;
  std::size_t steps_checked = 0;
  bool passed = true;
};

inline constexpr double kDefaultIdentityTol = 1e-8;

/// Plant side: (1/d) dH(x~) = -z~^T Q R Q z~ + y~^T u~ and (1/d) dH <= y~^T u~.
/// Throws WrongMode unless the trajectory carries midpoints.
CheckReport check_plant_passivity(const Trajectory& traj, const BilinearPHModel& model,
                                  double tol = kDefaultIdentityTol);

/// Controller side: (1/d) dH_c = -y~^T K_P y~ - y~^T u~.
CheckReport check_controller_passivity(const Trajectory& traj, const PIDGains& gains,
                                       double tol = kDefaultIdentityTol);

/// Closed loop: dV = -z~^T Q [R + g* K_P g*^T] Q z~ and dV <= 0.
CheckReport check_lyapunov(const Trajectory& traj, const BilinearPHModel& model,
                           const PIDGains& gains, double tol = kDefaultIdentityTol);

/// V nonincreasing along the recorded states, any mode. Needs no midpoint.
CheckReport check_lyapunov_decrease(const Trajectory& traj, const BilinearPHModel& model,
                                    const PIDGains& gains, double tol = kDefaultIdentityTol);

/// Recorded H, H_c, V and dV columns agree with values recomputed from x and xi.
CheckReport check_recorded_energy(const Trajectory& traj, const BilinearPHModel& model,
                                  const PIDGains& gains, double tol = kDefaultIdentityTol);

DampingReport damping_injection(const BilinearPHModel& model, const EquilibriumSpec& eq,
                                const PIDGains& gains);

enum class OrderMethod { Midpoint, Euler };

struct OrderResult {
  std::vector<double> deltas;
  std::vector<double> errors;
  std::optional<double> exponent;  ///< empty when every error is at rounding level
  bool degenerate = false;
};

/// Least-squares slope of log(error at T) against log(delta), errors measured
/// against the RK4 reference under the same zero-order-held input samples
/// u(k delta).
OrderResult order_check(const BilinearPHModel& model, const Vector& x0,
                        const std::function<Vector(double)>& u_of_t,
                        const std::vector<double>& deltas, double T, OrderMethod method,
                        int reference_substeps = 100);

}  // namespace dtpbc
