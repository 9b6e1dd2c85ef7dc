#pragma once

#include <optional>

#include "dtpbc/model.hpp"

namespace dtpbc {

/// PID tuning gains. K_P and K_I symmetric positive definite, K_D symmetric
/// positive semidefinite.
struct PIDGains {
  Matrix K_P;
  Matrix K_I;
  Matrix K_D;

  static PIDGains scalar(double kp, double ki, double kd, Eigen::Index m = 1);

  Eigen::Index m() const noexcept { return K_P.rows(); }
  void validate() const;
};

struct ControllerState {
  Vector xi;                     ///< integrator state
  std::optional<Vector> x_prev;  ///< previous plant sample (backward-difference derivative)
};

struct PidOutput {
  Vector u;
  Vector xi_next;
};

/// Integrator value at the closed-loop equilibrium, xi* = -K_I^{-1} u*.
Vector integrator_equilibrium(const PIDGains& gains, const EquilibriumSpec& eq);

/**
 * Midpoint-discretized PID acting on the shifted passive output:
 *
 *   xi_{k+1} = xi_k + d y~_k
 *   u_k      = -K_P y~_k - 1/2 K_I (xi_{k+1} + xi_k) - (1/d) K_D C dx_k
 *
 * where dx_k = x_{k+1} - x_k and C = (g*)^T Q.
 */
PidOutput dt_pid_output(const PIDGains& gains, const EquilibriumSpec& eq, const Vector& xi,
                        const Vector& y_tilde, const Vector& dx, double delta);

/// H_c = 1/2 xi~^T K_I xi~ + 1/2 x~^T C^T K_D C x~
double controller_storage(const PIDGains& gains, const EquilibriumSpec& eq, const Vector& xi,
                          const Vector& x, const Vector& xi_star, const Vector& x_star);

struct CtPidOutput {
  Vector u;
  Vector xi_dot;
};

/// Continuous-time law: xi_dot = y~, u = -K_P y~ - K_I xi - K_D y~_dot.
CtPidOutput ct_pid_derivative(const PIDGains& gains, const Vector& xi, const Vector& y_tilde,
                              const Vector& y_tilde_dot);

}  // namespace dtpbc
