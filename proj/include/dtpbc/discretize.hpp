#pragma once

#include <span>
#include <vector>

#include "dtpbc/model.hpp"

namespace dtpbc {

struct StepperSettings {
  double delta = 5e-3;  ///< sampling time [s]
  double newton_tol = 1e-12;
  int newton_max_iter = 50;
  int substeps = 100;  ///< refinement of the reference integrator per sample

  /// Throws InvalidArgument unless every field is in range.
  void validate() const;
};

struct NMPair {
  Matrix N;  ///< J0 - R + sum_i u_i J_i
  Matrix M;  ///< G0 + sum_i u_i G_i
};

NMPair build_NM(const BilinearPHModel& model, const Vector& u);

/// Implicit midpoint step in its closed form
///   x+ = [I - d/2 N Q]^{-1} ([I + d/2 N Q] x + d M E).
/// Throws SingularStepMatrix when the left factor is numerically singular.
Vector midpoint_step_explicit(const BilinearPHModel& model, const Vector& x, const Vector& u,
                              double delta);

struct MidpointSolution {
  Vector x_next;
  Vector z;  ///< midpoint (x + x_next) / 2
  int iterations = 0;
  double residual = 0.0;
};

/// Newton solve of z = x + d/2 [f(z) + g(z) u], seeded at z = x.
MidpointSolution midpoint_step_newton(const BilinearPHModel& model, const Vector& x,
                                      const Vector& u, double delta,
                                      const StepperSettings& settings);

Vector euler_step(const BilinearPHModel& model, const Vector& x, const Vector& u, double delta);

/// Classical RK4 across one hold interval [t, t + delta] with u held constant.
Vector rk4_hold(const BilinearPHModel& model, const Vector& x, const Vector& u, double delta,
                int substeps);

/// High-accuracy baseline: RK4 at step delta/substeps under zero-order-held
/// inputs u_schedule[k] on [k delta, (k+1) delta). Returns the samples at the
/// coarse instants, x_0 .. x_K.
std::vector<Vector> reference_trajectory(const BilinearPHModel& model, const Vector& x0,
                                         std::span<const Vector> u_schedule, double delta,
                                         int substeps);

}  // namespace dtpbc
