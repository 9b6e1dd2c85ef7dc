#include "dtpbc/discretize.hpp"

#include <cmath>
#include <string>

#include "dtpbc/errors.hpp"

namespace dtpbc {

namespace {

constexpr double kMinRcond = 1e-14;

void require_delta(double delta) {
  if (!(delta > 0.0) || !std::isfinite(delta)) {
    throw InvalidArgument("sampling time must be finite and positive");
  }
}

void require_input(const BilinearPHModel& model, const Vector& u) {
  require_size(u, model.m(), "u");
  if (!u.allFinite()) throw InvalidArgument("u has non-finite entries");
}

Vector vector_field(const BilinearPHModel& model, const Vector& x, const Vector& u) {
  return eval_drift(model, x) + eval_input_matrix(model, x) * u;
}

}  // namespace

void StepperSettings::validate() const {
  require_delta(delta);
  if (!(newton_tol > 0.0)) throw InvalidArgument("newton_tol must be positive");
  if (newton_max_iter < 1) throw InvalidArgument("newton_max_iter must be >= 1");
  if (substeps < 1) throw InvalidArgument("substeps must be >= 1");
}

NMPair build_NM(const BilinearPHModel& model, const Vector& u) {
  require_input(model, u);
  NMPair nm{model.J0() - model.R(), model.G0()};
  for (Eigen::Index i = 0; i < model.m(); ++i) {
    nm.N += u(i) * model.J(i);
    nm.M += u(i) * model.G(i);
  }
  return nm;
}

Vector midpoint_step_explicit(const BilinearPHModel& model, const Vector& x, const Vector& u,
                              double delta) {
  require_size(x, model.n(), "x");
  require_delta(delta);
  const NMPair nm = build_NM(model, u);
  const Matrix half_step = (0.5 * delta) * nm.N * model.Q();
  const Matrix identity = Matrix::Identity(model.n(), model.n());

  const Matrix lhs = identity - half_step;
  if (!lhs.allFinite()) throw SingularStepMatrix(0.0);
  Eigen::PartialPivLU<Matrix> lu(lhs);
  const double rcond = lu.rcond();
  if (!(rcond > kMinRcond)) throw SingularStepMatrix(rcond);

  return lu.solve((identity + half_step) * x + delta * nm.M * model.E());
}

MidpointSolution midpoint_step_newton(const BilinearPHModel& model, const Vector& x,
                                      const Vector& u, double delta,
                                      const StepperSettings& settings) {
  require_size(x, model.n(), "x");
  require_input(model, u);
  require_delta(delta);
  settings.validate();

  // d/dz [f(z) + g(z) u] = (J0 - R + sum_i u_i J_i) Q, constant for fixed u.
  Matrix field_jac = (model.J0() - model.R()) * model.Q();
  for (Eigen::Index i = 0; i < model.m(); ++i) field_jac += u(i) * model.J(i) * model.Q();
  const Matrix jac = Matrix::Identity(model.n(), model.n()) - (0.5 * delta) * field_jac;
  if (!jac.allFinite()) throw SingularJacobian(0.0);
  Eigen::PartialPivLU<Matrix> lu(jac);
  const double rcond = lu.rcond();
  if (!(rcond > kMinRcond)) throw SingularJacobian(rcond);

  MidpointSolution sol;
  sol.z = x;
  Vector residual = sol.z - x - (0.5 * delta) * vector_field(model, sol.z, u);
  sol.residual = residual.norm();
  while (!(sol.residual <= settings.newton_tol)) {
    if (sol.iterations >= settings.newton_max_iter || !std::isfinite(sol.residual)) {
      throw NoConvergence(sol.iterations, sol.residual);
    }
    sol.z -= lu.solve(residual);
    ++sol.iterations;
    residual = sol.z - x - (0.5 * delta) * vector_field(model, sol.z, u);
    sol.residual = residual.norm();
  }
  sol.x_next = 2.0 * sol.z - x;
  return sol;
}

Vector euler_step(const BilinearPHModel& model, const Vector& x, const Vector& u, double delta) {
  require_size(x, model.n(), "x");
  require_input(model, u);
  return x + delta * vector_field(model, x, u);
}

Vector rk4_hold(const BilinearPHModel& model, const Vector& x, const Vector& u, double delta,
                int substeps) {
  require_size(x, model.n(), "x");
  require_input(model, u);
  require_delta(delta);
  if (substeps < 1) throw InvalidArgument("substeps must be >= 1");

  // With u frozen the field is affine, F(x) = A x + b; A and b are sampled
  // from the field itself rather than from build_NM.
  const Eigen::Index n = model.n();
  const Vector b = vector_field(model, Vector::Zero(n), u);
  Matrix A(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    A.col(j) = vector_field(model, Vector::Unit(n, j), u) - b;
  }
  const double h = delta / substeps;

  Vector state = x;
  for (int s = 0; s < substeps; ++s) {
    const Vector k1 = A * state + b;
    const Vector k2 = A * (state + (0.5 * h) * k1) + b;
    const Vector k3 = A * (state + (0.5 * h) * k2) + b;
    const Vector k4 = A * (state + h * k3) + b;
    state += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return state;
}

std::vector<Vector> reference_trajectory(const BilinearPHModel& model, const Vector& x0,
                                         std::span<const Vector> u_schedule, double delta,
                                         int substeps) {
  std::vector<Vector> samples;
  samples.reserve(u_schedule.size() + 1);
  samples.push_back(x0);
  for (const Vector& u : u_schedule) {
    samples.push_back(rk4_hold(model, samples.back(), u, delta, substeps));
  }
  return samples;
}

}  // namespace dtpbc
