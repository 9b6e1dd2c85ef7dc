#include "dtpbc/controller.hpp"

#include <cmath>
#include <string>

#include "dtpbc/errors.hpp"

namespace dtpbc {

namespace {

void require_spd(const Matrix& K, Eigen::Index m, const char* name, bool strict) {
  if (K.rows() != m || K.cols() != m) {
    throw DimensionError(std::string(name) + " must be " + std::to_string(m) + "x" +
                         std::to_string(m));
  }
  if (!K.allFinite()) throw InvalidArgument(std::string(name) + " has non-finite entries");
  const double scale = std::max(1.0, K.cwiseAbs().maxCoeff());
  if ((K - K.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw InvalidArgument(std::string(name) + " must be symmetric");
  }
  const double lo = Eigen::SelfAdjointEigenSolver<Matrix>(K, Eigen::EigenvaluesOnly)
                        .eigenvalues()
                        .minCoeff();
  if (strict ? !(lo > 0.0) : (lo < -1e-12 * scale)) {
    throw InvalidArgument(std::string(name) +
                          (strict ? " must be positive definite" : " must be positive semidefinite"));
  }
}

}  // namespace

PIDGains PIDGains::scalar(double kp, double ki, double kd, Eigen::Index m) {
  const Matrix I = Matrix::Identity(m, m);
  PIDGains gains{kp * I, ki * I, kd * I};
  gains.validate();
  return gains;
}

void PIDGains::validate() const {
  const Eigen::Index dim = K_P.rows();
  if (dim == 0) throw DimensionError("gain matrices must be non-empty");
  require_spd(K_P, dim, "K_P", true);
  require_spd(K_I, dim, "K_I", true);
  require_spd(K_D, dim, "K_D", false);
}

Vector integrator_equilibrium(const PIDGains& gains, const EquilibriumSpec& eq) {
  require_size(eq.u_star, gains.m(), "u_star");
  return -gains.K_I.ldlt().solve(eq.u_star);
}

PidOutput dt_pid_output(const PIDGains& gains, const EquilibriumSpec& eq, const Vector& xi,
                        const Vector& y_tilde, const Vector& dx, double delta) {
  if (!(delta > 0.0)) throw InvalidArgument("sampling time must be positive");
  const Eigen::Index m = gains.m();
  require_size(xi, m, "xi");
  require_size(y_tilde, m, "y_tilde");
  require_size(dx, eq.C_mat.cols(), "dx");

  PidOutput out;
  out.xi_next = xi + delta * y_tilde;
  out.u = -gains.K_P * y_tilde - 0.5 * gains.K_I * (out.xi_next + xi) -
          (gains.K_D * (eq.C_mat * dx)) / delta;
  return out;
}

double controller_storage(const PIDGains& gains, const EquilibriumSpec& eq, const Vector& xi,
                          const Vector& x, const Vector& xi_star, const Vector& x_star) {
  require_size(xi, gains.m(), "xi");
  require_size(xi_star, gains.m(), "xi_star");
  require_size(x, eq.C_mat.cols(), "x");
  require_size(x_star, eq.C_mat.cols(), "x_star");
  const Vector xi_t = xi - xi_star;
  const Vector cx_t = eq.C_mat * (x - x_star);
  return 0.5 * xi_t.dot(gains.K_I * xi_t) + 0.5 * cx_t.dot(gains.K_D * cx_t);
}

CtPidOutput ct_pid_derivative(const PIDGains& gains, const Vector& xi, const Vector& y_tilde,
                              const Vector& y_tilde_dot) {
  const Eigen::Index m = gains.m();
  require_size(xi, m, "xi");
  require_size(y_tilde, m, "y_tilde");
  require_size(y_tilde_dot, m, "y_tilde_dot");
  return {-gains.K_P * y_tilde - gains.K_I * xi - gains.K_D * y_tilde_dot, y_tilde};
}

}  // namespace dtpbc
