#pragma once

#include <Eigen/Dense>
#include <vector>

namespace dtpbc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/**
 * @brief Averaged bilinear port-Hamiltonian converter model
 *
 *   xdot = (J0 - R + sum_i u_i J_i) Q x + (G0 + sum_i u_i G_i) E
 *
 * with stored energy H(x) = 1/2 x^T Q x. The state holds inductor fluxes and
 * capacitor charges; u holds the duty ratios of the m switches.
 *
 * Construction validates every structural property the passivity arguments
 * rely on (Q symmetric positive definite, J skew, R symmetric positive
 * semidefinite, consistent dimensions, finite entries). Instances are
 * immutable afterwards.
 */
class BilinearPHModel {
 public:
  BilinearPHModel(Matrix Q, Matrix J0, std::vector<Matrix> J, Matrix R, Matrix G0,
                  std::vector<Matrix> G, Vector E);

  Eigen::Index n() const noexcept { return Q_.rows(); }
  Eigen::Index m() const noexcept { return static_cast<Eigen::Index>(J_.size()); }

  const Matrix& Q() const noexcept { return Q_; }
  const Matrix& J0() const noexcept { return J0_; }
  const Matrix& J(Eigen::Index i) const { return J_.at(static_cast<std::size_t>(i)); }
  const Matrix& R() const noexcept { return R_; }
  const Matrix& G0() const noexcept { return G0_; }
  const Matrix& G(Eigen::Index i) const { return G_.at(static_cast<std::size_t>(i)); }
  const Vector& E() const noexcept { return E_; }

 private:
  Matrix Q_;
  Matrix J0_;
  std::vector<Matrix> J_;
  Matrix R_;
  Matrix G0_;
  std::vector<Matrix> G_;
  Vector E_;
};

/// Operating point bundle for one assignable equilibrium.
struct EquilibriumSpec {
  Vector x_star;
  Vector u_star;
  Vector y_star;
  Matrix g_star;  ///< n x m input matrix evaluated at x_star
  Matrix C_mat;   ///< controller output matrix (g*)^T Q, m x n
  double residual = 0.0;
};

struct BuckBoostParams {
  double V_in = 24.0;
  double L = 1000e-6;
  double C_cap = 330e-6;
  double r = 60.0;

  /// Bench values used throughout the simulation study.
  static BuckBoostParams bench() { return {}; }
};

inline constexpr double kDefaultAssignabilityTol = 1e-9;

/// f(x) = (J0 - R) Q x + G0 E
Vector eval_drift(const BilinearPHModel& model, const Vector& x);

/// n x m matrix whose column i is J_i Q x + G_i E.
Matrix eval_input_matrix(const BilinearPHModel& model, const Vector& x);

/// Least-squares equilibrium control u* = -[(g*)^T g*]^{-1} (g*)^T f*.
/// Throws RankDeficient when g(x_star) loses column rank.
Vector equilibrium_control(const BilinearPHModel& model, const Vector& x_star);

/// Builds the full operating point; throws NotAssignable when
/// ||f* + g* u*|| > tol * (1 + ||f*||).
EquilibriumSpec make_equilibrium(const BilinearPHModel& model, const Vector& x_star,
                                 double tol = kDefaultAssignabilityTol);

BilinearPHModel buck_boost_model(const BuckBoostParams& p);

/// Equilibrium regulating the output voltage to v_star (v_star >= 0).
EquilibriumSpec buck_boost_reference(const BuckBoostParams& p, double v_star);

double hamiltonian(const BilinearPHModel& model, const Vector& x);
double shifted_storage(const BilinearPHModel& model, const Vector& x, const Vector& x_star);

// Buck-boost unit conversions: state is (flux, charge).
inline double inductor_current(const BuckBoostParams& p, const Vector& x) { return x(0) / p.L; }
inline double output_voltage(const BuckBoostParams& p, const Vector& x) { return x(1) / p.C_cap; }

void require_size(const Vector& v, Eigen::Index n, const char* what);

}  // namespace dtpbc
