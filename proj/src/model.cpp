#include "dtpbc/model.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "dtpbc/errors.hpp"

namespace dtpbc {

namespace {

constexpr double kStructureTol = 1e-12;

double scale_of(const Matrix& A) { return std::max(1.0, A.cwiseAbs().maxCoeff()); }

void require_square(const Matrix& A, Eigen::Index n, const std::string& what) {
  if (A.rows() != n || A.cols() != n) {
    throw DimensionError(what + " must be " + std::to_string(n) + "x" + std::to_string(n));
  }
  if (!A.allFinite()) throw InvalidArgument(what + " has non-finite entries");
}

void require_skew(const Matrix& A, const std::string& what) {
  if ((A + A.transpose()).cwiseAbs().maxCoeff() > kStructureTol * scale_of(A)) {
    throw InvalidArgument(what + " must be skew-symmetric");
  }
}

void require_symmetric(const Matrix& A, const std::string& what) {
  if ((A - A.transpose()).cwiseAbs().maxCoeff() > kStructureTol * scale_of(A)) {
    throw InvalidArgument(what + " must be symmetric");
  }
}

}  // namespace

void require_size(const Vector& v, Eigen::Index n, const char* what) {
  if (v.size() != n) {
    throw DimensionError(std::string(what) + " has length " + std::to_string(v.size()) +
                         ", expected " + std::to_string(n));
  }
}

BilinearPHModel::BilinearPHModel(Matrix Q, Matrix J0, std::vector<Matrix> J, Matrix R, Matrix G0,
                                 std::vector<Matrix> G, Vector E)
    : Q_(std::move(Q)),
      J0_(std::move(J0)),
      J_(std::move(J)),
      R_(std::move(R)),
      G0_(std::move(G0)),
      G_(std::move(G)),
      E_(std::move(E)) {
  const Eigen::Index n = Q_.rows();
  if (n == 0) throw DimensionError("state dimension must be positive");
  if (J_.empty()) throw DimensionError("at least one switch input is required");
  if (J_.size() != G_.size()) throw DimensionError("J and G must have one matrix per input");

  require_square(Q_, n, "Q");
  require_square(J0_, n, "J0");
  require_square(R_, n, "R");
  require_square(G0_, n, "G0");
  for (std::size_t i = 0; i < J_.size(); ++i) {
    require_square(J_[i], n, "J" + std::to_string(i + 1));
    require_square(G_[i], n, "G" + std::to_string(i + 1));
    require_skew(J_[i], "J" + std::to_string(i + 1));
  }
  require_size(E_, n, "E");
  if (!E_.allFinite()) throw InvalidArgument("E has non-finite entries");

  require_symmetric(Q_, "Q");
  require_symmetric(R_, "R");
  require_skew(J0_, "J0");

  Eigen::SelfAdjointEigenSolver<Matrix> q_eig(Q_, Eigen::EigenvaluesOnly);
  if (q_eig.eigenvalues().minCoeff() <= 0.0) throw InvalidArgument("Q must be positive definite");
  Eigen::SelfAdjointEigenSolver<Matrix> r_eig(R_, Eigen::EigenvaluesOnly);
  if (r_eig.eigenvalues().minCoeff() < -kStructureTol * scale_of(R_)) {
    throw InvalidArgument("R must be positive semidefinite");
  }
}

Vector eval_drift(const BilinearPHModel& model, const Vector& x) {
  require_size(x, model.n(), "x");
  return (model.J0() - model.R()) * (model.Q() * x) + model.G0() * model.E();
}

Matrix eval_input_matrix(const BilinearPHModel& model, const Vector& x) {
  require_size(x, model.n(), "x");
  const Vector Qx = model.Q() * x;
  Matrix g(model.n(), model.m());
  for (Eigen::Index i = 0; i < model.m(); ++i) {
    g.col(i) = model.J(i) * Qx + model.G(i) * model.E();
  }
  return g;
}

Vector equilibrium_control(const BilinearPHModel& model, const Vector& x_star) {
  const Matrix g = eval_input_matrix(model, x_star);
  const Vector f = eval_drift(model, x_star);
  const Matrix normal = g.transpose() * g;
  // Column-pivoting QR on g itself gives a rank decision that does not square
  // the condition number.
  Eigen::ColPivHouseholderQR<Matrix> qr(g);
  qr.setThreshold(1e-12);
  if (qr.rank() < model.m()) {
    throw RankDeficient("g(x*) does not have full column rank; equilibrium control undefined");
  }
  return -normal.ldlt().solve(g.transpose() * f);
}

EquilibriumSpec make_equilibrium(const BilinearPHModel& model, const Vector& x_star, double tol) {
  require_size(x_star, model.n(), "x_star");
  if (!x_star.allFinite()) throw InvalidArgument("x_star has non-finite entries");
  if (!(tol > 0.0)) throw InvalidArgument("assignability tolerance must be positive");

  EquilibriumSpec eq;
  eq.x_star = x_star;
  eq.g_star = eval_input_matrix(model, x_star);
  const Vector f_star = eval_drift(model, x_star);
  eq.u_star = equilibrium_control(model, x_star);
  eq.residual = (f_star + eq.g_star * eq.u_star).norm();

  const double threshold = tol * (1.0 + f_star.norm());
  if (eq.residual > threshold) throw NotAssignable(eq.residual, threshold);

  eq.C_mat = eq.g_star.transpose() * model.Q();
  eq.y_star = eq.C_mat * x_star;
  return eq;
}

BilinearPHModel buck_boost_model(const BuckBoostParams& p) {
  for (double v : {p.V_in, p.L, p.C_cap, p.r}) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw InvalidArgument("buck-boost parameters must be finite and strictly positive");
    }
  }
  Matrix J0(2, 2);
  J0 << 0.0, -1.0, 1.0, 0.0;
  Matrix R = Matrix::Zero(2, 2);
  R(1, 1) = 1.0 / p.r;
  Matrix G1 = Matrix::Zero(2, 2);
  G1(0, 0) = 1.0;
  Vector E(2);
  E << p.V_in, 0.0;
  Matrix Q = Matrix::Zero(2, 2);
  Q(0, 0) = 1.0 / p.L;
  Q(1, 1) = 1.0 / p.C_cap;
  return BilinearPHModel(Q, J0, {Matrix(-J0)}, R, Matrix::Zero(2, 2), {G1}, E);
}

EquilibriumSpec buck_boost_reference(const BuckBoostParams& p, double v_star) {
  if (!(v_star >= 0.0) || !std::isfinite(v_star)) {
    throw InvalidArgument("buck-boost reference voltage must be finite and >= 0");
  }
  const BilinearPHModel model = buck_boost_model(p);
  const double x2 = p.C_cap * v_star;
  const double x1 = p.L * x2 * (x2 + p.V_in * p.C_cap) / (p.r * p.C_cap * p.C_cap * p.V_in);
  Vector x_star(2);
  x_star << x1, x2;
  return make_equilibrium(model, x_star, 1e-12);
}

double hamiltonian(const BilinearPHModel& model, const Vector& x) {
  require_size(x, model.n(), "x");
  return 0.5 * x.dot(model.Q() * x);
}

double shifted_storage(const BilinearPHModel& model, const Vector& x, const Vector& x_star) {
  require_size(x_star, model.n(), "x_star");
  return hamiltonian(model, x - x_star);
}

}  // namespace dtpbc
