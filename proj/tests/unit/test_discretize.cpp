#include <doctest.h>

#include <cmath>

#include "dtpbc/discretize.hpp"
#include "dtpbc/errors.hpp"
#include "dtpbc/verify.hpp"
#include "oracle.hpp"

using namespace dtpbc;

namespace {

const BuckBoostParams kBench = BuckBoostParams::bench();
const oracle::BuckBoost kHand{};

Vector scalar(double v) { return Vector::Constant(1, v); }

}  // namespace

TEST_CASE("N and M at zero duty ratio") {
  const BilinearPHModel m = buck_boost_model(kBench);
  const NMPair nm = build_NM(m, scalar(0.0));
  Matrix expect(2, 2);
  expect << 0.0, -1.0, 1.0, -1.0 / 60.0;
  CHECK((nm.N - expect).norm() <= 1e-15);
  CHECK(nm.M.norm() == 0.0);

  const double u = 35.0 / 59.0;
  const NMPair at = build_NM(m, scalar(u));
  CHECK(at.N(0, 1) == doctest::Approx(-(1.0 - u)));
  CHECK(at.N(1, 0) == doctest::Approx(1.0 - u));
  CHECK(at.N(1, 1) == doctest::Approx(-1.0 / 60.0));
}

TEST_CASE("symmetric part of N is minus the dissipation for every input") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const auto rm = oracle::random_model(rng, 4, 3);
    const BilinearPHModel m = rm.build();
    const NMPair nm = build_NM(m, oracle::random_vector(rng, 3, 5.0));
    CHECK((nm.N + nm.N.transpose() + 2.0 * m.R()).norm() <= 1e-12 * (1.0 + m.R().norm()));
  }
}

TEST_CASE("assignable equilibria are fixed points of every one-step map") {
  const BilinearPHModel m = buck_boost_model(kBench);
  for (double v : {5.0, 18.0, 35.0}) {
    const EquilibriumSpec eq = buck_boost_reference(kBench, v);
    for (double delta : {1e-4, 5e-3, 6e-2}) {
      const Vector xm = midpoint_step_explicit(m, eq.x_star, eq.u_star, delta);
      CHECK((xm - eq.x_star).norm() <= 1e-14 * eq.x_star.norm());
      // Rounding of the explicit update scales with the size of the field terms.
      const Vector xe = euler_step(m, eq.x_star, eq.u_star, delta);
      CHECK((xe - eq.x_star).norm() <= 1e-14 * (eq.x_star.norm() + delta * (24.0 + v)));
      StepperSettings s;
      const MidpointSolution sol = midpoint_step_newton(m, eq.x_star, eq.u_star, delta, s);
      CHECK(sol.iterations <= 1);
      CHECK((sol.z - eq.x_star).norm() <= 1e-14 * eq.x_star.norm());
    }
  }
}

TEST_CASE("explicit step agrees with Newton and with plain fixed-point iteration") {
  const BilinearPHModel m = buck_boost_model(kBench);
  const Vector x0 = Vector::Zero(2);
  const double delta = 5e-3;
  const Vector xe = midpoint_step_explicit(m, x0, scalar(0.5), delta);
  StepperSettings s;
  s.delta = delta;
  const MidpointSolution sol = midpoint_step_newton(m, x0, scalar(0.5), delta, s);
  CHECK((xe - sol.x_next).norm() <= 1e-10 * xe.norm());
  CHECK((sol.z - 0.5 * (x0 + sol.x_next)).norm() <= 1e-15);

  // Contraction needs a small step for the fixed-point oracle.
  const double small = 1e-4;
  const Eigen::Vector2d x{2e-4, 3e-3};
  const Vector fp = oracle::midpoint_fixed_point(kHand, x, 0.3, small);
  const Vector ex = midpoint_step_explicit(m, x, scalar(0.3), small);
  CHECK((fp - ex).norm() <= 1e-12 * ex.norm());
}

TEST_CASE("step matrix determinant follows the closed-form expansion") {
  const BilinearPHModel m = buck_boost_model(kBench);
  const double L = kBench.L, C = kBench.C_cap, r = kBench.r;
  for (double u : {-3.0, 0.0, 0.4, 1.0, 7.5}) {
    for (double delta : {1e-4, 5e-3, 1e-1}) {
      const NMPair nm = build_NM(m, scalar(u));
      const Matrix A = Matrix::Identity(2, 2) - 0.5 * delta * nm.N * m.Q();
      const double expect = 1.0 + delta / (2.0 * r * C) +
                            0.25 * delta * delta * (1.0 - u) * (1.0 - u) / (L * C);
      CHECK(A.determinant() == doctest::Approx(expect).epsilon(1e-12));
      CHECK(expect > 0.0);
    }
  }
}

TEST_CASE("pathological step sizes surface solver errors") {
  const BilinearPHModel m = buck_boost_model(kBench);
  StepperSettings s;
  CHECK_THROWS_AS(midpoint_step_newton(m, Vector::Zero(2), scalar(0.5), 1e308, s), SingularJacobian);
  CHECK_THROWS_AS(midpoint_step_explicit(m, Vector::Zero(2), scalar(0.5), 1e308), SingularStepMatrix);
  CHECK_THROWS_AS(midpoint_step_explicit(m, Vector::Zero(2), scalar(0.5), -1.0), InvalidArgument);
  CHECK_THROWS_AS(midpoint_step_explicit(m, Vector::Zero(3), scalar(0.5), 1e-3), DimensionError);

  StepperSettings strict;
  strict.newton_max_iter = 1;
  strict.newton_tol = 1e-300;
  const auto rm = [] {
    std::mt19937_64 rng(5);
    return oracle::random_model(rng, 3, 2);
  }();
  CHECK_THROWS_AS(midpoint_step_newton(rm.build(), Vector::Ones(3), Vector::Ones(2), 1e-2, strict),
                  NoConvergence);
}

TEST_CASE("one-step difference between Euler and midpoint is second order in the step") {
  const BilinearPHModel m = buck_boost_model(kBench);
  const Vector x{{1e-3, 5e-3}};
  const Vector u = scalar(0.4);
  double prev = 0.0;
  for (double delta : {4e-5, 2e-5, 1e-5, 5e-6}) {
    const double d = (euler_step(m, x, u, delta) - midpoint_step_explicit(m, x, u, delta)).norm();
    if (prev > 0.0) CHECK(prev / d == doctest::Approx(4.0).epsilon(0.05));
    prev = d;
  }
}

TEST_CASE("held-input RK4 matches the hand-coded integrator") {
  const BilinearPHModel m = buck_boost_model(kBench);
  const Eigen::Vector2d x{1e-3, 2e-3};
  const Vector got = rk4_hold(m, x, scalar(0.45), 5e-3, 50);
  const Eigen::Vector2d expect = oracle::rk4(kHand, x, 0.45, 5e-3, 50);
  CHECK((got - expect).norm() <= 1e-13 * expect.norm());
}

TEST_CASE("reference trajectory: equilibrium, Richardson refinement, passive decay") {
  const BilinearPHModel m = buck_boost_model(kBench);
  const EquilibriumSpec eq = buck_boost_reference(kBench, 18.0);
  const std::vector<Vector> hold(20, eq.u_star);
  for (const Vector& x : reference_trajectory(m, eq.x_star, hold, 5e-3, 20)) {
    CHECK((x - eq.x_star).norm() <= 1e-13 * eq.x_star.norm());
  }

  const Vector x0{{1e-3, 0.0}};
  const std::vector<Vector> u(10, scalar(0.3));
  const double delta = 1e-3;
  const Vector a = reference_trajectory(m, x0, u, delta, 4).back();
  const Vector b = reference_trajectory(m, x0, u, delta, 8).back();
  const Vector c = reference_trajectory(m, x0, u, delta, 16).back();
  CHECK((a - b).norm() / (b - c).norm() == doctest::Approx(16.0).epsilon(0.1));

  const std::vector<Vector> off(200, scalar(0.0));
  const auto free = reference_trajectory(m, x0, off, 1e-4, 10);
  REQUIRE(free.size() == 201);
  for (std::size_t k = 1; k < free.size(); ++k) {
    CHECK(hamiltonian(m, free[k]) <= hamiltonian(m, free[k - 1]) * (1.0 + 1e-14));
  }
}

TEST_CASE("unforced shifted dissipation holds exactly along midpoint steps") {
  const BilinearPHModel m = buck_boost_model(kBench);
  const EquilibriumSpec eq = buck_boost_reference(kBench, 35.0);
  const Matrix QRQ = m.Q() * m.R() * m.Q();
  const double delta = 2e-2;
  Vector x = Vector::Zero(2);
  for (int k = 0; k < 200; ++k) {
    const Vector xn = midpoint_step_explicit(m, x, eq.u_star, delta);
    const Vector zt = 0.5 * (x + xn) - eq.x_star;
    const double lhs = (shifted_storage(m, xn, eq.x_star) - shifted_storage(m, x, eq.x_star)) / delta;
    const double rhs = -zt.dot(QRQ * zt);
    CHECK(std::abs(lhs - rhs) <= 1e-9 * std::max({1.0, std::abs(lhs), std::abs(rhs)}));
    CHECK(lhs <= 1e-12);
    x = xn;
  }
}

TEST_CASE("global error ratio under step halving is close to four") {
  const BilinearPHModel m = buck_boost_model(kBench);
  auto u = [](double t) { return scalar(0.5 + 0.1 * std::sin(2.0 * M_PI * 20.0 * t)); };
  const OrderResult r =
      order_check(m, Vector::Zero(2), u, {4e-5, 2e-5, 1e-5}, 0.5, OrderMethod::Midpoint, 10);
  REQUIRE_FALSE(r.degenerate);
  for (std::size_t i = 0; i + 1 < r.errors.size(); ++i) {
    const double ratio = r.errors[i] / r.errors[i + 1];
    CHECK(ratio >= 3.5);
    CHECK(ratio <= 4.5);
  }
}

TEST_CASE("settings validation") {
  StepperSettings s;
  CHECK_NOTHROW(s.validate());
  s.delta = 0.0;
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  s = {};
  s.newton_max_iter = 0;
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  s = {};
  s.substeps = 0;
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
}
