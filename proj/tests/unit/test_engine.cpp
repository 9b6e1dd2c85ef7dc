#include <doctest.h>

#include <cmath>

#include "dtpbc/engine.hpp"
#include "dtpbc/errors.hpp"
#include "oracle.hpp"

using namespace dtpbc;

namespace {

const BuckBoostParams kBench = BuckBoostParams::bench();
const oracle::BuckBoost kHand{};

Scenario startup(double v_star, double delta, double t_final, PIDGains gains,
                 Mode mode = Mode::DtMidpoint) {
  Scenario s;
  s.gains = std::move(gains);
  s.stepper.delta = delta;
  s.t_final = t_final;
  s.mode = mode;
  s.schedule = {{0.0, Vector::Constant(1, v_star)}};
  return s;
}

ClosedLoopState at_equilibrium(const EquilibriumSpec& eq, const PIDGains& g) {
  return {eq.x_star, integrator_equilibrium(g, eq), eq.x_star};
}

bool same(const Vector& a, const Vector& b) {
  return a.size() == b.size() && (a.array() == b.array()).all();
}

}  // namespace

TEST_CASE("closed-loop equilibrium is stationary in every mode") {
  const BilinearPHModel m = buck_boost_model(kBench);
  const EquilibriumSpec eq = buck_boost_reference(kBench, 35.0);
  const PIDGains g = PIDGains::scalar(0.1, 0.1, 6e-4);
  const ClosedLoopState s0 = at_equilibrium(eq, g);
  StepperSettings st;

  const StepResult dt = closed_loop_step_dt(m, g, eq, s0, st);
  CHECK((dt.next.x - eq.x_star).norm() <= 1e-14 * eq.x_star.norm());
  CHECK(dt.record.u(0) == doctest::Approx(eq.u_star(0)).epsilon(1e-13));
  CHECK(std::abs(dt.next.xi(0) - s0.xi(0)) <= 1e-14 * std::abs(s0.xi(0)));

  const StepResult eu = closed_loop_step_euler(m, g, eq, s0, st.delta);
  CHECK((eu.next.x - eq.x_star).norm() <= 1e-14 * eq.x_star.norm());

  const StepResult em = closed_loop_step_emulation(m, g, eq, s0, st.delta, 20);
  CHECK((em.next.x - eq.x_star).norm() <= 1e-12 * eq.x_star.norm());
}

TEST_CASE("coupled step solution satisfies both defining relations") {
  const BilinearPHModel m = buck_boost_model(kBench);
  const EquilibriumSpec eq = buck_boost_reference(kBench, 35.0);
  std::mt19937_64 rng(51);
  std::uniform_real_distribution<double> logu(std::log(1e-4), std::log(10.0));
  for (int trial = 0; trial < 200; ++trial) {
    const PIDGains g = PIDGains::scalar(std::exp(logu(rng)), std::exp(logu(rng)), std::exp(logu(rng)));
    StepperSettings st;
    st.delta = trial % 2 ? 5e-3 : 4e-2;
    const Vector x = eq.x_star + oracle::random_vector(rng, 2, 5e-3);
    const Vector xi = oracle::random_vector(rng, 1, 10.0);
    const StepResult r = closed_loop_step_dt(m, g, eq, {x, xi, std::nullopt}, st);
    REQUIRE(r.record.z.has_value());
    const Vector z = *r.record.z;
    const double u = r.record.u(0);

    // Plant relation through the hand-written field.
    const Eigen::Vector2d plant = z - x - 0.5 * st.delta * oracle::field(kHand, z, u);
    CHECK(plant.norm() <= 1e-10 * std::max(1.0, x.norm() + 0.5 * st.delta * std::abs(u) * 60.0));
    // Controller relation: the discrete PID law with dx = x+ - x.
    const double yt = (eq.C_mat * z - eq.y_star)(0);
    const double expect_u = -g.K_P(0, 0) * yt - 0.5 * g.K_I(0, 0) * (2.0 * xi(0) + st.delta * yt) -
                            g.K_D(0, 0) / st.delta * (eq.C_mat * (r.next.x - x))(0);
    CHECK(std::abs(u - expect_u) <= 1e-10 * std::max(1.0, std::abs(u)));
    CHECK(r.next.xi(0) == doctest::Approx(xi(0) + st.delta * yt).epsilon(1e-14));
  }
}

TEST_CASE("coupled step finds roots away from the local minimum that traps Newton") {
  const BilinearPHModel m = buck_boost_model(kBench);
  const EquilibriumSpec eq = buck_boost_reference(kBench, 35.0);
  struct Case {
    double kp, ki, kd, delta, x1, x2, xi;
  };
  for (const Case& c : {Case{1.26727e-4, 1.04104e-2, 3.36465e-4, 5e-3, -1.77319e-3, 5.09904e-3, 4.99494},
                        Case{1.20409e-3, 0.269178, 3.62352, 4e-2, 2.19642e-4, 1.1111e-2, 7.24116}}) {
    const PIDGains g = PIDGains::scalar(c.kp, c.ki, c.kd);
    StepperSettings st;
    st.delta = c.delta;
    const Vector x{{c.x1, c.x2}};
    const Vector xi = Vector::Constant(1, c.xi);
    const StepResult r = closed_loop_step_dt(m, g, eq, {x, xi, std::nullopt}, st);
    const Vector z = *r.record.z;
    const double u = r.record.u(0);
    const Eigen::Vector2d plant = z - x - 0.5 * c.delta * oracle::field(kHand, z, u);
    CHECK(plant.norm() <= 1e-10 * std::max(1.0, 0.5 * c.delta * std::abs(u) * 60.0));
    const double yt = (eq.C_mat * z - eq.y_star)(0);
    const double expect_u = -c.kp * yt - 0.5 * c.ki * (2.0 * c.xi + c.delta * yt) -
                            c.kd / c.delta * (eq.C_mat * (r.next.x - x))(0);
    CHECK(std::abs(u - expect_u) <= 1e-9 * std::max(1.0, std::abs(u)));
  }
}

TEST_CASE("start-up at 35 V: monotone Lyapunov function and convergence") {
  const Trajectory t = run_scenario(startup(35.0, 5e-3, 4.0, PIDGains::scalar(0.1, 0.1, 6e-4)));
  CHECK_FALSE(t.summary.diverged);
  for (const StepRecord& r : t.records) CHECK(r.dV <= 1e-9 * std::max(1.0, std::abs(r.V)));
  CHECK(t.summary.final_error <= 0.01);
  CHECK(std::abs(t.summary.final_v - 35.0) <= 0.35);
  CHECK(std::isfinite(t.summary.settling_time));
}

TEST_CASE("one-sample horizon yields one record") {
  const Trajectory t = run_scenario(startup(35.0, 5e-3, 5e-3, PIDGains::scalar(0.1, 0.1, 6e-4)));
  CHECK(t.records.size() == 1);
  CHECK(t.summary.steps == 1);
}

TEST_CASE("runs are bit-reproducible") {
  const Scenario s = startup(22.0, 2e-2, 2.0, PIDGains::scalar(0.5, 0.2, 1e-3));
  const Trajectory a = run_scenario(s);
  const Trajectory b = run_scenario(s);
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(same(a.records[i].x, b.records[i].x));
    CHECK(same(*a.records[i].z, *b.records[i].z));
    CHECK(same(a.records[i].u, b.records[i].u));
    CHECK(a.records[i].V == b.records[i].V);
  }
  CHECK(same(a.summary.final_x, b.summary.final_x));
}

TEST_CASE("reference change refreshes the equilibrium but keeps the integrator") {
  Scenario s = startup(18.0, 5e-3, 2.0, PIDGains::scalar(0.1, 0.1, 6e-4));
  s.schedule.push_back({1.0, Vector::Constant(1, 35.0)});
  const Trajectory t = run_scenario(s);
  REQUIRE(t.segments.size() == 2);
  CHECK(t.segments[1].start_step == 200);
  CHECK(t.segments[1].eq.u_star(0) == doctest::Approx(35.0 / 59.0));
  const StepRecord& before = t.records[199];
  const StepRecord& after = t.records[200];
  CHECK(before.segment == 0);
  CHECK(after.segment == 1);
  CHECK(after.xi(0) ==
        doctest::Approx(before.xi(0) + 5e-3 * (before.y - t.segments[0].eq.y_star)(0)).epsilon(1e-14));
}

TEST_CASE("coincident schedule entries: the later one wins") {
  Scenario s = startup(18.0, 5e-3, 1.0, PIDGains::scalar(0.1, 0.1, 6e-4));
  s.schedule.push_back({0.0, Vector::Constant(1, 30.0)});
  const Trajectory t = run_scenario(s);
  REQUIRE(t.segments.size() == 1);
  CHECK(t.segments[0].setpoint(0) == 30.0);
}

TEST_CASE("Euler at a coarse step blows up and is flagged, not thrown") {
  const Trajectory t = run_scenario(startup(35.0, 6e-2, 60.0, PIDGains::scalar(1e-4, 1e-4, 1e-3), Mode::DtEuler));
  CHECK(t.summary.diverged);
  CHECK(t.summary.steps < 1000);
  CHECK(std::isinf(t.summary.settling_time));
}

TEST_CASE("solver failure reports the step index") {
  Scenario s = startup(35.0, 5e-3, 1.0, PIDGains::scalar(0.1, 0.1, 6e-4));
  s.stepper.newton_tol = 1e-300;
  s.stepper.newton_max_iter = 1;
  try {
    run_scenario(s);
    FAIL("expected SolverFailure");
  } catch (const SolverFailure& e) {
    CHECK(e.step() == 0);
    CHECK(e.wall_seconds() >= 0.0);
  }
}

TEST_CASE("scenario validation") {
  Scenario s = startup(35.0, 5e-3, 1.0, PIDGains::scalar(0.1, 0.1, 6e-4));
  CHECK_NOTHROW(s.validate());
  Scenario late = s;
  late.schedule.front().t = 0.5;
  CHECK_THROWS_AS(late.validate(), InvalidArgument);
  Scenario empty = s;
  empty.schedule.clear();
  CHECK_THROWS_AS(empty.validate(), InvalidArgument);
  Scenario order = s;
  order.schedule.push_back({0.8, Vector::Constant(1, 20.0)});
  order.schedule.push_back({0.4, Vector::Constant(1, 20.0)});
  CHECK_THROWS_AS(order.validate(), InvalidArgument);
  Scenario emu = s;
  emu.mode = Mode::Emulation;
  emu.stepper.substeps = 5;
  CHECK_THROWS_AS(emu.validate(), InvalidArgument);
  Scenario neg = s;
  neg.schedule.front().setpoint(0) = -5.0;
  CHECK_THROWS_AS(run_scenario(neg), InvalidArgument);
}

TEST_CASE("mode names round-trip") {
  for (Mode m : {Mode::DtMidpoint, Mode::DtEuler, Mode::Emulation}) CHECK(parse_mode(to_string(m)) == m);
  CHECK_THROWS_AS(parse_mode("rk4"), InvalidArgument);
  for (SweepAxis a : {SweepAxis::Delta, SweepAxis::Gains, SweepAxis::Reference}) {
    CHECK(parse_sweep_axis(to_string(a)) == a);
  }
}

TEST_CASE("sweeps: ordering, isolation and equivalence with single runs") {
  const Scenario base = startup(35.0, 5e-3, 4.0, PIDGains::scalar(0.1, 0.1, 6e-4));

  const auto by_delta = sweep(base, SweepAxis::Delta, {1e-3, 5e-3, 2e-2});
  REQUIRE(by_delta.size() == 3);
  for (const auto& o : by_delta) REQUIRE(o.status == RunStatus::Ok);
  CHECK(by_delta[0].summary->settling_time <= by_delta[1].summary->settling_time);
  CHECK(by_delta[1].summary->settling_time <= by_delta[2].summary->settling_time);

  const auto by_gain = sweep(base, SweepAxis::Gains,
                             {PIDGains::scalar(0.1, 0.1, 6e-4), PIDGains::scalar(1.0, 1.0, 6e-3)});
  CHECK(by_gain[1].summary->settling_time < by_gain[0].summary->settling_time);

  const auto single = sweep(base, SweepAxis::Reference, {35.0}, 1);
  const Trajectory direct = run_scenario(base);
  CHECK(same(single[0].summary->final_x, direct.summary.final_x));

  // Explicit derivative feedback has a step-independent loop gain, so the stable case runs without it.
  Scenario euler = startup(35.0, 5e-3, 1.0, PIDGains::scalar(1e-4, 1e-4, 0.0));
  euler.mode = Mode::DtEuler;
  const auto mixed = sweep(euler, SweepAxis::Delta, {1e-5, 6e-2, -1.0});
  CHECK(mixed[0].status == RunStatus::Ok);
  CHECK(mixed[1].status == RunStatus::Diverged);
  CHECK(mixed[2].status == RunStatus::Invalid);
  CHECK_FALSE(mixed[2].error.empty());

  CHECK_THROWS_AS(sweep(base, SweepAxis::Delta, {}), InvalidArgument);
}

TEST_CASE("clamped input stays in the unit interval") {
  Scenario s = startup(35.0, 5e-3, 1.0, PIDGains::scalar(1.0, 1.0, 6e-3));
  s.clamp_input = true;
  const Trajectory t = run_scenario(s);
  for (const StepRecord& r : t.records) {
    CHECK(r.u(0) >= 0.0);
    CHECK(r.u(0) <= 1.0);
  }
}

TEST_CASE("emulation start at an equilibrium holds it") {
  const EquilibriumSpec eq = buck_boost_reference(kBench, 15.0);
  Scenario s = startup(15.0, 5e-5, 0.05, PIDGains::scalar(1e-3, 1e-5, 1e-6), Mode::Emulation);
  s.stepper.substeps = 10;
  s.x0 = eq.x_star;
  s.xi0 = integrator_equilibrium(s.gains, eq);
  const Trajectory t = run_scenario(s);
  CHECK_FALSE(t.summary.diverged);
  CHECK(std::abs(t.summary.final_v - 15.0) <= 1e-9 * 15.0);
}
