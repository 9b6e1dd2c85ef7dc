#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <random>
#include <sstream>

#include "dtpbc/config.hpp"
#include "dtpbc/errors.hpp"
#include "dtpbc/trajectory_csv.hpp"
#include "dtpbc/verify.hpp"

using namespace dtpbc;

namespace {

const char* kValid = R"(# comment line
[model]
type = buck_boost
V_in = 24      # V
L = 1e-3
C = 330e-6
r = 60

[gains]
K_P = 0.1
K_I = 0.1
K_D = 6e-4

[simulation]
delta = 5e-3
t_final = 2
mode = dt-midpoint
x0 = 0, 0
xi0 = 0

[schedule]
times = 0, 1
v_star = 18, 35
)";

std::string replace(std::string text, const std::string& from, const std::string& to) {
  const auto pos = text.find(from);
  REQUIRE(pos != std::string::npos);
  return text.replace(pos, from.size(), to);
}

std::string config_key_error(const std::string& text) {
  try {
    scenario_from_config(parse_config_text(text));
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "<no error>";
}

bool bit_equal(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

}  // namespace

TEST_CASE("valid config maps onto the scenario") {
  const Scenario s = scenario_from_config(parse_config_text(kValid));
  const auto& p = std::get<BuckBoostParams>(s.plant);
  CHECK(p.V_in == 24.0);
  CHECK(p.C_cap == 330e-6);
  CHECK(s.gains.K_D(0, 0) == 6e-4);
  CHECK(s.delta() == 5e-3);
  CHECK(s.mode == Mode::DtMidpoint);
  REQUIRE(s.schedule.size() == 2);
  CHECK(s.schedule[1].t == 1.0);
  CHECK(s.schedule[1].setpoint(0) == 35.0);
  CHECK(s.stepper.newton_max_iter == 50);
  CHECK_FALSE(s.clamp_input);
}

TEST_CASE("config errors name the offending key") {
  CHECK(config_key_error(replace(kValid, "xi0 = 0", "xi0 = 0\nspeed = 3")) == "simulation.speed");
  CHECK(config_key_error(replace(kValid, "K_D = 6e-4", "")) == "gains.K_D");
  CHECK(config_key_error(replace(kValid, "delta = 5e-3", "delta = fast")) == "simulation.delta");
  CHECK(config_key_error(replace(kValid, "[gains]", "[tuning]")) == "tuning");
  CHECK(config_key_error(replace(kValid, "r = 60", "r = 60\nr = 61")) == "model.r");
  CHECK(config_key_error(replace(kValid, "v_star = 18, 35", "v_star = 18")) == "schedule.v_star");
  CHECK(config_key_error(replace(kValid, "mode = dt-midpoint", "mode = trapezoid")) == "simulation.mode");
  CHECK(config_key_error(replace(kValid, "x0 = 0, 0", "x0 = 0")) == "simulation.x0");
  CHECK(config_key_error(replace(kValid, "K_P = 0.1", "K_P = -0.1")) == "gains.K_P");
  CHECK(config_key_error(replace(kValid, "type = buck_boost", "type = flyback")) == "model.type");
  CHECK_THROWS_AS(load_config("/nonexistent/config.cfg"), ConfigError);
}

TEST_CASE("every bundled config loads") {
  int count = 0;
  for (const auto& entry : std::filesystem::directory_iterator(DTPBC_CONFIG_DIR)) {
    if (entry.path().extension() != ".cfg") continue;
    INFO(entry.path().string());
    CHECK_NOTHROW(scenario_from_config(load_config(entry.path())));
    ++count;
  }
  CHECK(count == 8);
}

TEST_CASE("scenario hash tracks every run-relevant field") {
  const Scenario a = scenario_from_config(parse_config_text(kValid));
  const Scenario b = scenario_from_config(parse_config_text(kValid));
  CHECK(scenario_hash(a) == scenario_hash(b));
  CHECK(scenario_hash_hex(a).size() == 16);

  Scenario c = a;
  c.gains.K_I(0, 0) = std::nextafter(0.1, 1.0);
  CHECK(scenario_hash(c) != scenario_hash(a));
  Scenario d = a;
  d.mode = Mode::DtEuler;
  CHECK(scenario_hash(d) != scenario_hash(a));
  Scenario e = a;
  e.schedule[1].setpoint(0) = 34.0;
  CHECK(scenario_hash(e) != scenario_hash(a));
}

TEST_CASE("number formatting round-trips bit-exactly") {
  std::mt19937_64 rng(71);
  std::uniform_int_distribution<std::uint64_t> bits;
  for (int trial = 0; trial < 20000; ++trial) {
    std::uint64_t raw = bits(rng);
    double v;
    std::memcpy(&v, &raw, sizeof v);
    if (std::isnan(v)) continue;
    CHECK(bit_equal(parse_double(format_double(v)), v));
  }
  for (double v : {0.0, -0.0, 1.0, 5e-324, std::numeric_limits<double>::max(), HUGE_VAL, -HUGE_VAL}) {
    CHECK(bit_equal(parse_double(format_double(v)), v));
  }
  CHECK(std::isnan(parse_double(format_double(std::nan("")))));
  CHECK_THROWS_AS(parse_double("1.5x"), ConfigError);
  CHECK_THROWS_AS(parse_double(""), ConfigError);
}

TEST_CASE("trajectory CSV round-trips every field") {
  const Scenario s = scenario_from_config(parse_config_text(kValid));
  const Trajectory t = run_scenario(s);
  std::stringstream ss;
  write_trajectory_csv(ss, t, s);
  const CsvTrajectory parsed = read_trajectory_csv(ss);
  const CsvTrajectory direct = to_csv(t, s);

  CHECK(parsed.scenario_hash == scenario_hash_hex(s));
  CHECK(parsed.mode == Mode::DtMidpoint);
  CHECK(bit_equal(parsed.delta, s.delta()));
  REQUIRE(parsed.rows.size() == direct.rows.size());
  for (std::size_t i = 0; i < parsed.rows.size(); ++i) {
    const CsvRow& a = parsed.rows[i];
    const CsvRow& b = direct.rows[i];
    CHECK(a.k == b.k);
    CHECK(a.newton_iters == b.newton_iters);
    for (auto field : {&CsvRow::t, &CsvRow::x1, &CsvRow::x2, &CsvRow::i, &CsvRow::v, &CsvRow::u,
                       &CsvRow::y, &CsvRow::H, &CsvRow::Hc, &CsvRow::V, &CsvRow::dV}) {
      CHECK(bit_equal(a.*field, b.*field));
    }
  }
  REQUIRE(parsed.summary.size() == direct.summary.size());
  for (const auto& [key, value] : direct.summary) {
    INFO(key);
    const double got = parsed.summary.at(key);
    CHECK((bit_equal(got, value) || (std::isnan(got) && std::isnan(value))));
  }

  std::stringstream header;
  write_trajectory_csv(header, t, s);
  std::string first, second;
  std::getline(header, first);
  std::getline(header, second);
  CHECK(first.rfind("# schema=1 scenario=" + scenario_hash_hex(s), 0) == 0);
  CHECK(second == "k,t,x1,x2,i,v,u,y,H,Hc,V,dV,newton_iters");
}

TEST_CASE("rebuilt trajectory reproduces midpoints and integrator states") {
  const Scenario s = scenario_from_config(parse_config_text(kValid));
  const Trajectory t = run_scenario(s);
  std::stringstream ss;
  write_trajectory_csv(ss, t, s);
  const Trajectory r = rebuild_trajectory(read_trajectory_csv(ss), s);
  REQUIRE(r.records.size() == t.records.size());
  for (std::size_t i = 0; i < r.records.size(); ++i) {
    CHECK((*r.records[i].z - *t.records[i].z).norm() <= 1e-15 * t.records[i].z->norm() + 1e-300);
    CHECK(std::abs(r.records[i].xi(0) - t.records[i].xi(0)) <= 1e-13 * std::max(1.0, std::abs(t.records[i].xi(0))));
    CHECK(r.records[i].segment == t.records[i].segment);
  }
  const BilinearPHModel m = plant_model(s.plant);
  CHECK(check_plant_passivity(r, m).passed);
  CHECK(check_controller_passivity(r, s.gains).passed);
  CHECK(check_lyapunov(r, m, s.gains).passed);
}

TEST_CASE("malformed CSV input is rejected") {
  std::stringstream none("k,t\n");
  CHECK_THROWS_AS(read_trajectory_csv(none), ConfigError);
  std::stringstream cols("# schema=1 scenario=00 mode=dt-midpoint delta=1e-3 record_every=1\nk,t\n");
  CHECK_THROWS_AS(read_trajectory_csv(cols), ConfigError);
  std::stringstream schema("# schema=9 scenario=00 mode=dt-midpoint delta=1e-3 record_every=1\n");
  CHECK_THROWS_AS(read_trajectory_csv(schema), ConfigError);
  std::stringstream row(
      "# schema=1 scenario=00 mode=dt-midpoint delta=1e-3 record_every=1\n"
      "k,t,x1,x2,i,v,u,y,H,Hc,V,dV,newton_iters\n0,0,0,0\n");
  CHECK_THROWS_AS(read_trajectory_csv(row), ConfigError);
}

TEST_CASE("atomic write leaves no temporary behind") {
  const auto dir = std::filesystem::temp_directory_path() / "dtpbc_atomic_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "out.txt";
  write_file_atomically(path, "first\n");
  write_file_atomically(path, "second\n");
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir)) ++files;
  CHECK(files == 1);
  std::filesystem::remove_all(dir);
}
