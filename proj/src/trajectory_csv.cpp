#include "dtpbc/trajectory_csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include "dtpbc/config.hpp"
#include "dtpbc/errors.hpp"

namespace dtpbc {

namespace {

const BuckBoostParams& require_buck_boost(const Scenario& scenario) {
  const auto* bb = std::get_if<BuckBoostParams>(&scenario.plant);
  if (bb == nullptr) throw InvalidArgument("trajectory CSV supports buck-boost scenarios only");
  return *bb;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> parts;
  std::string item;
  std::istringstream ss(line);
  while (std::getline(ss, item, sep)) parts.push_back(item);
  if (!line.empty() && line.back() == sep) parts.emplace_back();
  return parts;
}

/// "key=value" tokens separated by spaces, after a leading marker.
std::map<std::string, std::string> parse_fields(const std::string& text) {
  std::map<std::string, std::string> fields;
  std::istringstream ss(text);
  std::string token;
  while (ss >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) continue;
    fields[token.substr(0, eq)] = token.substr(eq + 1);
  }
  return fields;
}

template <typename Int>
Int parse_integer(const std::string& text, const std::string& what) {
  Int out{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(what, "expected an integer, got '" + text + "'");
  }
  return out;
}

}  // namespace

CsvTrajectory to_csv(const Trajectory& traj, const Scenario& scenario) {
  const BuckBoostParams& p = require_buck_boost(scenario);
  CsvTrajectory csv;
  csv.scenario_hash = scenario_hash_hex(scenario);
  csv.mode = traj.mode;
  csv.delta = traj.delta;
  csv.record_every = traj.record_every;
  csv.rows.reserve(traj.records.size());
  for (const StepRecord& rec : traj.records) {
    CsvRow row;
    row.k = rec.k;
    row.t = rec.t;
    row.x1 = rec.x(0);
    row.x2 = rec.x(1);
    row.i = inductor_current(p, rec.x);
    row.v = output_voltage(p, rec.x);
    row.u = rec.u(0);
    row.y = rec.y(0);
    row.H = rec.H;
    row.Hc = rec.Hc;
    row.V = rec.V;
    row.dV = rec.dV;
    row.newton_iters = rec.newton_iters;
    csv.rows.push_back(row);
  }
  const RunSummary& s = traj.summary;
  csv.summary = {
      {"steps", static_cast<double>(s.steps)},
      {"diverged", s.diverged ? 1.0 : 0.0},
      {"final_x1", s.final_x(0)},
      {"final_x2", s.final_x(1)},
      {"final_xi", s.final_xi(0)},
      {"final_v", s.final_v},
      {"final_error", s.final_error},
      {"settling_time", s.settling_time},
      {"peak_error", s.peak_error},
      {"max_abs_u", s.max_abs_u},
      {"min_dV", s.min_dV},
      {"max_dV", s.max_dV},
      {"z_converged_at", s.z_converged_at},
      {"x_converged_at", s.x_converged_at},
  };
  return csv;
}

void write_trajectory_csv(std::ostream& out, const Trajectory& traj, const Scenario& scenario) {
  const CsvTrajectory csv = to_csv(traj, scenario);
  out << "# schema=" << csv.schema << " scenario=" << csv.scenario_hash
      << " mode=" << to_string(csv.mode) << " delta=" << format_double(csv.delta)
      << " record_every=" << csv.record_every << '\n';
  out << kCsvColumns << '\n';
  for (const CsvRow& r : csv.rows) {
    out << r.k << ',' << format_double(r.t) << ',' << format_double(r.x1) << ','
        << format_double(r.x2) << ',' << format_double(r.i) << ',' << format_double(r.v) << ','
        << format_double(r.u) << ',' << format_double(r.y) << ',' << format_double(r.H) << ','
        << format_double(r.Hc) << ',' << format_double(r.V) << ',' << format_double(r.dV) << ','
        << r.newton_iters << '\n';
  }
  out << "# summary";
  for (const auto& [key, value] : csv.summary) out << ' ' << key << '=' << format_double(value);
  out << '\n';
}

void write_file_atomically(const std::filesystem::path& path, const std::string& contents) {
  std::random_device rd;
  std::filesystem::path tmp = path;
  tmp += ".tmp" + std::to_string(rd());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << contents;
    out.flush();
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error("cannot rename onto " + path.string() + ": " + ec.message());
  }
}

void save_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj,
                         const Scenario& scenario) {
  std::ostringstream ss;
  write_trajectory_csv(ss, traj, scenario);
  write_file_atomically(path, ss.str());
}

CsvTrajectory read_trajectory_csv(std::istream& in) {
  CsvTrajectory csv;
  std::string line;
  if (!std::getline(in, line) || line.rfind("# schema=", 0) != 0) {
    throw ConfigError("csv", "missing '# schema=' header line");
  }
  auto meta = parse_fields(line.substr(1));
  csv.schema = parse_integer<int>(meta["schema"], "csv.schema");
  if (csv.schema != kCsvSchemaVersion) {
    throw ConfigError("csv.schema", "unsupported schema version " + std::to_string(csv.schema));
  }
  csv.scenario_hash = meta["scenario"];
  if (csv.scenario_hash.empty()) throw ConfigError("csv.scenario", "missing scenario hash");
  try {
    csv.mode = parse_mode(meta["mode"]);
  } catch (const InvalidArgument& e) {
    throw ConfigError("csv.mode", e.what());
  }
  csv.delta = parse_double(meta["delta"], "csv.delta");
  csv.record_every = parse_integer<int>(meta["record_every"], "csv.record_every");

  if (!std::getline(in, line) || line != kCsvColumns) {
    throw ConfigError("csv", std::string("expected column row '") + kCsvColumns + "'");
  }
  std::size_t line_no = 2;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line.front() == '#') {
      if (line.rfind("# summary", 0) == 0) {
        for (const auto& [key, value] : parse_fields(line.substr(9))) {
          csv.summary[key] = parse_double(value, "csv.summary." + key);
        }
      }
      continue;
    }
    const auto cells = split(line, ',');
    if (cells.size() != 13) {
      throw ConfigError("csv", "line " + std::to_string(line_no) + ": expected 13 columns, got " +
                                   std::to_string(cells.size()));
    }
    CsvRow r;
    const std::string where = "csv line " + std::to_string(line_no);
    r.k = parse_integer<std::size_t>(cells[0], where);
    r.t = parse_double(cells[1], where);
    r.x1 = parse_double(cells[2], where);
    r.x2 = parse_double(cells[3], where);
    r.i = parse_double(cells[4], where);
    r.v = parse_double(cells[5], where);
    r.u = parse_double(cells[6], where);
    r.y = parse_double(cells[7], where);
    r.H = parse_double(cells[8], where);
    r.Hc = parse_double(cells[9], where);
    r.V = parse_double(cells[10], where);
    r.dV = parse_double(cells[11], where);
    r.newton_iters = parse_integer<int>(cells[12], where);
    csv.rows.push_back(r);
  }
  return csv;
}

CsvTrajectory load_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot read trajectory file " + path.string());
  return read_trajectory_csv(in);
}

Trajectory rebuild_trajectory(const CsvTrajectory& csv, const Scenario& scenario) {
  require_buck_boost(scenario);
  auto summary_value = [&csv](const char* key) {
    const auto it = csv.summary.find(key);
    if (it == csv.summary.end()) throw ConfigError(std::string("csv.summary.") + key, "missing");
    return it->second;
  };

  Trajectory traj;
  traj.mode = csv.mode;
  traj.delta = csv.delta;
  traj.record_every = csv.record_every;
  traj.segments = build_segments(scenario);

  RunSummary& s = traj.summary;
  s.steps = static_cast<std::size_t>(summary_value("steps"));
  s.diverged = summary_value("diverged") != 0.0;
  s.final_x = Vector{{summary_value("final_x1"), summary_value("final_x2")}};
  s.final_v = summary_value("final_v");
  s.final_error = summary_value("final_error");
  s.settling_time = summary_value("settling_time");
  s.peak_error = summary_value("peak_error");
  s.max_abs_u = summary_value("max_abs_u");
  s.min_dV = summary_value("min_dV");
  s.max_dV = summary_value("max_dV");
  s.z_converged_at = summary_value("z_converged_at");
  s.x_converged_at = summary_value("x_converged_at");

  Vector xi = scenario.xi0.size() == 0 ? Vector::Zero(1) : scenario.xi0;
  std::size_t seg = 0;
  traj.records.reserve(csv.rows.size());
  for (const CsvRow& r : csv.rows) {
    while (seg + 1 < traj.segments.size() && traj.segments[seg + 1].start_step <= r.k) ++seg;
    StepRecord rec;
    rec.k = r.k;
    rec.t = r.t;
    rec.x = Vector{{r.x1, r.x2}};
    rec.u = Vector::Constant(1, r.u);
    rec.y = Vector::Constant(1, r.y);
    rec.xi = xi;
    rec.H = r.H;
    rec.Hc = r.Hc;
    rec.V = r.V;
    rec.dV = r.dV;
    rec.newton_iters = r.newton_iters;
    rec.segment = seg;
    if (csv.record_every == 1) {
      xi = xi + csv.delta * (rec.y - traj.segments[seg].eq.y_star);
    }
    traj.records.push_back(std::move(rec));
  }
  s.final_xi = csv.record_every == 1 ? xi : Vector::Constant(1, summary_value("final_xi"));

  if (csv.mode == Mode::DtMidpoint && csv.record_every == 1) {
    for (std::size_t i = 0; i < traj.records.size(); ++i) {
      const Vector& next = i + 1 < traj.records.size() ? traj.records[i + 1].x : s.final_x;
      traj.records[i].z = 0.5 * (traj.records[i].x + next);
    }
  }
  return traj;
}

}  // namespace dtpbc
