#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "dtpbc/engine.hpp"

namespace dtpbc {

inline constexpr int kCsvSchemaVersion = 1;
inline constexpr const char* kCsvColumns = "k,t,x1,x2,i,v,u,y,H,Hc,V,dV,newton_iters";

struct CsvRow {
  std::size_t k = 0;
  double t = 0.0;
  double x1 = 0.0;
  double x2 = 0.0;
  double i = 0.0;
  double v = 0.0;
  double u = 0.0;
  double y = 0.0;
  double H = 0.0;
  double Hc = 0.0;
  double V = 0.0;
  double dV = 0.0;
  int newton_iters = 0;
};

struct CsvTrajectory {
  int schema = kCsvSchemaVersion;
  std::string scenario_hash;
  Mode mode = Mode::DtMidpoint;
  double delta = 0.0;
  int record_every = 1;
  std::vector<CsvRow> rows;
  std::map<std::string, double> summary;  ///< trailing "# summary key=value ..." fields
};

/// Layout:
///   # schema=1 scenario=<fnv1a64 hex> mode=<mode> delta=<s> record_every=<n>
///   k,t,x1,x2,i,v,u,y,H,Hc,V,dV,newton_iters
///   ...rows...
///   # summary steps=... final_x1=... final_x2=... final_xi=... ...
/// Buck-boost scenarios only (two states, one input).
void write_trajectory_csv(std::ostream& out, const Trajectory& traj, const Scenario& scenario);

/// Writes to a sibling temporary file, then renames over `path`.
void save_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj,
                         const Scenario& scenario);

/// Throws ConfigError on malformed input.
CsvTrajectory read_trajectory_csv(std::istream& in);
CsvTrajectory load_trajectory_csv(const std::filesystem::path& path);

CsvTrajectory to_csv(const Trajectory& traj, const Scenario& scenario);

/// Rebuilds a checkable trajectory: midpoints from consecutive states,
/// integrator states by replaying xi_{k+1} = xi_k + delta (y_k - y*) from the
/// scenario's xi0, segments from the scenario schedule.
Trajectory rebuild_trajectory(const CsvTrajectory& csv, const Scenario& scenario);

/// Atomic text write shared by the CLI outputs.
void write_file_atomically(const std::filesystem::path& path, const std::string& contents);

}  // namespace dtpbc
