#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace dtpbc::cli {

/// Process exit codes. Every failure path maps to exactly one of these.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,          ///< bad arguments, config error, unreadable file, scenario hash mismatch
  kExitDiverged = 2,
  kExitSolverFailure = 3,
  kExitCheckFailed = 4,
  kExitNotAssignable = 5,
};

int cmd_simulate(const std::filesystem::path& config_path, const std::filesystem::path& out_path,
                 const std::optional<std::string>& mode_override, std::ostream& out,
                 std::ostream& err);

int cmd_verify(const std::filesystem::path& trajectory_csv,
               const std::filesystem::path& config_path, double tol, std::ostream& out,
               std::ostream& err);

int cmd_sweep(const std::filesystem::path& config_path, const std::string& axis,
              const std::string& values, const std::filesystem::path& out_dir, std::ostream& out,
              std::ostream& err);

int cmd_equilibrium(const std::filesystem::path& config_path, double v_star, std::ostream& out,
                    std::ostream& err);

/// Full command line, CLI11 parsing included.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dtpbc::cli
