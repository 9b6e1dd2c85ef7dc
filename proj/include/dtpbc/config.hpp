#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "dtpbc/engine.hpp"

namespace dtpbc {

/// Sectioned key = value document:
///
///   [model]       type, V_in [V], L [H], C [F], r [Ohm]
///   [gains]       K_P, K_I, K_D
///   [simulation]  delta [s], t_final [s], mode, x0 [Wb, C], xi0, record_every,
///                 blowup_bound, clamp_input
///   [schedule]    times [s] (comma list), v_star [V] (comma list)
///   [solver]      newton_tol, newton_max_iter, substeps
///
/// '#' and ';' start comments, whole-line or trailing. Unknown sections and keys are rejected.
struct ConfigDocument {
  std::map<std::string, std::map<std::string, std::string>> sections;
};

ConfigDocument parse_config_text(std::string_view text);
ConfigDocument load_config(const std::filesystem::path& path);

/// Builds and validates the scenario; ConfigError names the offending key.
Scenario scenario_from_config(const ConfigDocument& doc);

/// Buck-boost parameters from the [model] section.
BuckBoostParams buck_boost_from_config(const ConfigDocument& doc);

/// Scalar gains from the [gains] section.
PIDGains gains_from_config(const ConfigDocument& doc);

/// Stable textual form of every field that influences a run.
std::string canonical_scenario(const Scenario& scenario);
std::uint64_t scenario_hash(const Scenario& scenario);
std::string scenario_hash_hex(const Scenario& scenario);

/// Shortest-exact scientific rendering (17 significant digits), locale independent.
std::string format_double(double value);
double parse_double(std::string_view text, std::string_view key = {});

}  // namespace dtpbc
