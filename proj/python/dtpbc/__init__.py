"""Discrete-time passivity-based PID control of bilinear port-Hamiltonian plants."""

from ._core import (
    BuckBoostParams,
    CheckReport,
    ConfigError,
    DampingReport,
    EquilibriumSpec,
    Error,
    NotAssignable,
    PIDGains,
    Scenario,
    SolverFailure,
    Trajectory,
    WrongMode,
    buck_boost_reference,
    damping_injection,
    load_scenario,
    parse_scenario,
    run_scenario,
    save_csv,
    verify,
)

__all__ = [
    "BuckBoostParams",
    "CheckReport",
    "ConfigError",
    "DampingReport",
    "EquilibriumSpec",
    "Error",
    "NotAssignable",
    "PIDGains",
    "Scenario",
    "SolverFailure",
    "Trajectory",
    "WrongMode",
    "buck_boost_reference",
    "damping_injection",
    "load_scenario",
    "parse_scenario",
    "run_scenario",
    "save_csv",
    "verify",
]
