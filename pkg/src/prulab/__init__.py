"""Numerical laboratory for the random-phase / Hadamard / permutation unitary construction."""

from .qcore import StateVector, basis_state, trace_distance, trace_norm
from .verify import CHECKS, SUITES, CheckResult, run_check, run_suite

__all__ = [
    "StateVector", "basis_state", "trace_distance", "trace_norm",
    "CHECKS", "SUITES", "CheckResult", "run_check", "run_suite",
]
