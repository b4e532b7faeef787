"""Flatness of states and the random-phase-then-Hadamard flattener."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .oracles import hadamard_inplace
from .qcore import StateVector
from .sampling import SeededStream, sample_binary_function

DEFAULT_C = 8.0


class VacuousBoundWarning(UserWarning):
    pass


def flatness_of(state: StateVector | np.ndarray) -> float:
    """Largest squared amplitude magnitude."""
    amps = state.amps if isinstance(state, StateVector) else np.asarray(state)
    return float(np.max(amps.real**2 + amps.imag**2))


def flatness_threshold(n: int, c: float) -> float:
    return c * n / 2**n


def hoeffding_failure_bound(n: int, s: int, c: float) -> float:
    """Upper bound ``2 s exp(-(c/4 - ln 2) n)`` on the chance that some flattened state is not ``c n / 2^n``-flat."""
    return 2.0 * s * math.exp(-(c / 4.0 - math.log(2.0)) * n)


@dataclass
class FlatnessReport:
    n: int
    c: float
    threshold: float
    trials: int
    # measured[trial, j] = flatness of H U_f |beta_j> in that trial
    measured: np.ndarray
    passed: np.ndarray = field(init=False)
    seed: int | None = None
    stream_id: int | None = None

    def __post_init__(self):
        self.passed = self.measured <= self.threshold

    @property
    def failures(self) -> int:
        """Trials in which at least one state missed the threshold."""
        return int(np.sum(~np.all(self.passed, axis=1)))

    @property
    def failure_rate(self) -> float:
        return self.failures / self.trials if self.trials else 0.0

    @property
    def bound(self) -> float:
        return hoeffding_failure_bound(self.n, self.measured.shape[1], self.c)

    def summary(self) -> dict:
        return {
            "n": self.n, "c": self.c, "s": int(self.measured.shape[1]), "trials": self.trials,
            "threshold": self.threshold, "failures": self.failures,
            "failure_rate": self.failure_rate, "bound": self.bound,
            "max_eps": float(self.measured.max()), "min_eps": float(self.measured.min()),
            "mean_eps": float(self.measured.mean()),
        }


def check_flattening(states: Sequence[StateVector], c: float = DEFAULT_C, trials: int = 100,
                     rng: SeededStream | None = None) -> FlatnessReport:
    """Sample ``f`` per trial and record the flatness of ``H U_f`` on each state."""
    if not states:
        raise ValueError("need at least one state")
    n = states[0].n
    if any(s.n != n for s in states):
        raise ValueError("all states must have the same qubit count")
    if c <= 4 * math.log(2):
        warnings.warn(f"c={c} <= 4 ln 2: the flatness failure bound is vacuous", VacuousBoundWarning)
    rng = rng or SeededStream(0)
    measured = np.empty((trials, len(states)))
    work = np.empty(1 << n, dtype=np.complex128)
    for trial in range(trials):
        f = sample_binary_function(n, rng.child(trial)).table()
        for j, st in enumerate(states):
            np.multiply(st.amps, f, out=work)
            hadamard_inplace(work)
            measured[trial, j] = flatness_of(work)
    return FlatnessReport(n, c, flatness_threshold(n, c), trials, measured,
                          seed=rng.seed, stream_id=rng.stream_id)
