"""Exact linear algebra over qubit registers.

Conventions shared by every module:

* Inside one n-qubit register, bit ``i`` of a basis label is qubit ``i``
  (qubit 0 least significant).
* A tensor product places its *first* factor in the least significant
  digits, so a multi-register basis state ``|z_0, ..., z_{q-1}>`` with each
  ``z_v`` in ``[0, N)`` has flat index ``sum_v z_v * N**v``.
* Slots of an ``s x t`` block layout are flattened row-major:
  slot ``v = j * t + i`` for block ``j`` and copy ``i`` (zero based).

Density operators are plain ``numpy`` arrays (dense) or ``scipy.sparse``
matrices whose support lies on unique tuples.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

DEFAULT_STATE_CAP = 1 << 20
DEFAULT_DENSE_CAP = 4096

EXACT_TOL = 1e-12
SVD_TOL = 1e-9


class CapExceeded(ValueError):
    """A requested object would exceed a configured dimension cap."""


@dataclass(frozen=True, eq=False)
class StateVector:
    """Pure state on ``n`` qubits. The amplitude array is read-only."""

    n: int
    amps: np.ndarray

    def __post_init__(self):
        amps = np.array(self.amps, dtype=np.complex128, copy=True).reshape(-1)
        if amps.shape[0] != 1 << self.n:
            raise ValueError(f"expected {1 << self.n} amplitudes for n={self.n}, got {amps.shape[0]}")
        amps.flags.writeable = False
        object.__setattr__(self, "amps", amps)

    @property
    def dim(self) -> int:
        return 1 << self.n

    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))

    def __repr__(self):
        return f"StateVector(n={self.n})"


def _wrap(n: int, amps: np.ndarray) -> StateVector:
    # Trusted construction path: skips the defensive copy.
    state = object.__new__(StateVector)
    amps = np.ascontiguousarray(amps, dtype=np.complex128)
    amps.flags.writeable = False
    object.__setattr__(state, "n", n)
    object.__setattr__(state, "amps", amps)
    return state


def basis_state(n: int, x: int) -> StateVector:
    amps = np.zeros(1 << n, dtype=np.complex128)
    amps[x] = 1.0
    return _wrap(n, amps)


def uniform_state(n: int) -> StateVector:
    return _wrap(n, np.full(1 << n, 2.0 ** (-n / 2), dtype=np.complex128))


def random_state(n: int, rng: np.random.Generator) -> StateVector:
    v = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
    return _wrap(n, v / np.linalg.norm(v))


def tensor_product_state(states: Sequence[StateVector], cap: int = DEFAULT_STATE_CAP) -> StateVector:
    """Product state; ``states[0]`` occupies the least significant qubits."""
    if len(states) == 0:
        raise ValueError("tensor_product_state needs at least one state")
    n_total = sum(s.n for s in states)
    if (1 << n_total) > cap:
        raise CapExceeded(f"product state of {n_total} qubits exceeds cap {cap}")
    out = np.array([1.0 + 0j])
    for s in states:
        out = np.kron(s.amps, out)
    return _wrap(n_total, out)


def density_of(state: StateVector | np.ndarray) -> np.ndarray:
    v = state.amps if isinstance(state, StateVector) else np.asarray(state)
    return np.outer(v, v.conj())


def check_density(rho, trace: float = 1.0, herm_tol: float = 1e-10, trace_tol: float = 1e-9) -> None:
    """Raise ``ValueError`` unless ``rho`` is Hermitian with the given trace."""
    rho = rho.toarray() if sp.issparse(rho) else np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError("density operator must be square")
    herm_err = np.max(np.abs(rho - rho.conj().T)) if rho.size else 0.0
    if herm_err > herm_tol:
        raise ValueError(f"not Hermitian (max deviation {herm_err:.3e})")
    tr = np.trace(rho)
    if abs(tr - trace) > trace_tol:
        raise ValueError(f"trace {tr} differs from {trace}")


def _as_dense(A, cap: int) -> np.ndarray:
    if sp.issparse(A):
        if A.shape[0] > cap:
            raise CapExceeded(f"dense trace norm of dim {A.shape[0]} exceeds cap {cap}")
        return A.toarray()
    return np.asarray(A)


def trace_norm(A, cap: int = DEFAULT_DENSE_CAP) -> float:
    """Sum of singular values of a square matrix (dense or sparse)."""
    A = _as_dense(A, cap)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"trace_norm needs a square matrix, got shape {A.shape}")
    if A.shape[0] > cap:
        raise CapExceeded(f"dense trace norm of dim {A.shape[0]} exceeds cap {cap}")
    if A.size == 0:
        return 0.0
    scale = np.max(np.abs(A))
    if scale == 0.0:
        return 0.0
    # Hermitian fast path; the nonhermitian part is rounding noise only.
    if np.max(np.abs(A - A.conj().T)) <= 1e-13 * scale:
        w = np.linalg.eigvalsh(0.5 * (A + A.conj().T))
        return float(np.sum(np.abs(w)))
    return float(np.sum(np.linalg.svd(A, compute_uv=False)))


def trace_distance(rho, sigma, cap: int = DEFAULT_DENSE_CAP) -> float:
    rho = _as_dense(rho, cap)
    sigma = _as_dense(sigma, cap)
    if rho.shape != sigma.shape:
        raise ValueError(f"dimension mismatch: {rho.shape} vs {sigma.shape}")
    for name, m in (("rho", rho), ("sigma", sigma)):
        tr = np.trace(m)
        if abs(tr - 1.0) > 1e-6:
            raise ValueError(f"{name} has trace {tr}, expected 1")
    return 0.5 * trace_norm(rho - sigma, cap=cap)


# -- tuple registers ---------------------------------------------------------


def falling_factorial(N: int, q: int) -> int:
    """``N (N-1) ... (N-q+1)``, the number of unique q-tuples over ``[N]``."""
    return math.perm(N, q)


def tuple_index(z, N: int) -> np.ndarray | int:
    """Flat register index of tuple(s) ``z`` (last axis runs over slots)."""
    z = np.asarray(z, dtype=np.int64)
    weights = N ** np.arange(z.shape[-1], dtype=np.int64)
    out = z @ weights
    return int(out) if out.ndim == 0 else out


def index_tuples(N: int, q: int) -> np.ndarray:
    """All of ``[N]^q`` as a ``(N**q, q)`` array, row ``r`` being the tuple with index ``r``."""
    r = np.arange(N**q, dtype=np.int64)
    return np.stack([(r // N**v) % N for v in range(q)], axis=1)


def unique_tuples(N: int, q: int) -> np.ndarray:
    """All q-tuples of pairwise distinct values in ``[N]``, shape ``(N^(q), q)``."""
    if q > N:
        return np.zeros((0, q), dtype=np.int64)
    return np.array(list(itertools.permutations(range(N), q)), dtype=np.int64).reshape(-1, q)


def is_unique(z) -> np.ndarray | bool:
    """Uniqueness predicate (the support of the uniqueness projector)."""
    z = np.asarray(z)
    if z.ndim == 1:
        return len(set(z.tolist())) == z.shape[0]
    srt = np.sort(z, axis=-1)
    return np.all(srt[..., 1:] != srt[..., :-1], axis=-1)


def uniqueness_projector_diag(N: int, q: int) -> np.ndarray:
    """Boolean diagonal of the uniqueness projector over ``[N]^q``."""
    return is_unique(index_tuples(N, q))
