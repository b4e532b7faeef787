"""The construction's unitaries, applied as in-place kernels.

``U = U_pi U_g H^n U_f`` where ``U_f`` multiplies amplitude ``x`` by
``f(x) = +-1``, ``H^n`` is the normalized Walsh-Hadamard transform and
``U_pi`` sends ``|x>`` to ``|pi(x)>``.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numba as nb
import numpy as np

from .qcore import DEFAULT_STATE_CAP, CapExceeded, StateVector, _wrap, density_of, tensor_product_state

TABLE_CAP_BITS = 24

# Low stages run inside blocks of 2**_BLOCK_BITS amplitudes (fits L2).
_BLOCK_BITS = 12


@nb.njit(cache=True)
def _fwht_inplace(x, block_bits):
    n = x.shape[0]
    B = min(n, 1 << block_bits)
    for base in range(0, n, B):
        h = 1
        while h < B:
            for i in range(base, base + B, 2 * h):
                for j in range(i, i + h):
                    a = x[j]
                    b = x[j + h]
                    x[j] = a + b
                    x[j + h] = a - b
            h *= 2
    h = B
    while h < n:
        if 4 * h <= n:
            # two butterfly stages per sweep over memory
            for i in range(0, n, 4 * h):
                for j in range(i, i + h):
                    a = x[j]
                    b = x[j + h]
                    c = x[j + 2 * h]
                    d = x[j + 3 * h]
                    ab0 = a + b
                    ab1 = a - b
                    cd0 = c + d
                    cd1 = c - d
                    x[j] = ab0 + cd0
                    x[j + h] = ab1 + cd1
                    x[j + 2 * h] = ab0 - cd0
                    x[j + 3 * h] = ab1 - cd1
            h *= 4
        else:
            for i in range(0, n, 2 * h):
                for j in range(i, i + h):
                    a = x[j]
                    b = x[j + h]
                    x[j] = a + b
                    x[j + h] = a - b
            h *= 2


def hadamard_inplace(amps: np.ndarray) -> np.ndarray:
    """Normalized Walsh-Hadamard transform of a writable complex array, in place."""
    n = int(amps.shape[0]).bit_length() - 1
    if amps.shape[0] != 1 << n:
        raise ValueError("length must be a power of two")
    _fwht_inplace(amps, _BLOCK_BITS)
    amps *= 2.0 ** (-n / 2)
    return amps


class BinaryPhaseFunction:
    """A map ``{0,1}^n -> {+1,-1}``, backed by a table or by a keyed evaluator.

    Keyed instances carry ``evaluate`` (vectorised over integer arrays) and
    ``materialize`` (whole table) callables; the table is built lazily.
    """

    def __init__(self, n: int, table=None, *, evaluate: Callable | None = None,
                 materialize: Callable | None = None, label: str = "table"):
        if table is None and evaluate is None:
            raise ValueError("need a table or an evaluator")
        self.n = n
        self.label = label
        self._evaluate = evaluate
        self._materialize = materialize
        self._table = None
        if table is not None:
            tab = np.asarray(table)
            if tab.shape != (1 << n,):
                raise ValueError(f"table length must be {1 << n}, got {tab.shape}")
            if not np.all(np.abs(tab) == 1) or not np.all(np.isreal(tab)):
                raise ValueError("phase table entries must be +1 or -1")
            tab = tab.real.astype(np.int8) if np.iscomplexobj(tab) else tab.astype(np.int8)
            tab.flags.writeable = False
            self._table = tab

    @classmethod
    def constant(cls, n: int, value: int = 1) -> "BinaryPhaseFunction":
        return cls(n, np.full(1 << n, value, dtype=np.int8))

    @property
    def keyed(self) -> bool:
        return self._evaluate is not None

    def table(self) -> np.ndarray:
        if self._table is None:
            if self.n > TABLE_CAP_BITS:
                raise CapExceeded(f"table for n={self.n} exceeds cap 2^{TABLE_CAP_BITS}")
            tab = (self._materialize() if self._materialize is not None
                   else self._evaluate(np.arange(1 << self.n, dtype=np.int64)))
            tab = np.asarray(tab, dtype=np.int8)
            tab.flags.writeable = False
            self._table = tab
        return self._table

    def __call__(self, x):
        if self._table is not None:
            return self._table[x]
        scalar = np.ndim(x) == 0
        out = self._evaluate(np.atleast_1d(np.asarray(x, dtype=np.int64)))
        return int(out[0]) if scalar else out


class InnerPermutation:
    """A bijection on ``{0,1}^n`` with forward and inverse evaluation."""

    def __init__(self, n: int, forward=None, inverse=None, *, evaluate: Callable | None = None,
                 evaluate_inverse: Callable | None = None, materialize: Callable | None = None,
                 label: str = "table"):
        self.n = n
        self.label = label
        self._evaluate = evaluate
        self._evaluate_inverse = evaluate_inverse
        self._materialize = materialize
        self._forward = None
        self._inverse = None
        if forward is not None:
            fwd = np.asarray(forward, dtype=np.int64)
            if fwd.shape != (1 << n,):
                raise ValueError(f"permutation table length must be {1 << n}")
            if inverse is None:
                inverse = np.empty_like(fwd)
                inverse[fwd] = np.arange(fwd.shape[0])
            inv = np.asarray(inverse, dtype=np.int64)
            if not np.array_equal(inv[fwd], np.arange(1 << n)):
                raise ValueError("forward table is not a bijection or inverse does not match")
            fwd.flags.writeable = False
            inv.flags.writeable = False
            self._forward, self._inverse = fwd, inv
        elif evaluate is None or evaluate_inverse is None:
            raise ValueError("need tables or forward/inverse evaluators")

    @classmethod
    def identity(cls, n: int) -> "InnerPermutation":
        r = np.arange(1 << n)
        return cls(n, r, r)

    @property
    def keyed(self) -> bool:
        return self._evaluate is not None

    def _ensure_tables(self):
        if self._forward is None:
            if self.n > TABLE_CAP_BITS:
                raise CapExceeded(f"table for n={self.n} exceeds cap 2^{TABLE_CAP_BITS}")
            fwd = (self._materialize() if self._materialize is not None
                   else self._evaluate(np.arange(1 << self.n, dtype=np.int64)))
            fwd = np.asarray(fwd, dtype=np.int64)
            inv = np.empty_like(fwd)
            inv[fwd] = np.arange(fwd.shape[0])
            fwd.flags.writeable = False
            inv.flags.writeable = False
            self._forward, self._inverse = fwd, inv

    def forward_table(self) -> np.ndarray:
        self._ensure_tables()
        return self._forward

    def inverse_table(self) -> np.ndarray:
        self._ensure_tables()
        return self._inverse

    def __call__(self, x):
        if self._forward is not None:
            return self._forward[x]
        scalar = np.ndim(x) == 0
        out = self._evaluate(np.atleast_1d(np.asarray(x, dtype=np.int64)))
        return int(out[0]) if scalar else out

    def inverse(self, x):
        if self._inverse is not None:
            return self._inverse[x]
        scalar = np.ndim(x) == 0
        out = self._evaluate_inverse(np.atleast_1d(np.asarray(x, dtype=np.int64)))
        return int(out[0]) if scalar else out


def _check_n(state: StateVector, n: int, what: str):
    if state.n != n:
        raise ValueError(f"{what} acts on n={n} qubits but the state has n={state.n}")


def apply_phase(state: StateVector, f: BinaryPhaseFunction) -> StateVector:
    _check_n(state, f.n, "phase function")
    return _wrap(state.n, state.amps * f.table())


def apply_hadamard_all(state: StateVector) -> StateVector:
    return _wrap(state.n, hadamard_inplace(state.amps.copy()))


def apply_inner_permutation(state: StateVector, pi: InnerPermutation) -> StateVector:
    _check_n(state, pi.n, "permutation")
    out = np.empty_like(state.amps)
    out[pi.forward_table()] = state.amps
    return _wrap(state.n, out)


def construction_amps(amps: np.ndarray, f: BinaryPhaseFunction, g: BinaryPhaseFunction,
                      pi: InnerPermutation) -> np.ndarray:
    """Unwrapped kernel: returns ``U_pi U_g H U_f amps`` as a fresh array."""
    work = amps * f.table()
    hadamard_inplace(work)
    work *= g.table()
    out = np.empty_like(work)
    out[pi.forward_table()] = work
    return out


def apply_construction(state: StateVector, f: BinaryPhaseFunction, g: BinaryPhaseFunction,
                       pi: InnerPermutation) -> StateVector:
    for what, obj in (("f", f), ("g", g), ("pi", pi)):
        if obj.n != state.n:
            raise ValueError(f"component {what} has n={obj.n}, state has n={state.n}")
    return _wrap(state.n, construction_amps(state.amps, f, g, pi))


def apply_construction_multi(states: Sequence[StateVector], f: BinaryPhaseFunction,
                             g: BinaryPhaseFunction, pi: InnerPermutation,
                             t: int | Sequence[int] = 1, cap: int = DEFAULT_STATE_CAP) -> np.ndarray:
    """Density operator of ``U^{(x) st}`` applied to ``(x)_j |psi_j><psi_j|^{(x) t_j}``.

    Slot order is block-major: the ``t_0`` copies of ``states[0]`` come first
    (least significant), then ``states[1]``, and so on.
    """
    mult = [t] * len(states) if np.ndim(t) == 0 else list(t)
    if len(mult) != len(states):
        raise ValueError("one multiplicity per state")
    outs = [apply_construction(s, f, g, pi) for s in states]
    slots = [o for o, m in zip(outs, mult) for _ in range(m)]
    n_total = sum(o.n for o in slots)
    if (1 << n_total) > cap:
        raise CapExceeded(f"{n_total} qubits exceed cap {cap}")
    return density_of(tensor_product_state(slots, cap=cap))


# -- explicit matrices, for small-n cross checks only ------------------------


def hadamard_matrix(n: int) -> np.ndarray:
    h1 = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2.0)
    out = np.array([[1.0]])
    for _ in range(n):
        out = np.kron(h1, out)
    return out


def phase_matrix(f: BinaryPhaseFunction) -> np.ndarray:
    return np.diag(f.table().astype(np.float64))


def permutation_matrix(pi: InnerPermutation) -> np.ndarray:
    N = 1 << pi.n
    P = np.zeros((N, N))
    P[pi.forward_table(), np.arange(N)] = 1.0
    return P


def construction_matrix(f: BinaryPhaseFunction, g: BinaryPhaseFunction, pi: InnerPermutation) -> np.ndarray:
    if f.n > 10:
        raise CapExceeded("explicit construction matrix only for small n")
    return permutation_matrix(pi) @ phase_matrix(g) @ hadamard_matrix(f.n) @ phase_matrix(f)
