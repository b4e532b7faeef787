"""Haar twirl ``X -> E_U[U^{(x)q} X U^{dagger (x)q}]`` on ``(C^N)^{(x)q}``.

The twirl is the orthogonal projection (Hilbert-Schmidt) onto the span of
slot-permutation operators ``P_sigma = sum_z |z><sigma(z)|``.  Writing the
result as ``sum_sigma a_sigma P_sigma``, the coefficients solve
``G a = b`` with ``G[s, t] = Tr(P_s^dagger P_t) = N^{cycles(s^-1 t)}`` and
``b[s] = Tr(P_s^dagger X)``.  Permutation operators are never built; both
traces and the reconstruction are index gathers.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .qcore import DEFAULT_DENSE_CAP, CapExceeded, index_tuples, trace_distance
from .sampling import sample_haar_unitary

TWIRL_Q_CAP = 6


def cycle_count(perm) -> int:
    seen = [False] * len(perm)
    cycles = 0
    for v in range(len(perm)):
        if not seen[v]:
            cycles += 1
            w = v
            while not seen[w]:
                seen[w] = True
                w = perm[w]
    return cycles


@dataclass
class TwirlContext:
    q: int
    N: int
    cap: int = DEFAULT_DENSE_CAP
    perms: list = field(init=False)
    gram: np.ndarray = field(init=False)
    # cols[k, r] = index of sigma_k(z_r), where z_r is the tuple with index r
    cols: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.q > TWIRL_Q_CAP:
            raise CapExceeded(f"q={self.q} exceeds twirl cap {TWIRL_Q_CAP}")
        if self.N < self.q:
            raise ValueError(f"N={self.N} < q={self.q}: permutation operators are linearly dependent")
        if self.N**self.q > self.cap:
            raise CapExceeded(f"dimension {self.N ** self.q} exceeds cap {self.cap}")
        self.perms = list(itertools.permutations(range(self.q)))
        inv = [tuple(np.argsort(p)) for p in self.perms]
        self.gram = np.array([[float(self.N) ** cycle_count([a_inv[b[v]] for v in range(self.q)])
                               for b in self.perms] for a_inv in inv])
        T = index_tuples(self.N, self.q)
        w = self.N ** np.arange(self.q, dtype=np.int64)
        self.cols = np.stack([T[:, list(p)] @ w for p in self.perms])
        self._cho = sla.cho_factor(self.gram)

    @property
    def dim(self) -> int:
        return self.N**self.q

    def overlaps(self, X: np.ndarray) -> np.ndarray:
        """``b[sigma] = Tr(P_sigma^dagger X)``."""
        rows = np.arange(self.dim)
        return np.array([X[rows, c].sum() for c in self.cols])

    def coefficients(self, X: np.ndarray) -> np.ndarray:
        return sla.cho_solve(self._cho, self.overlaps(X))

    def combine(self, a: np.ndarray) -> np.ndarray:
        """``sum_sigma a_sigma P_sigma`` as a dense matrix."""
        Y = np.zeros((self.dim, self.dim), dtype=np.complex128)
        rows = np.arange(self.dim)
        for coef, c in zip(a, self.cols):
            # z -> sigma(z) is injective, so no index repeats within one sigma
            Y[rows, c] += coef
        return Y


def permutation_operator(perm, N: int) -> np.ndarray:
    """Dense ``P_sigma``; only for tests and cross-checks."""
    q = len(perm)
    T = index_tuples(N, q)
    w = N ** np.arange(q, dtype=np.int64)
    P = np.zeros((N**q, N**q))
    P[np.arange(N**q), T[:, list(perm)] @ w] = 1.0
    return P


def _dense(X):
    return X.toarray() if hasattr(X, "toarray") else np.asarray(X)


def exact_twirl(X, ctx: TwirlContext) -> np.ndarray:
    X = _dense(X)
    if X.shape != (ctx.dim, ctx.dim):
        raise ValueError(f"operator of shape {X.shape} does not match dim {ctx.dim}")
    return ctx.combine(ctx.coefficients(X))


def mc_twirl(X, q: int, N: int, samples: int, rng, cap: int = DEFAULT_DENSE_CAP):
    """Sample mean of ``U^{(x)q} X U^{dagger (x)q}`` and its entrywise standard error.

    The standard error is returned as a complex array whose real and
    imaginary parts are the errors of the real and imaginary parts.
    """
    X = _dense(X)
    D = N**q
    if D > cap:
        raise CapExceeded(f"dimension {D} exceeds cap {cap}")
    g = rng.generator() if hasattr(rng, "generator") else rng
    mean = np.zeros((D, D), dtype=np.complex128)
    sq_re = np.zeros((D, D))
    sq_im = np.zeros((D, D))
    for _ in range(samples):
        U = sample_haar_unitary(N, g)
        V = U
        for _ in range(q - 1):
            V = np.kron(U, V)
        Y = V @ X @ V.conj().T
        mean += Y
        sq_re += Y.real**2
        sq_im += Y.imag**2
    mean /= samples
    if samples > 1:
        var_re = np.maximum(sq_re / samples - mean.real**2, 0) * samples / (samples - 1)
        var_im = np.maximum(sq_im / samples - mean.imag**2, 0) * samples / (samples - 1)
        se = np.sqrt(var_re / samples) + 1j * np.sqrt(var_im / samples)
    else:
        se = np.full((D, D), complex(np.inf, np.inf))
    return mean, se


def almost_invariance_defect(rho, ctx: TwirlContext) -> float:
    rho = _dense(rho)
    return trace_distance(rho, exact_twirl(rho, ctx), cap=max(ctx.cap, ctx.dim))


def set_partitions(q: int) -> list[tuple]:
    """All set partitions of ``range(q)`` as restricted-growth label tuples."""
    out = []

    def rec(prefix, top):
        if len(prefix) == q:
            out.append(tuple(prefix))
            return
        for lab in range(top + 2):
            rec(prefix + [lab], max(top, lab))

    rec([], -1)
    return out


@dataclass
class HaarOutcomeLaw:
    """Exact law of computational-basis outcomes when ``U^{(x)q}`` acts on a basis tuple.

    ``labels[v]`` names the input basis state at slot ``v``; slots with equal
    labels hold copies of one state, distinct labels orthogonal states.
    ``E_U |<y|U^{(x)q}|e>|^2 = sum_sigma a_sigma [sigma(y) = y]`` with
    ``a = G^{-1} b``, so the probability of an outcome tuple depends only on
    its equality pattern. ``patterns`` and ``probs`` list every pattern with
    its total probability.
    """

    labels: tuple
    N: int
    patterns: list = field(init=False)
    probs: np.ndarray = field(init=False)

    def __post_init__(self):
        q = len(self.labels)
        if q > TWIRL_Q_CAP:
            raise CapExceeded(f"q={q} exceeds cap {TWIRL_Q_CAP}")
        if self.N < q:
            raise ValueError("need N >= q")
        perms = list(itertools.permutations(range(q)))
        inv = [tuple(np.argsort(p)) for p in perms]
        gram = np.array([[float(self.N) ** cycle_count([ai[b[v]] for v in range(q)]) for b in perms]
                         for ai in inv])
        lab = self.labels
        b = np.array([float(all(lab[p[v]] == lab[v] for v in range(q))) for p in perms])
        a = sla.solve(gram, b, assume_a="pos")
        self.patterns = set_partitions(q)
        probs = []
        for pat in self.patterns:
            fixed = sum(coef for coef, p in zip(a, perms) if all(pat[p[v]] == pat[v] for v in range(q)))
            blocks = max(pat) + 1
            count = math.perm(self.N, blocks)
            probs.append(count * fixed)
        self.probs = np.clip(np.array(probs), 0.0, None)
        total = self.probs.sum()
        if abs(total - 1.0) > 1e-9:
            raise RuntimeError(f"outcome law sums to {total}")
        self.probs /= total

    def sample(self, size: int, rng) -> np.ndarray:
        """``size`` outcome tuples, shape ``(size, q)``."""
        g = rng.generator() if hasattr(rng, "generator") else rng
        q = len(self.labels)
        which = g.choice(len(self.patterns), size=size, p=self.probs)
        pats = np.array(self.patterns)[which]
        blocks = pats.max(axis=1) + 1
        # distinct values per row: draw with replacement and redraw rows with repeats
        vals = g.integers(0, self.N, size=(size, q))
        while True:
            used = np.arange(q)[None, :] < blocks[:, None]
            rep = np.zeros(size, dtype=bool)
            for v in range(q):
                for w in range(v + 1, q):
                    rep |= used[:, v] & used[:, w] & (vals[:, v] == vals[:, w])
            if not rep.any():
                break
            vals[rep] = g.integers(0, self.N, size=(int(rep.sum()), q))
        return np.take_along_axis(vals, pats, axis=1)
