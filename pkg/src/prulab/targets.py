"""Analytic objects for the random phase + random permutation stage.

* ``rho_uni``: uniform sum of ``|z><sigma(z)|`` over unique tuples ``z`` and
  block-preserving ``sigma``, normalized by the number of unique tuples.
* ``A_p``: the same sum over one congruence class ``p`` of ``S_st``.
* ``nu_sigma``: average over unique tuples ``x`` of
  ``prod_v alpha^{(j_v)}[x_v] * conj(alpha^{(j_v)}[x_{sigma(v)}])``,
  the coefficient of ``|z><sigma(z)|`` in the averaged output.
* ``exact_average_output``: ``E_{g,pi}`` (optionally also ``E_f``) of the
  st-fold application to the product input, computed exactly.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
import scipy.sparse as sp

from .oracles import hadamard_matrix
from .permcomb import (
    BlockEdgePattern,
    OuterPermutation,
    block_shift,
    class_members,
    sample_class_representative,
)
from .qcore import (
    DEFAULT_DENSE_CAP,
    CapExceeded,
    StateVector,
    falling_factorial,
    index_tuples,
    tuple_index,
    unique_tuples,
)

NU_BUDGET = 500_000_000
NU_FORM_TOL = 1e-12
REP_TOL = 1e-11
PI_ENUM_CAP = 40320
GROUP_NORM_CAP = 6


class ConventionError(RuntimeError):
    """Two computations that must agree by symmetry did not."""


# -- input families -----------------------------------------------------------


@dataclass
class OrthogonalFlatFamily:
    """``s`` orthogonal states on ``n`` qubits, rows of ``vectors``."""

    vectors: np.ndarray
    eps: float | None = None
    orth_tol: float = 1e-12

    def __post_init__(self):
        v = np.array(self.vectors, dtype=np.complex128)
        if v.ndim != 2:
            raise ValueError("vectors must be a 2-d array (s, N)")
        N = v.shape[1]
        if N & (N - 1):
            raise ValueError("vector length must be a power of two")
        v.flags.writeable = False
        self.vectors = v
        norms = np.linalg.norm(v, axis=1)
        if np.any(np.abs(norms - 1) > 1e-10):
            raise ValueError("family vectors must be unit vectors")
        gram = self.inner_products()
        off = gram - np.diag(np.diag(gram))
        if off.size and np.max(np.abs(off)) > self.orth_tol:
            raise ValueError(f"family is not orthogonal (max overlap {np.max(np.abs(off)):.2e})")
        measured = float(self.flatness().max())
        if self.eps is None:
            self.eps = measured
        elif measured > self.eps * (1 + 1e-12):
            raise ValueError(f"family is {measured}-flat, above declared eps={self.eps}")

    @classmethod
    def from_states(cls, states: Sequence[StateVector], eps: float | None = None) -> "OrthogonalFlatFamily":
        return cls(np.stack([s.amps for s in states]), eps)

    @property
    def s(self) -> int:
        return self.vectors.shape[0]

    @property
    def N(self) -> int:
        return self.vectors.shape[1]

    @property
    def n(self) -> int:
        return self.N.bit_length() - 1

    def inner_products(self) -> np.ndarray:
        return self.vectors.conj() @ self.vectors.T

    def flatness(self) -> np.ndarray:
        return np.max(np.abs(self.vectors) ** 2, axis=1)

    def states(self) -> list[StateVector]:
        return [StateVector(self.n, v) for v in self.vectors]


def fourier_flat_family(n: int, s: int) -> OrthogonalFlatFamily:
    """Columns ``j = 0..s-1`` of the unitary DFT on ``2^n`` points; exactly ``1/N``-flat."""
    N = 1 << n
    if s > N:
        raise ValueError(f"at most {N} orthogonal vectors exist for n={n}")
    x = np.arange(N)
    vecs = np.exp(2j * np.pi * np.outer(np.arange(s), x) / N) / np.sqrt(N)
    return OrthogonalFlatFamily(vecs, eps=1.0 / N)


def slot_blocks(s: int, t: int) -> np.ndarray:
    return np.repeat(np.arange(s), t)


# -- permutation-sum operators -------------------------------------------------


@dataclass
class SparsePermSumOperator:
    """``sum_k w_k sum_{z unique} |z><sigma_k(z)|`` on ``(C^N)^{(x) st}``."""

    n: int
    s: int
    t: int
    terms: list  # (weight, map tuple)

    @property
    def q(self) -> int:
        return self.s * self.t

    @property
    def N(self) -> int:
        return 1 << self.n

    @property
    def dim(self) -> int:
        return self.N ** self.q

    def to_sparse(self) -> sp.csr_matrix:
        Z = unique_tuples(self.N, self.q)
        if Z.shape[0] == 0:
            raise ValueError(f"no unique {self.q}-tuples exist for N={self.N}")
        rows = tuple_index(Z, self.N)
        rr, cc, dd = [], [], []
        for w, m in self.terms:
            rr.append(rows)
            cc.append(tuple_index(Z[:, list(m)], self.N))
            dd.append(np.full(rows.shape[0], w, dtype=np.complex128))
        out = sp.coo_matrix((np.concatenate(dd), (np.concatenate(rr), np.concatenate(cc))),
                            shape=(self.dim, self.dim))
        return out.tocsr()

    def to_dense(self, cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
        if self.dim > cap:
            raise CapExceeded(f"dense materialization of dim {self.dim} exceeds cap {cap}")
        return self.to_sparse().toarray()

    def transpose(self) -> "SparsePermSumOperator":
        terms = [(w, OuterPermutation(self.s, self.t, m).inverse().map) for w, m in self.terms]
        return SparsePermSumOperator(self.n, self.s, self.t, terms)

    def block_matrix(self) -> np.ndarray:
        """The ``q! x q!`` block this operator takes on each set of ``q`` distinct values.

        Basis ``|tau>`` (tau in S_q) stands for the tuple ``e[tau(v)]``; the
        operator maps it to ``sum_k w_k |tau> <tau sigma_k|``.
        """
        q = self.q
        if q > GROUP_NORM_CAP:
            raise CapExceeded(f"group-algebra block of S_{q} exceeds cap q <= {GROUP_NORM_CAP}")
        perms = list(itertools.permutations(range(q)))
        index = {p: i for i, p in enumerate(perms)}
        B = np.zeros((len(perms), len(perms)), dtype=np.complex128)
        for w, m in self.terms:
            for i, tau in enumerate(perms):
                B[i, index[tuple(tau[m[v]] for v in range(q))]] += w
        return B

    def trace_norm_exact(self) -> float:
        """Exact trace norm from the group-algebra block, for any ``N >= q``."""
        if self.q > self.N:
            return 0.0
        B = self.block_matrix()
        return math.comb(self.N, self.q) * float(np.sum(np.linalg.svd(B, compute_uv=False)))


def build_A_p(n: int, pattern: BlockEdgePattern, s: int | None = None, t: int | None = None,
              members: list | None = None) -> SparsePermSumOperator:
    s = pattern.s if s is None else s
    t = pattern.t if t is None else t
    if (s, t) != (pattern.s, pattern.t):
        raise ValueError("pattern shape does not match (s, t)")
    if members is None:
        members = class_members(s, t).get(pattern)
        if members is None:
            raise ValueError(f"pattern {pattern.counts} has no permutations")
    return SparsePermSumOperator(n, s, t, [(1.0, m) for m in members])


def block_preserving_maps(s: int, t: int) -> list[tuple]:
    out = []
    for parts in itertools.product(itertools.permutations(range(t)), repeat=s):
        out.append(tuple(j * t + i for j, part in enumerate(parts) for i in part))
    return out


def build_rho_uni(n: int, s: int, t: int, dense: bool = False, cap: int = DEFAULT_DENSE_CAP):
    N = 1 << n
    q = s * t
    if q > N:
        raise ValueError(f"st={q} exceeds N={N}: unique tuples do not exist")
    op = SparsePermSumOperator(n, s, t, [(1.0 / falling_factorial(N, q), m) for m in block_preserving_maps(s, t)])
    return op.to_dense(cap) if dense else op.to_sparse()


def rank_one_partition_bound(N: int, s: int, t: int, class_size: int) -> float:
    """Triangle-inequality bound on ``||A_p||_1`` from its rank-1 pieces."""
    ft = math.factorial(t) ** s
    return falling_factorial(N, s * t) / ft * math.sqrt(ft) * math.sqrt(class_size)


def a_p_norm_bound(N: int, s: int, t: int, k: int) -> float:
    return falling_factorial(N, s * t) * t**k


# -- nu coefficients ------------------------------------------------------------


def _unique_chunks(N: int, q: int, chunk: int = 1 << 20) -> Iterator[np.ndarray]:
    """Depth-first walk over unique q-tuples, yielding vectorised chunks.

    A prefix of slots is fixed in Python (excluded values tracked by a mask);
    the remaining slots are filled by a masked outer product.
    """
    if q == 0:
        yield np.zeros((1, 0), dtype=np.int64)
        return
    tail = min(q, 2)
    while tail > 1 and N**tail > chunk:
        tail -= 1
    head = q - tail
    tail_all = unique_tuples(N, tail)
    used = np.zeros(N, dtype=bool)
    prefix: list[int] = []

    def rec(depth):
        if depth == head:
            ok = ~np.any(used[tail_all], axis=1)
            block = tail_all[ok]
            if head:
                block = np.hstack([np.broadcast_to(np.array(prefix), (block.shape[0], head)), block])
            yield block
            return
        for x in range(N):
            if used[x]:
                continue
            used[x] = True
            prefix.append(x)
            yield from rec(depth + 1)
            prefix.pop()
            used[x] = False

    yield from rec(0)


@dataclass
class NuResult:
    value: complex
    direct: complex
    crossing: complex
    visits: int


def _fsum_complex(parts_re, parts_im) -> complex:
    return complex(math.fsum(parts_re), math.fsum(parts_im))


def nu_sigma_forms(family: OrthogonalFlatFamily, sigma: OuterPermutation,
                   budget: int = NU_BUDGET) -> NuResult:
    """Brute-force ``nu_sigma`` in both the direct and the per-slot (crossing) form."""
    s, t = sigma.s, sigma.t
    if s != family.s:
        raise ValueError(f"family has {family.s} states but sigma has {s} blocks")
    N, q = family.N, sigma.size
    if q > N:
        raise ValueError(f"st={q} exceeds N={N}")
    total = falling_factorial(N, q)
    if total > budget:
        raise CapExceeded(f"{total} tuple visits exceed budget {budget}")
    alpha = family.vectors
    blocks = slot_blocks(s, t)
    m = sigma.map
    inv = sigma.inverse().map
    # Crossing form: slot v contributes alpha^{(j_v)} * conj(alpha^{(j of sigma^-1(v))}).
    weights = [alpha[blocks[v]] * alpha[blocks[inv[v]]].conj() for v in range(q)]
    d_re, d_im, c_re, c_im = [], [], [], []
    visits = 0
    for X in _unique_chunks(N, q):
        visits += X.shape[0]
        direct = np.ones(X.shape[0], dtype=np.complex128)
        cross = np.ones(X.shape[0], dtype=np.complex128)
        for v in range(q):
            direct *= alpha[blocks[v], X[:, v]] * alpha[blocks[v], X[:, m[v]]].conj()
            cross *= weights[v][X[:, v]]
        sd, sc = direct.sum(), cross.sum()
        d_re.append(sd.real); d_im.append(sd.imag)
        c_re.append(sc.real); c_im.append(sc.imag)
    assert visits == total
    direct = _fsum_complex(d_re, d_im) / total
    crossing = _fsum_complex(c_re, c_im) / total
    return NuResult(direct, direct, crossing, visits)


def nu_sigma(family: OrthogonalFlatFamily, sigma: OuterPermutation, budget: int = NU_BUDGET) -> complex:
    r = nu_sigma_forms(family, sigma, budget)
    if abs(r.direct - r.crossing) > NU_FORM_TOL:
        raise ConventionError(f"direct {r.direct} and crossing {r.crossing} forms disagree")
    return r.value


def _second_representative(rep: OuterPermutation) -> OuterPermutation:
    shift = block_shift(rep.s, rep.t, 1)
    for cand in (shift * rep, rep * shift, shift * rep * shift):
        if cand != rep:
            return cand
    return rep


def nu_class(family: OrthogonalFlatFamily, pattern: BlockEdgePattern, budget: int = NU_BUDGET) -> complex:
    """``nu`` of a congruence class, checked on two distinct representatives when they exist."""
    rep = sample_class_representative(pattern)
    value = nu_sigma(family, rep, budget)
    other = _second_representative(rep)
    if other != rep:
        v2 = nu_sigma(family, other, budget)
        if abs(v2 - value) > REP_TOL:
            raise ConventionError(f"class representatives disagree: {value} vs {v2}")
    return value


def nu_bound(N: int, s: int, t: int, k: int, eps: float) -> float:
    q = s * t
    return (q * q * eps * eps * N) ** (k / 2) / falling_factorial(N, q)


def nu_table(family: OrthogonalFlatFamily, t: int, budget: int = NU_BUDGET) -> list[dict]:
    """One row per congruence class of ``S_st``."""
    s, N = family.s, family.N
    rows = []
    for pattern, members in sorted(class_members(s, t).items(), key=lambda kv: (kv[0].k, kv[0].key)):
        nu = nu_class(family, pattern, budget)
        rows.append({
            "pattern": pattern, "k": pattern.k, "class_size": len(members), "members": members,
            "nu": nu, "bound": nu_bound(N, s, t, pattern.k, family.eps),
        })
    return rows


def assemble_rho_star(family: OrthogonalFlatFamily, t: int, dense: bool = True,
                      cap: int = DEFAULT_DENSE_CAP, table: list[dict] | None = None):
    """``sum_p nu_p A_p`` normalized to unit trace.

    Only the identity contributes to the trace, so the normalizer is
    ``N^(st) * nu_{p0}``.
    """
    s, N, n = family.s, family.N, family.n
    q = s * t
    table = nu_table(family, t) if table is None else table
    terms = [(row["nu"], m) for row in table for m in row["members"]]
    op = SparsePermSumOperator(n, s, t, terms)
    nu0 = next(row["nu"] for row in table if row["k"] == 0)
    mat = op.to_sparse() / (falling_factorial(N, q) * nu0)
    if dense:
        if mat.shape[0] > cap:
            raise CapExceeded(f"dense rho* of dim {mat.shape[0]} exceeds cap {cap}")
        return mat.toarray()
    return mat


# -- exact averaged output -------------------------------------------------------


def bintype_codes(N: int, q: int) -> np.ndarray:
    """Binary type of every tuple in ``[N]^q``: XOR of one-hot words, i.e. the odd-multiplicity set."""
    if N > 63:
        raise CapExceeded("binary-type codes are packed in 64-bit words (N <= 63)")
    T = index_tuples(N, q)
    codes = np.zeros(T.shape[0], dtype=np.uint64)
    for v in range(q):
        codes ^= np.left_shift(np.uint64(1), T[:, v].astype(np.uint64))
    return codes


def bintype_mask(N: int, q: int) -> np.ndarray:
    c = bintype_codes(N, q)
    return c[:, None] == c[None, :]


def product_input(states: Sequence, t: int) -> np.ndarray:
    """Product vector with ``t`` copies of each state, first state least significant."""
    out = np.array([1.0 + 0j])
    for v in states:
        v = v.amps if isinstance(v, StateVector) else np.asarray(v)
        for _ in range(t):
            out = np.kron(v, out)
    return out


def _tensor_power(M: np.ndarray, q: int) -> np.ndarray:
    out = np.array([[1.0]])
    for _ in range(q):
        out = np.kron(M, out)
    return out


def _orbit_codes(T: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Equality-pattern code of every pair (row tuple, column tuple).

    Position ``p`` of the concatenated ``2q`` tuple is labelled by the first
    position holding the same value; codes are those labels in base ``2q``.
    """
    q = T.shape[1]
    L = 2 * q
    E = [T[rows, v][:, None] for v in range(q)] + [T[:, v][None, :] for v in range(q)]
    shape = (rows.shape[0], T.shape[0])
    code = np.zeros(shape, dtype=np.int64)
    for p in range(L):
        first = np.full(shape, p, dtype=np.int64)
        for pp in range(p - 1, -1, -1):
            first = np.where(E[pp] == E[p], pp, first)
        code += first * L**p
    return code


def pi_average_orbit(X: np.ndarray, N: int, q: int, row_chunk: int = 256) -> np.ndarray:
    """Exact ``E_pi[P_pi X P_pi^dagger]`` by averaging over equality-pattern orbits."""
    T = index_tuples(N, q)
    D = T.shape[0]
    L = 2 * q
    nbins = L**L
    sum_re = np.zeros(nbins)
    sum_im = np.zeros(nbins)
    count = np.zeros(nbins)
    codes = np.empty((D, D), dtype=np.int64)
    for r0 in range(0, D, row_chunk):
        rows = np.arange(r0, min(D, r0 + row_chunk))
        c = _orbit_codes(T, rows)
        codes[rows] = c
        flat = c.ravel()
        sum_re += np.bincount(flat, weights=X[rows].real.ravel(), minlength=nbins)
        sum_im += np.bincount(flat, weights=X[rows].imag.ravel(), minlength=nbins)
        count += np.bincount(flat, minlength=nbins)
    count[count == 0] = 1
    return (sum_re / count + 1j * (sum_im / count))[codes]


def pi_average_exhaustive(X: np.ndarray, N: int, q: int, cap: int = PI_ENUM_CAP) -> np.ndarray:
    if math.factorial(N) > cap:
        raise CapExceeded(f"{N}! permutations exceed enumeration cap {cap}")
    T = index_tuples(N, q)
    weights = N ** np.arange(q, dtype=np.int64)
    out = np.zeros_like(X)
    count = 0
    for p in itertools.permutations(range(N)):
        inv = np.empty(N, dtype=np.int64)
        inv[list(p)] = np.arange(N)
        # (P X P^dagger)[z, z'] = X[pi^-1 z, pi^-1 z']
        idx = inv[T] @ weights
        out += X[np.ix_(idx, idx)]
        count += 1
    return out / count


def pi_average_sampled(X: np.ndarray, N: int, q: int, samples: int, rng: np.random.Generator):
    T = index_tuples(N, q)
    weights = N ** np.arange(q, dtype=np.int64)
    mean = np.zeros_like(X)
    sq_re = np.zeros(X.shape)
    sq_im = np.zeros(X.shape)
    for _ in range(samples):
        inv = rng.permutation(N)
        Y = X[np.ix_(inv[T] @ weights, inv[T] @ weights)]
        mean += Y
        sq_re += Y.real**2
        sq_im += Y.imag**2
    mean /= samples
    var_re = np.maximum(sq_re / samples - mean.real**2, 0) * samples / max(samples - 1, 1)
    var_im = np.maximum(sq_im / samples - mean.imag**2, 0) * samples / max(samples - 1, 1)
    return mean, np.sqrt(var_re / samples) + 1j * np.sqrt(var_im / samples)


@dataclass
class AveragedOutput:
    rho: np.ndarray
    mode: str
    stderr: np.ndarray | None = None
    samples: int | None = None


def g_average_exhaustive(X: np.ndarray, N: int, q: int, cap_bits: int = 16) -> np.ndarray:
    """``E_g[D_g X D_g]`` by summing over all ``2^N`` sign functions."""
    if N > cap_bits:
        raise CapExceeded(f"2^{N} sign functions exceed cap 2^{cap_bits}")
    T = index_tuples(N, q)
    codes = np.arange(1 << N)[:, None]
    signs = 1 - 2 * ((codes >> np.arange(N)[None, :]) & 1)  # (functions, N)
    G = np.prod(signs[:, T], axis=2).astype(np.float64)  # (functions, tuples)
    # integer sign sums are exact, so unmatched entries cancel to exactly 0
    S = G.T @ G
    return X * (S / (1 << N))


def average_channel(X: np.ndarray, N: int, q: int, pi_mode: str = "orbit", samples: int = 1000,
                    rng: np.random.Generator | None = None, include_f: bool = False,
                    g_mode: str = "mask") -> AveragedOutput:
    """Apply the averaged channel ``E[V^{(x)q} X V^{dagger (x)q}]`` to any operator ``X``.

    ``V = P_pi D_g`` (or ``P_pi D_g H D_f`` with ``include_f``). The phase
    averages are done in closed form: ``E_g[D_g X D_g]`` keeps exactly the
    entries whose row and column tuples share a binary type, or, with
    ``g_mode="exhaustive"``, by summing over every sign function.
    ``pi_mode`` picks the permutation average: ``"orbit"`` (exact, any N),
    ``"exhaustive"`` (all N! permutations) or ``"sampled"`` (Monte Carlo,
    with entrywise standard errors).
    """
    if g_mode not in ("mask", "exhaustive"):
        raise ValueError(f"unknown g_mode {g_mode!r}")
    n = N.bit_length() - 1
    if X.shape != (N**q, N**q):
        raise ValueError(f"operator of shape {X.shape} does not match (N={N}, q={q})")

    def phase_avg(Y):
        if g_mode == "exhaustive":
            return g_average_exhaustive(Y, N, q)
        return np.where(bintype_mask(N, q), Y, 0)

    if include_f:
        X = phase_avg(X)
        Hq = _tensor_power(hadamard_matrix(n), q)
        X = Hq @ X @ Hq
    X = phase_avg(X)
    if pi_mode == "orbit":
        return AveragedOutput(pi_average_orbit(X, N, q), "orbit")
    if pi_mode == "exhaustive":
        return AveragedOutput(pi_average_exhaustive(X, N, q), "exhaustive")
    if pi_mode == "sampled":
        rng = rng if rng is not None else np.random.default_rng(0)
        mean, se = pi_average_sampled(X, N, q, samples, rng)
        return AveragedOutput(mean, "sampled", se, samples)
    raise ValueError(f"unknown pi_mode {pi_mode!r}")


def exact_average_output(states: Sequence, t: int, pi_mode: str = "orbit", samples: int = 1000,
                         rng: np.random.Generator | None = None, include_f: bool = False,
                         cap: int = DEFAULT_DENSE_CAP, g_mode: str = "mask") -> AveragedOutput:
    """Averaged st-fold output on ``(x)_j |psi_j><psi_j|^{(x) t}``; see ``average_channel``."""
    vecs = [v.amps if isinstance(v, StateVector) else np.asarray(v, dtype=np.complex128) for v in states]
    N = vecs[0].shape[0]
    q = len(vecs) * t
    if N**q > cap:
        raise CapExceeded(f"dense output of dim {N ** q} exceeds cap {cap}")
    psi = product_input(vecs, t)
    return average_channel(np.outer(psi, psi.conj()), N, q, pi_mode, samples, rng, include_f, g_mode)


def mc_average_output(states: Sequence, t: int, samples: int, rng: np.random.Generator,
                      include_f: bool = False, cap: int = DEFAULT_DENSE_CAP) -> AveragedOutput:
    """Plain Monte Carlo over sampled ``(g, pi)`` (and ``f``), independent of the closed forms."""
    from .oracles import hadamard_inplace

    vecs = [v.amps if isinstance(v, StateVector) else np.asarray(v, dtype=np.complex128) for v in states]
    N = vecs[0].shape[0]
    q = len(vecs) * t
    D = N**q
    if D > cap:
        raise CapExceeded(f"dense output of dim {D} exceeds cap {cap}")
    mean = np.zeros((D, D), dtype=np.complex128)
    sq_re = np.zeros((D, D))
    sq_im = np.zeros((D, D))
    for _ in range(samples):
        f = 1 - 2 * rng.integers(0, 2, size=N)
        g = 1 - 2 * rng.integers(0, 2, size=N)
        perm = rng.permutation(N)
        outs = []
        for v in vecs:
            w = v.copy()
            if include_f:
                w *= f
                hadamard_inplace(w)
            w *= g
            o = np.empty_like(w)
            o[perm] = w
            outs.append(o)
        phi = product_input(outs, t)
        Y = np.outer(phi, phi.conj())
        mean += Y
        sq_re += Y.real**2
        sq_im += Y.imag**2
    mean /= samples
    var_re = np.maximum(sq_re / samples - mean.real**2, 0) * samples / max(samples - 1, 1)
    var_im = np.maximum(sq_im / samples - mean.imag**2, 0) * samples / max(samples - 1, 1)
    return AveragedOutput(mean, "monte-carlo", np.sqrt(var_re / samples) + 1j * np.sqrt(var_im / samples), samples)


def unique_restriction(rho: np.ndarray, N: int, q: int) -> tuple[np.ndarray, float]:
    """``(Pi* rho Pi* / Tr[Pi* rho], Tr[Pi* rho])``."""
    from .qcore import uniqueness_projector_diag

    u = uniqueness_projector_diag(N, q)
    restricted = np.where(u[:, None] & u[None, :], rho, 0)
    tr = float(np.trace(restricted).real)
    return restricted / tr, tr


def nu_sigma_z_table(family: OrthogonalFlatFamily, sigma: OuterPermutation,
                     inverse_pis: np.ndarray, chunk: int = 1 << 20) -> np.ndarray:
    """``nu_{sigma,z}`` for every unique ``z``, averaged over the given ``pi^{-1}`` tables.

    Returns one value per unique tuple (rows of ``unique_tuples(N, st)``).
    """
    N, q = family.N, sigma.size
    alpha = family.vectors
    blocks = slot_blocks(sigma.s, sigma.t)
    Z = unique_tuples(N, q)
    m = list(sigma.map)
    inverse_pis = np.asarray(inverse_pis)
    acc = np.zeros(Z.shape[0], dtype=np.complex128)
    step = max(1, chunk // max(Z.shape[0], 1))
    for c0 in range(0, inverse_pis.shape[0], step):
        X = inverse_pis[c0:c0 + step][:, Z]  # (pis, tuples, q)
        val = np.ones(X.shape[:2], dtype=np.complex128)
        for v in range(q):
            val *= alpha[blocks[v], X[..., v]] * alpha[blocks[v], X[..., m[v]]].conj()
        acc += val.sum(axis=0)
    return acc / inverse_pis.shape[0]
