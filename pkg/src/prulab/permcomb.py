"""Outer permutations of ``s x t`` slot layouts and their congruence classes.

A permutation ``sigma`` of the ``st`` slots is stored as ``map`` with
``map[v] = sigma(v)``; acting on a tuple it gives ``sigma(z)[v] = z[sigma(v)]``.
Slot ``v`` belongs to block ``v // t``.  Composition is ``(a * b)(v) = a(b(v))``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .qcore import CapExceeded

ENUM_CAP = 8


@dataclass(frozen=True)
class OuterPermutation:
    s: int
    t: int
    map: tuple

    def __post_init__(self):
        m = tuple(int(v) for v in self.map)
        if sorted(m) != list(range(self.s * self.t)):
            raise ValueError(f"{m} is not a permutation of {self.s * self.t} slots")
        object.__setattr__(self, "map", m)

    @classmethod
    def identity(cls, s: int, t: int) -> "OuterPermutation":
        return cls(s, t, tuple(range(s * t)))

    @property
    def size(self) -> int:
        return self.s * self.t

    def block(self, v: int) -> int:
        return v // self.t

    def __call__(self, v: int) -> int:
        return self.map[v]

    def __mul__(self, other: "OuterPermutation") -> "OuterPermutation":
        self._same_shape(other)
        return OuterPermutation(self.s, self.t, tuple(self.map[other.map[v]] for v in range(self.size)))

    def inverse(self) -> "OuterPermutation":
        inv = [0] * self.size
        for v, w in enumerate(self.map):
            inv[w] = v
        return OuterPermutation(self.s, self.t, tuple(inv))

    def apply(self, z):
        """``sigma(z)`` for a tuple (or a stack of tuples along the last axis)."""
        return np.asarray(z)[..., list(self.map)]

    def is_block_preserving(self) -> bool:
        return all(v // self.t == w // self.t for v, w in enumerate(self.map))

    def _same_shape(self, other):
        if (self.s, self.t) != (other.s, other.t):
            raise ValueError(f"shape mismatch: ({self.s},{self.t}) vs ({other.s},{other.t})")


@dataclass(frozen=True)
class BlockEdgePattern:
    """``counts[j][j']`` = slots of block ``j`` mapped into block ``j'``.

    Off-diagonal entries count crossing slots; the diagonal records the
    non-crossing ones and is determined by the off-diagonal part.
    """

    s: int
    t: int
    counts: tuple

    def __post_init__(self):
        c = tuple(tuple(int(x) for x in row) for row in self.counts)
        if len(c) != self.s or any(len(row) != self.s for row in c):
            raise ValueError("pattern must be s x s")
        object.__setattr__(self, "counts", c)

    @classmethod
    def from_offdiagonal(cls, s: int, t: int, off) -> "BlockEdgePattern":
        m = np.array(off, dtype=np.int64).reshape(s, s)
        np.fill_diagonal(m, 0)
        np.fill_diagonal(m, t - m.sum(axis=1))
        return cls(s, t, tuple(map(tuple, m)))

    def matrix(self) -> np.ndarray:
        return np.array(self.counts, dtype=np.int64)

    def offdiagonal(self) -> np.ndarray:
        m = self.matrix()
        np.fill_diagonal(m, 0)
        return m

    @property
    def key(self) -> tuple:
        return tuple(self.counts[j][jp] for j in range(self.s) for jp in range(self.s) if j != jp)

    @property
    def k(self) -> int:
        return int(self.offdiagonal().sum())

    def transpose(self) -> "BlockEdgePattern":
        return BlockEdgePattern(self.s, self.t, tuple(zip(*self.counts)))

    def violations(self) -> list[str]:
        off = self.offdiagonal()
        out = []
        if np.any(off < 0):
            out.append("negative entry")
        rows, cols = off.sum(axis=1), off.sum(axis=0)
        for j in range(self.s):
            if rows[j] != cols[j]:
                out.append(f"block {j}: {rows[j]} out-crossings but {cols[j]} in-crossings")
            if rows[j] > self.t:
                out.append(f"block {j}: {rows[j]} crossings exceed capacity t={self.t}")
        return out

    def to_json(self) -> dict:
        return {"s": self.s, "t": self.t, "counts": [list(r) for r in self.counts], "k": self.k}


def crossing_count(sigma: OuterPermutation) -> int:
    t = sigma.t
    return sum(1 for v, w in enumerate(sigma.map) if v // t != w // t)


def _pattern_counts(perm: tuple, s: int, t: int) -> tuple:
    m = [[0] * s for _ in range(s)]
    for v, w in enumerate(perm):
        m[v // t][w // t] += 1
    return tuple(tuple(r) for r in m)


def block_edge_pattern(sigma: OuterPermutation) -> BlockEdgePattern:
    return BlockEdgePattern(sigma.s, sigma.t, _pattern_counts(sigma.map, sigma.s, sigma.t))


def congruent(a: OuterPermutation, b: OuterPermutation) -> bool:
    a._same_shape(b)
    return block_edge_pattern(a).key == block_edge_pattern(b).key


def _check_enum_cap(s: int, t: int, cap: int):
    if s * t > cap:
        raise CapExceeded(f"enumerating S_{s * t} exceeds cap st <= {cap}")


def all_permutations(s: int, t: int, cap: int = ENUM_CAP) -> Iterator[OuterPermutation]:
    _check_enum_cap(s, t, cap)
    for p in itertools.permutations(range(s * t)):
        yield OuterPermutation(s, t, p)


def class_members(s: int, t: int, cap: int = ENUM_CAP) -> dict[BlockEdgePattern, list[tuple]]:
    """Every permutation of ``S_st`` (as a map tuple) grouped by block edge pattern."""
    _check_enum_cap(s, t, cap)
    groups: dict[tuple, list[tuple]] = {}
    for p in itertools.permutations(range(s * t)):
        groups.setdefault(_pattern_counts(p, s, t), []).append(p)
    return {BlockEdgePattern(s, t, key): members for key, members in groups.items()}


def enumerate_classes(s: int, t: int, cap: int = ENUM_CAP) -> dict[BlockEdgePattern, int]:
    """Exact class sizes; they sum to ``(st)!``."""
    return {p: len(m) for p, m in class_members(s, t, cap).items()}


def class_size_bound(t: int, s: int, k: int) -> int:
    return math.factorial(t) ** s * t ** (2 * k)


def classes_per_k_bound(s: int, k: int) -> int:
    return s ** (2 * k)


def sample_class_representative(pattern: BlockEdgePattern) -> OuterPermutation:
    """A concrete permutation with the given pattern.

    Block ``j`` sends its first ``r_j`` slots (``r_j`` = its crossing count)
    across, visiting destination blocks in ascending order and filling each
    destination's first ``r_{j'}`` slots in ascending order. Remaining slots
    map to themselves.
    """
    problems = pattern.violations()
    if problems:
        raise ValueError("infeasible pattern: " + "; ".join(problems))
    s, t = pattern.s, pattern.t
    off = pattern.offdiagonal()
    out_next = [0] * s
    in_next = [0] * s
    m = list(range(s * t))
    for j in range(s):
        for jp in range(s):
            for _ in range(int(off[j, jp])):
                m[j * t + out_next[j]] = jp * t + in_next[jp]
                out_next[j] += 1
                in_next[jp] += 1
    return OuterPermutation(s, t, tuple(m))


def random_permutation(s: int, t: int, rng: np.random.Generator) -> OuterPermutation:
    return OuterPermutation(s, t, tuple(rng.permutation(s * t)))


def random_block_preserving(s: int, t: int, rng: np.random.Generator) -> OuterPermutation:
    m = []
    for j in range(s):
        m.extend(j * t + int(i) for i in rng.permutation(t))
    return OuterPermutation(s, t, tuple(m))


def block_shift(s: int, t: int, shift: int = 1) -> OuterPermutation:
    """Cyclic shift of the copies inside every block (block preserving)."""
    return OuterPermutation(s, t, tuple(j * t + (i + shift) % t for j in range(s) for i in range(t)))


def _block_generators(s: int, t: int) -> list[tuple]:
    gens = []
    for j in range(s):
        for i in range(t - 1):
            m = list(range(s * t))
            m[j * t + i], m[j * t + i + 1] = m[j * t + i + 1], m[j * t + i]
            gens.append(tuple(m))
    return gens


def double_coset_partition(s: int, t: int, cap: int = 6) -> list[frozenset]:
    """Orbits of ``S_st`` under ``sigma -> a sigma b`` with ``a, b`` block preserving.

    Found by union-find over left and right multiplication by adjacent
    transpositions inside blocks, which generate the block-preserving group.
    """
    _check_enum_cap(s, t, cap)
    perms = list(itertools.permutations(range(s * t)))
    index = {p: i for i, p in enumerate(perms)}
    parent = list(range(len(perms)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    gens = _block_generators(s, t)
    q = s * t
    for p in perms:
        i = find(index[p])
        for g in gens:
            left = tuple(g[p[v]] for v in range(q))
            right = tuple(p[g[v]] for v in range(q))
            for other in (left, right):
                a, b = i, find(index[other])
                if a != b:
                    parent[b] = a
    groups: dict[int, set] = {}
    for p in perms:
        groups.setdefault(find(index[p]), set()).add(p)
    return [frozenset(g) for g in groups.values()]


def classes_table(s: int, t: int, cap: int = ENUM_CAP) -> list[dict]:
    rows = []
    for p, size in sorted(enumerate_classes(s, t, cap).items(), key=lambda kv: (kv[0].k, kv[0].key)):
        rows.append({
            "pattern": [list(r) for r in p.counts], "k": p.k, "class_size": size,
            "size_bound": class_size_bound(t, s, p.k),
        })
    return rows


def classes_json(s: int, t: int, cap: int = ENUM_CAP) -> str:
    return json.dumps({"s": s, "t": t, "classes": classes_table(s, t, cap)}, sort_keys=True)
