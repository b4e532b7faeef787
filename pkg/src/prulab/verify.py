"""Verification checks: each one runs an experiment and returns a ``CheckResult``.

A check records raw measured values next to the bound they are compared
with. Bounds that only hold under a hypothesis on the parameters are
evaluated only inside that regime; outside it they are reported as
skipped rather than passed.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import permcomb as pc
from .flatness import check_flattening
from .haartwirl import TWIRL_Q_CAP, HaarOutcomeLaw, TwirlContext, almost_invariance_defect, exact_twirl, mc_twirl, permutation_operator
from .oracles import apply_hadamard_all, hadamard_inplace
from .qcore import (
    CapExceeded,
    basis_state,
    falling_factorial,
    index_tuples,
    random_state,
    trace_distance,
    trace_norm,
    unique_tuples,
    uniqueness_projector_diag,
)
from .sampling import SeededStream, construction_components, sample_binary_function, sample_haar_unitary
from .targets import (
    OrthogonalFlatFamily,
    a_p_norm_bound,
    assemble_rho_star,
    average_channel,
    build_A_p,
    build_rho_uni,
    exact_average_output,
    fourier_flat_family,
    mc_average_output,
    nu_bound,
    nu_sigma_forms,
    nu_sigma_z_table,
    nu_table,
    product_input,
    rank_one_partition_bound,
    unique_restriction,
)

THREADS_ENV = "PRULAB_THREADS"
IDENTITY_TOL = 1e-12
SVD_REL_TOL = 1e-9
REP_AGREE_TOL = 1e-11
FORM_AGREE_TOL = 1e-12
DENSE_SVD_CAP = 4096


# -- result type ------------------------------------------------------------------


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (complex, np.complexfloating)):
        return {"re": float(x.real), "im": float(x.imag)}
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if math.isnan(x) or math.isinf(x):
            return str(x)
        return x
    return x


@dataclass
class CheckResult:
    check: str
    params: dict
    seed: int | None
    measured: dict
    bound: dict
    regime: str
    status: str  # pass | fail | skipped | inconclusive | error
    runtime_ms: float | None = None
    details: list = field(default_factory=list)
    # measured entries that are wall-clock readings; blanked like runtime_ms when timing is off
    wallclock: tuple = ()

    @property
    def passed(self) -> bool | None:
        return {"pass": True, "fail": False}.get(self.status)

    def to_row(self, timing: bool = True) -> dict:
        measured = self.measured if timing else {k: (None if k in self.wallclock else v)
                                                 for k, v in self.measured.items()}
        return _jsonable({
            "check": self.check, "params": self.params, "seed": self.seed,
            "measured": measured, "bound": self.bound, "regime": self.regime,
            "pass": self.passed, "status": self.status,
            "runtime_ms": self.runtime_ms if timing else None,
            "details": self.details if timing else [dict(d, measured=None) if d.get("wallclock") else d
                                                    for d in self.details],
        })

    def to_json(self, timing: bool = True) -> str:
        return json.dumps(self.to_row(timing), sort_keys=True)

    def line(self) -> str:
        return f"{self.check}: {self.status} ({self.regime})"


class _Criteria:
    """Collects the individual comparisons a check makes and derives its status."""

    def __init__(self):
        self.items: list[dict] = []
        self.inconclusive = False

    def bound(self, name, measured, bound, tol=0.0, in_regime=True):
        item = {"name": name, "kind": "bound", "measured": measured, "bound": bound, "tol": tol}
        if in_regime:
            item["regime"] = "in"
            item["pass"] = bool(measured <= bound + tol)
        else:
            item["regime"] = "out"
            item["pass"] = None
            item["note"] = "skipped (out of regime)"
        self.items.append(item)
        return item["pass"]

    def identity(self, name, deviation, tol):
        ok = bool(abs(deviation) <= tol)
        self.items.append({"name": name, "kind": "identity", "measured": deviation, "tol": tol,
                           "regime": "n/a", "pass": ok})
        return ok

    def flag(self, name, ok, **info):
        self.items.append({"name": name, "kind": "flag", "regime": "n/a", "pass": bool(ok), **info})
        return bool(ok)

    def status(self) -> str:
        evaluated = [i["pass"] for i in self.items if i["pass"] is not None]
        if any(v is False for v in evaluated):
            return "fail"
        if self.inconclusive:
            return "inconclusive"
        if not evaluated:
            return "skipped"
        return "pass"

    def regime(self) -> str:
        regimes = {i["regime"] for i in self.items if i["regime"] != "n/a"}
        if not regimes:
            return "n/a"
        if regimes == {"in"}:
            return "in"
        if regimes == {"out"}:
            return "out"
        return "partial"


def _finish(check, params, seed, measured, bound, crit: _Criteria, t0, details=None) -> CheckResult:
    return CheckResult(check, params, seed, measured, bound, crit.regime(), crit.status(),
                       (time.perf_counter() - t0) * 1e3, list(crit.items) + list(details or []))


def stream_for(check: str, params: dict, seed: int) -> SeededStream:
    """Isolated stream for a check, fixed by its id and parameters."""
    blob = json.dumps({"check": check, "params": _jsonable(params)}, sort_keys=True).encode()
    sid = int.from_bytes(hashlib.blake2b(blob, digest_size=8).digest(), "little")
    return SeededStream(seed, sid)


# -- input families ------------------------------------------------------------------


def make_family(kind: str, n: int, s: int, seed: int = 0) -> OrthogonalFlatFamily:
    """``"fourier"``: DFT columns. ``"flattened"``: a random orthonormal set passed through ``H U_f``."""
    if kind == "fourier":
        return fourier_flat_family(n, s)
    if kind == "flattened":
        g = SeededStream(seed, 0x5EED).generator()
        N = 1 << n
        z = g.normal(size=(N, s)) + 1j * g.normal(size=(N, s))
        Q, _ = np.linalg.qr(z)
        f = sample_binary_function(n, g).table()
        vecs = []
        for j in range(s):
            w = Q[:, j] * f
            hadamard_inplace(w)
            vecs.append(w)
        return OrthogonalFlatFamily(np.array(vecs))
    raise ValueError(f"unknown family {kind!r}")


# -- binary types --------------------------------------------------------------------


def verify_bintype_collapse(n: int = 2, st: int = 2, seed: int = 0, max_pairs: int = 10**6) -> CheckResult:
    """Average ``g_z g_z'`` over every sign function and compare with binary-type equality."""
    t0 = time.perf_counter()
    params = {"n": n, "st": st, "max_pairs": max_pairs}
    if n > 4:
        raise CapExceeded(f"2^(2^{n}) sign functions are not enumerable (n <= 4)")
    N = 1 << n
    T = index_tuples(N, st)
    D = T.shape[0]
    if D * D <= max_pairs:
        rows, cols = np.arange(D), np.arange(D)
        sampled = False
    else:
        g = stream_for("bintype", params, seed).generator()
        side = int(math.isqrt(max_pairs))
        rows, cols = np.sort(g.choice(D, side, replace=False)), np.sort(g.choice(D, side, replace=False))
        sampled = True
    codes = np.arange(1 << N)[:, None]
    signs = 1 - 2 * ((codes >> np.arange(N)[None, :]) & 1)
    G = np.prod(signs[:, T], axis=2).astype(np.float64)  # (functions, tuples)
    avg = (G[:, rows].T @ G[:, cols]) / (1 << N)
    # reference: per-value multiplicity parity of each tuple
    parity = np.zeros((D, N), dtype=np.int8)
    for v in range(st):
        parity[np.arange(D), T[:, v]] ^= 1
    same = np.all(parity[rows][:, None, :] == parity[cols][None, :, :], axis=2)
    err = float(np.max(np.abs(avg - same)))
    crit = _Criteria()
    crit.identity("E_g[g_z g_z'] - [same binary type]", err, IDENTITY_TOL)
    measured = {"pairs": int(len(rows) * len(cols)), "functions": 1 << N, "max_abs_error": err,
                "ones": int(same.sum()), "sampled_pairs": sampled}
    return _finish("bintype", params, seed, measured, {"tol": IDENTITY_TOL}, crit, t0)


# -- flatness ------------------------------------------------------------------------


def verify_flatness(n: int = 14, s: int = 8, c: float = 8.0, trials: int = 100, seed: int = 0) -> CheckResult:
    """Flatten ``s`` basis states with a random phase and Hadamard; count threshold misses."""
    t0 = time.perf_counter()
    params = {"n": n, "s": s, "c": c, "trials": trials}
    states = [basis_state(n, j) for j in range(s)]
    rep = check_flattening(states, c, trials, stream_for("flatness", params, seed))
    summ = rep.summary()
    crit = _Criteria()
    bound = min(1.0, rep.bound)
    # one-sided 3-sigma allowance on the observed failure rate
    allowance = 3.0 * math.sqrt(bound * (1 - bound) / trials)
    crit.bound("failure_rate", rep.failure_rate, bound, tol=allowance)
    crit.bound("max_eps", summ["max_eps"], rep.threshold)
    crit.flag("min_eps >= 2^-n", summ["min_eps"] >= 2.0**-n * (1 - 1e-12), min_eps=summ["min_eps"])
    measured = {k: summ[k] for k in ("failures", "failure_rate", "max_eps", "min_eps", "mean_eps")}
    measured["per_trial_max_eps"] = rep.measured.max(axis=1)
    bound_d = {"failure_rate": rep.bound, "threshold": rep.threshold, "allowance": allowance}
    return _finish("flatness", params, seed, measured, bound_d, crit, t0)


# -- combinatorics -------------------------------------------------------------------


def verify_combinatorics(st_max: int = 6, seed: int = 0) -> CheckResult:
    t0 = time.perf_counter()
    params = {"st_max": st_max}
    crit = _Criteria()
    details = []
    for q in range(1, st_max + 1):
        for s in range(1, q + 1):
            if q % s:
                continue
            t = q // s
            members = pc.class_members(s, t, cap=st_max)
            sizes = {p: len(m) for p, m in members.items()}
            per_k: dict[int, int] = {}
            size_ok = True
            for p, size in sizes.items():
                per_k[p.k] = per_k.get(p.k, 0) + 1
                size_ok &= size <= pc.class_size_bound(t, s, p.k)
            count_ok = all(cnt <= pc.classes_per_k_bound(s, k) for k, cnt in per_k.items())
            cosets = pc.double_coset_partition(s, t, cap=st_max)
            pattern_sets = {frozenset(m) for m in members.values()}
            row = {"s": s, "t": t, "classes": len(sizes), "total": sum(sizes.values()),
                   "per_k": {str(k): v for k, v in sorted(per_k.items())}}
            crit.flag(f"({s},{t}) sizes sum to (st)!", row["total"] == math.factorial(q))
            crit.flag(f"({s},{t}) no k=1 class", 1 not in per_k)
            crit.flag(f"({s},{t}) classes per k <= s^2k", count_ok)
            crit.flag(f"({s},{t}) class size <= (t!)^s t^2k", size_ok)
            crit.flag(f"({s},{t}) double cosets == patterns", set(cosets) == pattern_sets)
            details.append(row)
    measured = {"shapes": len(details), "classes": sum(r["classes"] for r in details)}
    return _finish("combinatorics", params, seed, measured, {}, crit, t0, details)


# -- nu identities -------------------------------------------------------------------


def _distinct_representatives(pattern, members, want: int, rng) -> list[pc.OuterPermutation]:
    s, t = pattern.s, pattern.t
    rep = pc.sample_class_representative(pattern)
    reps = [rep]
    seen = {rep.map}
    if len(members) <= want:
        for m in members:
            if m not in seen:
                reps.append(pc.OuterPermutation(s, t, m))
                seen.add(m)
        return reps
    while len(reps) < want:
        cand = pc.random_block_preserving(s, t, rng) * rep * pc.random_block_preserving(s, t, rng)
        if cand.map not in seen:
            reps.append(cand)
            seen.add(cand.map)
    return reps


def verify_structural_identities(n: int = 2, s: int = 2, t: int = 1, family: str = "fourier",
                                 seed: int = 0, pi_samples: int = 1000, representatives: int = 3,
                                 pi_enum_cap: int = 40320) -> CheckResult:
    """z-independence of the per-tuple average, class invariance of nu, and the two nu forms."""
    t0 = time.perf_counter()
    params = {"n": n, "s": s, "t": t, "family": family, "pi_samples": pi_samples,
              "representatives": representatives}
    fam = make_family(family, n, s, seed)
    N, q = fam.N, s * t
    g = stream_for("structural", params, seed).generator()
    exhaustive = math.factorial(N) <= pi_enum_cap
    if exhaustive:
        all_inv = np.array([np.argsort(p) for p in itertools.permutations(range(N))])
    crit = _Criteria()
    details = []
    spread_max = rep_max = form_max = mc_z_max = 0.0
    n_unique = unique_tuples(N, q).shape[0]
    for pattern, members in sorted(pc.class_members(s, t).items(), key=lambda kv: (kv[0].k, kv[0].key)):
        reps = _distinct_representatives(pattern, members, representatives, g)
        forms = [nu_sigma_forms(fam, r) for r in reps]
        nu0 = forms[0].direct
        rep_dev = max(abs(f.direct - nu0) for f in forms)
        form_dev = max(abs(f.direct - f.crossing) for f in forms)
        rep_max, form_max = max(rep_max, rep_dev), max(form_max, form_dev)
        row = {"pattern": [list(r) for r in pattern.counts], "k": pattern.k, "nu": nu0,
               "representatives": len(reps), "rep_spread": rep_dev, "form_gap": form_dev}
        if exhaustive:
            z = nu_sigma_z_table(fam, reps[0], all_inv)
            spread = float(np.max(np.abs(z - z.mean())))
            spread_max = max(spread_max, spread)
            row["z_spread"] = spread
            row["z_mean_vs_nu"] = abs(z.mean() - nu0)
            crit.identity(f"{pattern.key} z-average equals nu", row["z_mean_vs_nu"], REP_AGREE_TOL)
        # Monte Carlo pi at one fixed tuple, judged by its own standard error
        inv = np.array([g.permutation(N) for _ in range(pi_samples)])
        vals = _per_pi_values(fam, reps[0], inv)
        est = vals.mean()
        se = math.hypot(vals.real.std(ddof=1), vals.imag.std(ddof=1)) / math.sqrt(pi_samples)
        gap = abs(est - nu0)
        # constant integrands give a zero spread; allow rounding relative to |nu|
        allowed = 5.0 * se + IDENTITY_TOL * abs(nu0)
        crit.bound(f"{pattern.key} sampled-pi |estimate - nu|", gap, allowed)
        zscore = gap / se if se > 0 else 0.0
        mc_z_max = max(mc_z_max, zscore)
        row.update({"sampled_pi_estimate": est, "sampled_pi_se": se, "sampled_pi_z": zscore})
        details.append(row)
    if exhaustive:
        crit.identity("z-independence spread", spread_max, REP_AGREE_TOL)
    crit.identity("class representative agreement", rep_max, REP_AGREE_TOL)
    crit.identity("crossing vs direct form", form_max, FORM_AGREE_TOL)
    measured = {"z_spread": spread_max if exhaustive else None, "rep_spread": rep_max,
                "form_gap": form_max, "sampled_pi_max_z": mc_z_max, "unique_tuples": n_unique,
                "pi_average": "exhaustive" if exhaustive else "sampled"}
    bound = {"z_spread": REP_AGREE_TOL, "rep_spread": REP_AGREE_TOL, "form_gap": FORM_AGREE_TOL,
             "sampled_pi_max_z": 5.0}
    return _finish("structural", params, seed, measured, bound, crit, t0, details)


def _per_pi_values(fam, sigma, inverse_pis, z_index: int = 0) -> np.ndarray:
    """Integrand of ``nu_{sigma,z}`` at one fixed unique tuple, one value per ``pi``."""
    q = sigma.size
    z = unique_tuples(fam.N, q)[z_index]
    X = inverse_pis[:, z]
    blocks = np.repeat(np.arange(sigma.s), sigma.t)
    val = np.ones(X.shape[0], dtype=np.complex128)
    for v in range(q):
        val *= fam.vectors[blocks[v], X[:, v]] * fam.vectors[blocks[v], X[:, sigma.map[v]]].conj()
    return val


# -- norm, count and decay bounds ------------------------------------------------------


def nu_regime(N: int, s: int, t: int, eps: float) -> dict:
    gamma = eps * eps * N * (s * t) ** 2
    return {"gamma": gamma, "nu_in_regime": gamma < 0.25, "tail_value": t * t * s**4 * gamma,
            "tail_in_regime": t * t * s**4 * gamma < 0.25}


def verify_norm_and_count_bounds(n: int = 2, s: int = 2, t: int = 1, family: str = "fourier",
                                 seed: int = 0, dense_svd: str = "auto") -> CheckResult:
    """Per class: trace norm of ``A_p``, class counts per k, and ``|nu_p|`` against their bounds.

    ``dense_svd``: ``"always"`` requires a dense SVD, ``"never"`` uses only the
    group-algebra formula, ``"auto"`` does both when the dimension fits.
    """
    t0 = time.perf_counter()
    params = {"n": n, "s": s, "t": t, "family": family, "dense_svd": dense_svd}
    fam = make_family(family, n, s, seed)
    N, q = fam.N, s * t
    eps = float(fam.eps)
    reg = nu_regime(N, s, t, eps)
    dim = N**q
    use_dense = dense_svd == "always" or (dense_svd == "auto" and dim <= DENSE_SVD_CAP)
    if dense_svd == "always" and dim > DENSE_SVD_CAP:
        raise CapExceeded(f"dense SVD at dim {dim} exceeds cap {DENSE_SVD_CAP}")
    crit = _Criteria()
    details = []
    per_k: dict[int, int] = {}
    tail = 0.0
    max_visits = 0
    worst = {"norm_ratio": 0.0, "nu_ratio": 0.0}
    for pattern, members in sorted(pc.class_members(s, t).items(), key=lambda kv: (kv[0].k, kv[0].key)):
        k = pattern.k
        per_k[k] = per_k.get(k, 0) + 1
        op = build_A_p(n, pattern, s, t, members)
        row = {"pattern": [list(r) for r in pattern.counts], "k": k, "class_size": len(members)}
        norm_bound = a_p_norm_bound(N, s, t, k)
        if q <= 6:
            row["norm_group"] = op.trace_norm_exact()
            norm = row["norm_group"]
        else:
            norm = rank_one_partition_bound(N, s, t, len(members))
            row["norm_upper"] = norm
        if use_dense:
            row["norm_svd"] = trace_norm(op.to_dense(cap=dim), cap=dim)
            norm = row["norm_svd"]
            if "norm_group" in row:
                crit.bound(f"{pattern.key} group norm matches SVD",
                           abs(row["norm_group"] - row["norm_svd"]) / max(row["norm_svd"], 1.0), SVD_REL_TOL)
        row["norm_bound"] = norm_bound
        crit.bound(f"{pattern.key} ||A_p||_1", norm / norm_bound, 1.0, tol=SVD_REL_TOL)
        worst["norm_ratio"] = max(worst["norm_ratio"], norm / norm_bound)
        res = nu_sigma_forms(fam, pc.sample_class_representative(pattern))
        max_visits = max(max_visits, res.visits)
        row.update({"nu": res.direct, "visits": res.visits, "nu_bound": nu_bound(N, s, t, k, eps)})
        crit.identity(f"{pattern.key} nu forms agree", abs(res.direct - res.crossing), FORM_AGREE_TOL)
        crit.bound(f"{pattern.key} |nu_p|", abs(res.direct), row["nu_bound"],
                   tol=1e-12 * row["nu_bound"], in_regime=reg["nu_in_regime"])
        worst["nu_ratio"] = max(worst["nu_ratio"], abs(res.direct) / row["nu_bound"])
        if k > 0:
            tail += abs(res.direct) * norm
        details.append(row)
    for k, cnt in per_k.items():
        crit.bound(f"classes at k={k}", cnt, pc.classes_per_k_bound(s, k))
    tail_bound = 2 * t**4 * s**6 * eps * eps * N
    crit.bound("sum_{k>0} |nu_p| ||A_p||_1", tail, tail_bound, in_regime=reg["tail_in_regime"])
    measured = {"classes": sum(per_k.values()), "per_k": {str(k): v for k, v in sorted(per_k.items())},
                "eps": eps, "tail_sum": tail, "max_visits": max_visits, **worst, **reg,
                "norm_method": "svd" if use_dense else ("group" if q <= 6 else "rank-one bound")}
    bound = {"tail_sum": tail_bound, "norm_ratio": 1.0, "nu_ratio": 1.0}
    return _finish("bounds", params, seed, measured, bound, crit, t0, details)


# -- closeness chain -------------------------------------------------------------------


def _pi_mode_for(N: int, requested: str) -> str:
    if requested != "auto":
        return requested
    return "exhaustive" if math.factorial(N) <= 40320 and N <= 4 else "orbit"


def verify_closeness_chain(n: int = 2, s: int = 2, t: int = 1, family: str = "fourier", seed: int = 0,
                           pi_mode: str = "auto", g_mode: str = "exhaustive",
                           pi_samples: int = 1000) -> CheckResult:
    """Distances from the averaged output to its unique restriction, to rho_uni, and to the twirl."""
    t0 = time.perf_counter()
    params = {"n": n, "s": s, "t": t, "family": family, "pi_mode": pi_mode, "g_mode": g_mode,
              "pi_samples": pi_samples}
    fam = make_family(family, n, s, seed)
    N, q = fam.N, s * t
    eps = float(fam.eps)
    mode = _pi_mode_for(N, pi_mode)
    g_eff = g_mode if N <= 4 else "mask"
    rng = stream_for("closeness", params, seed).generator()
    out = exact_average_output(fam.states(), t, mode, pi_samples, rng, g_mode=g_eff)
    rho = out.rho
    crit = _Criteria()
    reg = nu_regime(N, s, t, eps)
    u = uniqueness_projector_diag(N, q)
    cross = float(np.max(np.abs(rho[np.ix_(u, ~u)]))) if (~u).any() else 0.0
    crit.flag("Pi* cross blocks vanish exactly", cross == 0.0, max_abs=cross)
    rho_star, tr_unique = unique_restriction(rho, N, q)
    d1 = trace_norm(rho - rho_star, cap=N**q)
    crit.bound("||rho - rho*||_1", d1, q * q * eps)
    table = nu_table(fam, t)
    table_star = assemble_rho_star(fam, t, dense=True, cap=N**q, table=table)
    nu0 = next(row["nu"] for row in table if row["k"] == 0)
    c1 = 1.0 / (falling_factorial(N, q) * nu0.real)
    star_gap = float(np.max(np.abs(table_star - rho_star)))
    if mode == "sampled":
        se_max = float(np.max(np.abs(out.stderr)))
        crit.bound("rho* from nu vs restriction (sampled, 5 se)", star_gap, 5 * se_max + 1e-10)
    else:
        crit.identity("rho* from nu vs restriction", star_gap, 1e-10)
    rho_uni = build_rho_uni(fam.n, s, t, dense=True, cap=N**q)
    d2 = trace_norm(table_star - rho_uni, cap=N**q)
    # with the trace normalization, c1 nu_{p0} A_{p0} is rho_uni itself
    d3 = trace_norm(c1 * nu0 * build_A_p(fam.n, pc.BlockEdgePattern.from_offdiagonal(s, t, np.zeros((s, s))),
                                         s, t).to_dense(cap=N**q) - rho_uni, cap=N**q)
    td_uni = trace_distance(rho, rho_uni, cap=N**q)
    tail_b = 2 * eps * eps * N * s**6 * t**4
    crit.bound("||rho* - c1 nu0 A_p0||_1", d2, c1 * tail_b, in_regime=reg["tail_in_regime"])
    crit.identity("c1 nu0 A_p0 = rho_uni", d3, 1e-10)
    crit.bound("TD(rho, rho_uni)", td_uni, 0.5 * (q * q * eps + c1 * tail_b), in_regime=reg["tail_in_regime"])
    measured = {"eps": eps, "pi_mode": mode, "g_mode": g_eff, "cross_block_max": cross,
                "trace_unique": tr_unique, "rho_minus_rho_star": d1, "rho_star_gap": star_gap,
                "rho_star_minus_leading": d2, "leading_minus_rho_uni": d3, "td_rho_uni": td_uni,
                "c1": c1, "nu_identity": nu0, **reg}
    bound = {"rho_minus_rho_star": q * q * eps, "rho_star_minus_leading": c1 * tail_b,
             "td_rho_uni": 0.5 * (q * q * eps + c1 * tail_b)}
    if N >= q and N**q <= 4096:
        ctx = TwirlContext(q, N, cap=N**q)
        psi = product_input(list(fam.vectors), t)
        rho_in = np.outer(psi, psi.conj())
        tw_in = exact_twirl(rho_in, ctx)
        defect_uni = almost_invariance_defect(rho_uni, ctx)
        defect_rho = almost_invariance_defect(rho, ctx)
        td_channel = trace_distance(rho, tw_in, cap=N**q)
        crit.bound("TD(Phi(rho_in), twirl rho_in) <= defect(Phi(rho_in))", td_channel, defect_rho, tol=1e-9)
        measured.update({"defect_rho_uni": defect_uni, "defect_rho": defect_rho, "td_channel": td_channel})
    if out.stderr is not None:
        # Lipschitz error bar on the trace distance from the entrywise errors
        err = 0.5 * math.sqrt(N**q) * float(np.sqrt(np.sum(np.abs(out.stderr) ** 2)))
        measured["td_error_bar"] = err
        if err > 0.1 * td_uni:
            crit.inconclusive = True
    return _finish("closeness", params, seed, measured, bound, crit, t0)


def verify_closeness_trend(ns=(2, 3), s: int = 2, t: int = 1, family: str = "fourier",
                           seed: int = 0) -> CheckResult:
    """TD(rho, rho_uni) and TD(rho_uni, twirl rho_uni) must shrink as N grows."""
    t0 = time.perf_counter()
    params = {"ns": list(ns), "s": s, "t": t, "family": family}
    crit = _Criteria()
    rows = []
    for n in ns:
        fam = make_family(family, n, s, seed)
        N, q = fam.N, s * t
        rho = exact_average_output(fam.states(), t, "orbit").rho
        rho_uni = build_rho_uni(n, s, t, dense=True, cap=N**q)
        row = {"n": n, "N": N, "td_rho_uni": trace_distance(rho, rho_uni, cap=N**q)}
        if N >= q:
            row["defect_rho_uni"] = almost_invariance_defect(rho_uni, TwirlContext(q, N, cap=N**q))
        rows.append(row)
    for key in ("td_rho_uni", "defect_rho_uni"):
        vals = [r[key] for r in rows if key in r]
        crit.flag(f"{key} decreasing in N", all(b < a for a, b in zip(vals, vals[1:])), values=vals)
    measured = {"rows": rows}
    return _finish("closeness_trend", params, seed, measured, {}, crit, t0)


def verify_mc_agreement(n: int = 2, s: int = 2, t: int = 1, family: str = "fourier", samples: int = 10_000,
                        seed: int = 0, z_max: float = 3.0) -> CheckResult:
    """Plain Monte Carlo over (g, pi) against the exhaustive average, judged in aggregate."""
    t0 = time.perf_counter()
    params = {"n": n, "s": s, "t": t, "family": family, "samples": samples}
    fam = make_family(family, n, s, seed)
    exact = exact_average_output(fam.states(), t, "exhaustive" if fam.N <= 8 else "orbit").rho
    rng = stream_for("mc_agreement", params, seed).generator()
    mc = mc_average_output(fam.states(), t, samples, rng)
    diff = mc.rho - exact
    se2 = mc.stderr.real**2 + mc.stderr.imag**2
    agg = float(np.linalg.norm(diff) / math.sqrt(se2.sum()))
    re = np.abs(diff.real) / np.where(mc.stderr.real > 0, mc.stderr.real, np.inf)
    im = np.abs(diff.imag) / np.where(mc.stderr.imag > 0, mc.stderr.imag, np.inf)
    # entries with zero spread must match exactly
    zero_spread = float(max(np.max(np.abs(diff.real[mc.stderr.real == 0]), initial=0.0),
                            np.max(np.abs(diff.imag[mc.stderr.imag == 0]), initial=0.0)))
    crit = _Criteria()
    crit.bound("||MC - exact||_F / sqrt(sum se^2)", agg, z_max)
    crit.identity("zero-variance entries exact", zero_spread, 1e-12)
    within = float(np.mean(np.concatenate([re.ravel(), im.ravel()]) <= z_max))
    measured = {"aggregate_z": agg, "fraction_within_3se": within, "max_entry_z": float(max(re.max(), im.max())),
                "zero_spread_gap": zero_spread}
    return _finish("mc_agreement", params, seed, measured, {"aggregate_z": z_max}, crit, t0)


# -- Haar oracle --------------------------------------------------------------------------


def _random_density(D: int, g: np.random.Generator) -> np.ndarray:
    A = g.normal(size=(D, D)) + 1j * g.normal(size=(D, D))
    rho = A @ A.conj().T
    return rho / np.trace(rho).real


def verify_haar_oracle(N: int = 4, q: int = 2, samples: int = 10_000, seed: int = 0) -> CheckResult:
    t0 = time.perf_counter()
    params = {"N": N, "q": q, "samples": samples}
    g = stream_for("haar_oracle", params, seed).generator()
    ctx = TwirlContext(q, N)
    X = _random_density(N**q, g)
    T1 = exact_twirl(X, ctx)
    crit = _Criteria()
    crit.identity("idempotence", float(np.max(np.abs(exact_twirl(T1, ctx) - T1))), 1e-10)
    U = sample_haar_unitary(N, g)
    V = U
    for _ in range(q - 1):
        V = np.kron(U, V)
    crit.identity("commutes with U^(x)q", float(np.max(np.abs(V @ T1 - T1 @ V))), 1e-10)
    perm_gap = max(float(np.max(np.abs(P @ T1 - T1 @ P)))
                   for P in (permutation_operator(p, N) for p in itertools.permutations(range(q))))
    if q == 2:
        # the span of slot permutations is commutative only for q <= 2
        crit.identity("commutes with every P_sigma", perm_gap, 1e-10)
    crit.identity("trace preserved", abs(np.trace(T1) - np.trace(X)), 1e-10)
    mean, se = mc_twirl(X, q, N, samples, g)
    diff = mean - T1
    zr = np.abs(diff.real) / np.maximum(se.real, 1e-12)
    zi = np.abs(diff.imag) / np.maximum(se.imag, 1e-12)
    zmax = float(max(zr.max(), zi.max()))
    crit.bound("MC twirl entrywise |diff|/se", zmax, 5.0)
    ctx1 = TwirlContext(1, N)
    Y = _random_density(N, g)
    crit.identity("q=1 twirl is I/N", float(np.max(np.abs(exact_twirl(Y, ctx1) - np.eye(N) / N))), 1e-10)
    measured = {"mc_max_z": zmax, "perm_commutator": perm_gap}
    return _finish("haar_oracle", params, seed, measured, {"mc_max_z": 5.0}, crit, t0)


def verify_almost_invariance(ns=(2, 3, 4, 5), s: int = 2, t: int = 1, seed: int = 0,
                             stable_ns=(3, 4, 5), factor: float = 2.0) -> CheckResult:
    """Exact TD(rho_uni, twirl rho_uni) across n, with the fitted constant in ``C s^2 t^2 / N``."""
    t0 = time.perf_counter()
    params = {"ns": list(ns), "s": s, "t": t, "stable_ns": list(stable_ns), "factor": factor}
    q = s * t
    rows = []
    for n in ns:
        N = 1 << n
        rho_uni = build_rho_uni(n, s, t, dense=True, cap=max(4096, N**q))
        d = almost_invariance_defect(rho_uni, TwirlContext(q, N, cap=max(4096, N**q)))
        rows.append({"n": n, "N": N, "defect": d, "C": d * N / (s * s * t * t)})
    crit = _Criteria()
    vals = [r["defect"] for r in rows]
    crit.flag("defect decreasing in N", all(b < a for a, b in zip(vals, vals[1:])), values=vals)
    Cs = [r["C"] for r in rows if r["n"] in stable_ns]
    ratio = max(Cs) / min(Cs) if Cs else float("nan")
    crit.bound("max C / min C", ratio, factor)
    measured = {"rows": rows, "C_ratio": ratio, "C_fit": max(Cs)}
    return _finish("almost_invariance", params, seed, measured, {"C_ratio": factor}, crit, t0)


def verify_channel_almost_invariance(n: int = 2, s: int = 2, t: int = 1, family: str = "fourier",
                                     seed: int = 0) -> CheckResult:
    """TD(Phi(rho_in), twirl rho_in) <= TD(Phi(rho_in), twirl Phi(rho_in)) for two mixed-unitary channels."""
    t0 = time.perf_counter()
    params = {"n": n, "s": s, "t": t, "family": family}
    fam = make_family(family, n, s, seed)
    N, q = fam.N, s * t
    ctx = TwirlContext(q, N)
    crit = _Criteria()
    measured = {}
    inputs = {
        "phase-permutation on family": (list(fam.vectors), False),
        "full construction on basis states": ([basis_state(fam.n, j).amps for j in range(s)], True),
    }
    for label, (vecs, include_f) in inputs.items():
        psi = product_input(vecs, t)
        rho_in = np.outer(psi, psi.conj())
        phi = average_channel(rho_in, N, q, "orbit", include_f=include_f).rho
        lhs = trace_distance(phi, exact_twirl(rho_in, ctx), cap=N**q)
        rhs = almost_invariance_defect(phi, ctx)
        crit.bound(label, lhs, rhs, tol=1e-9)
        measured[label] = {"td_to_input_twirl": lhs, "defect": rhs}
    return _finish("channel", params, seed, measured, {"tol": 1e-9}, crit, t0)


def verify_mixture_linearity(n: int = 2, s: int = 2, t: int = 1, weights=(0.3, 0.7),
                             seed: int = 0) -> CheckResult:
    """A two-component input mixture: the channel acts linearly and the defect combines convexly."""
    t0 = time.perf_counter()
    params = {"n": n, "s": s, "t": t, "weights": list(weights)}
    fams = [make_family("fourier", n, s, seed), make_family("flattened", n, s, seed)]
    N, q = fams[0].N, s * t
    ctx = TwirlContext(q, N)
    parts, defects = [], []
    mix_in = np.zeros((N**q, N**q), dtype=np.complex128)
    for w, fam in zip(weights, fams):
        psi = product_input(list(fam.vectors), t)
        rho_a = np.outer(psi, psi.conj())
        mix_in += w * rho_a
        out = average_channel(rho_a, N, q, "orbit").rho
        parts.append(w * out)
        defects.append(almost_invariance_defect(out, ctx))
    combined = sum(parts)
    direct = average_channel(mix_in, N, q, "orbit").rho
    crit = _Criteria()
    lin_gap = float(np.max(np.abs(direct - combined)))
    crit.identity("channel(mixture) = mixture of channel outputs", lin_gap, 1e-12)
    mix_defect = almost_invariance_defect(direct, ctx)
    convex = float(np.dot(weights, defects))
    crit.bound("defect(mixture) <= sum p_a defect_a", mix_defect, convex, tol=1e-12)
    measured = {"linearity_gap": lin_gap, "mixture_defect": mix_defect, "component_defects": defects}
    return _finish("mixture", params, seed, measured, {"mixture_defect": convex}, crit, t0)


# -- distinguisher ------------------------------------------------------------------------


def _sample_rows(probs: np.ndarray, t: int, g: np.random.Generator) -> np.ndarray:
    """``t`` outcomes from each row of ``probs`` (shape ``(rows, N)``) by inverse CDF."""
    cdf = np.cumsum(probs, axis=-1)
    u = g.random(probs.shape[:-1] + (t,)) * cdf[..., -1:]
    idx = (cdf[..., None, :] <= u[..., :, None]).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def _run_backing(n: int, s: int, t: int, instances: int, mode: str, seed: int, inputs: np.ndarray) -> np.ndarray:
    """Computational-basis outcomes, shape ``(instances, s, t)``: one shot per copy.

    ``P_pi D_g`` maps basis states to basis states up to a phase, so the
    outcome is ``pi(y)`` with ``y`` drawn from ``|H U_f psi|^2``; only the
    sampled points of ``pi`` are evaluated.
    """
    g = SeededStream(seed, 0x3EA5 if mode == "keyed" else 0x3EA6).generator()
    out = np.empty((instances, s, t), dtype=np.int64)
    work = np.empty_like(inputs)
    for i in range(instances):
        f, _, pi = construction_components(n, mode, seed, i)
        np.multiply(inputs, f.table()[None, :], out=work)
        for j in range(s):
            hadamard_inplace(work[j])
        y = _sample_rows(work.real**2 + work.imag**2, t, g)
        out[i] = pi(y.ravel()).reshape(s, t)
    return out


def _histogram(outcomes: np.ndarray, N: int) -> np.ndarray:
    I, s, t = outcomes.shape
    cells = (np.arange(s)[None, :, None] * N + outcomes).ravel()
    return np.bincount(cells, minlength=s * N).astype(np.float64)


def _tv(h1: np.ndarray, h2: np.ndarray) -> float:
    return 0.5 * float(np.abs(h1 / h1.sum() - h2 / h2.sum()).sum())


def _haar_outcomes(N: int, s: int, t: int, instances: int, g: np.random.Generator) -> np.ndarray:
    """Single-copy outcomes of ``s`` orthonormal Haar columns, by Gram-Schmidt on Gaussian vectors."""
    out = np.empty((instances, s, t), dtype=np.int64)
    chunk = max(1, (1 << 22) // (N * max(s, t)))
    for c0 in range(0, instances, chunk):
        m = min(chunk, instances - c0)
        V = g.standard_normal((m, s, N, 2), dtype=np.float32).astype(np.float64)
        Q = V[..., 0] + 1j * V[..., 1]
        for j in range(s):
            for k in range(j):
                Q[:, j] -= np.einsum("mi,mi->m", Q[:, k].conj(), Q[:, j])[:, None] * Q[:, k]
            Q[:, j] /= np.linalg.norm(Q[:, j], axis=1)[:, None]
        out[c0:c0 + m] = _sample_rows(Q.real**2 + Q.imag**2, t, g)
    return out


def distinguisher_experiment(n: int = 10, s: int = 4, t: int = 1, shots: int = 100_000, mode: str = "keyed",
                             seed: int = 0, null_reps: int = 200, haar_reps: int = 200,
                             replay_instances: int = 500) -> CheckResult:
    """Histogram test between keyed and table-random backings, with permutation and Haar baselines.

    Each instance draws a fresh construction and measures every copy of
    every input once. ``mode`` is the backing under test; the other
    backing is the comparison run.
    """
    if n > 20:
        raise CapExceeded("distinguisher supports n <= 20")
    if shots > 10**6:
        raise CapExceeded("distinguisher supports at most 10^6 shots")
    if mode not in ("keyed", "random"):
        raise ValueError(f"unknown backing mode {mode!r}")
    t0 = time.perf_counter()
    params = {"n": n, "s": s, "t": t, "shots": shots, "mode": mode, "null_reps": null_reps,
              "haar_reps": haar_reps}
    N = 1 << n
    instances = shots // (s * t)
    if instances < 2:
        raise ValueError("need at least two instances")
    inputs = np.zeros((s, N), dtype=np.complex128)
    inputs[np.arange(s), np.arange(s)] = 1.0
    other = "random" if mode == "keyed" else "keyed"
    subj = _run_backing(n, s, t, instances, mode, seed, inputs)
    ref = _run_backing(n, s, t, instances, other, seed, inputs)
    h_subj, h_ref = _histogram(subj, N), _histogram(ref, N)
    tv_obs = _tv(h_subj, h_ref)
    g = stream_for("distinguish", params, seed).generator()
    pooled = np.concatenate([subj, ref])
    null = np.empty(null_reps)
    for b in range(null_reps):
        perm = g.permutation(2 * instances)
        null[b] = _tv(_histogram(pooled[perm[:instances]], N), _histogram(pooled[perm[instances:]], N))
    boot = np.empty(null_reps)
    for b in range(null_reps):
        a = g.integers(0, instances, instances)
        c = g.integers(0, instances, instances)
        boot[b] = _tv(_histogram(subj[a], N), _histogram(ref[c], N))
    # basic bootstrap interval; resampling inflates TV, so percentiles alone are biased upward
    ci = [2 * tv_obs - float(np.quantile(boot, 0.975)), 2 * tv_obs - float(np.quantile(boot, 0.025))]
    half = instances // 2
    split_half = _tv(_histogram(subj[:half], N), _histogram(subj[half:2 * half], N))
    uniform = np.ones(s * N)
    tv_uniform = _tv(h_subj, uniform)
    if s * t <= TWIRL_Q_CAP:
        law = HaarOutcomeLaw(tuple(np.repeat(np.arange(s), t)), N)
        # law samples are slot-ordered (block j, copy i) -> reshape to (instances, s, t)
        draw = lambda: law.sample(instances, g).reshape(instances, s, t)  # noqa: E731
        haar_method = "exact outcome law"
    else:
        draw = lambda: _haar_outcomes(N, s, t, instances, g)  # noqa: E731
        haar_method = "gram-schmidt frames"
    haar = np.array([_tv(_histogram(draw(), N), uniform) for _ in range(haar_reps)])
    replay_n = min(replay_instances, instances)
    replay = _run_backing(n, s, t, replay_n, mode, seed, inputs)
    crit = _Criteria()
    null_mean, null_std = float(null.mean()), float(null.std(ddof=1))
    haar_mean, haar_std = float(haar.mean()), float(haar.std(ddof=1))
    crit.bound("|TV(keyed, random) - null mean| / null sd", abs(tv_obs - null_mean) / null_std, 3.0)
    crit.bound("|TV(subject, uniform) - Haar mean| / Haar sd", abs(tv_uniform - haar_mean) / haar_std, 3.0)
    crit.flag("deterministic replay", bool(np.array_equal(replay, subj[:replay_n])), instances=replay_n)
    measured = {
        "instances": instances, "tv_backings": tv_obs,
        "tv_backings_ci95": ci,
        "null_mean": null_mean, "null_sd": null_std, "split_half_tv": split_half,
        "tv_uniform": tv_uniform, "haar_method": haar_method, "haar_tv_mean": haar_mean, "haar_tv_sd": haar_std,
        "histogram_digest": hashlib.blake2b(h_subj.tobytes(), digest_size=16).hexdigest(),
    }
    return _finish("distinguish", params, seed, measured, {"z": 3.0}, crit, t0)


# -- performance ---------------------------------------------------------------------------


def verify_hadamard_performance(n: int = 24, budget_s: float = 2.0, repeats: int = 3, seed: int = 0) -> CheckResult:
    """Best of ``repeats`` timed transforms, so one page-fault storm does not decide the outcome."""
    t0 = time.perf_counter()
    params = {"n": n, "budget_s": budget_s, "repeats": repeats}
    apply_hadamard_all(basis_state(4, 0))  # compile outside the timed region
    st = random_state(n, stream_for("performance", params, seed).generator())
    times = []
    for _ in range(max(1, repeats)):
        t1 = time.perf_counter()
        out = apply_hadamard_all(st)
        times.append(time.perf_counter() - t1)
        norm_err = abs(out.norm() - 1.0)
        del out
    elapsed = min(times)
    crit = _Criteria()
    crit.bound("hadamard seconds", elapsed, budget_s)
    crit.identity("norm preserved", norm_err, 1e-9)
    measured = {"seconds": elapsed}
    res = _finish("performance", params, seed, measured, {"seconds": budget_s}, crit, t0)
    res.wallclock = ("seconds",)
    res.details = [dict(d, wallclock=True) if d["name"] == "hadamard seconds" else d for d in res.details]
    return res


# -- registry and suites ------------------------------------------------------------------

CHECKS: dict[str, Callable[..., CheckResult]] = {
    "bintype": verify_bintype_collapse,
    "flatness": verify_flatness,
    "combinatorics": verify_combinatorics,
    "structural": verify_structural_identities,
    "bounds": verify_norm_and_count_bounds,
    "closeness": verify_closeness_chain,
    "closeness_trend": verify_closeness_trend,
    "mc_agreement": verify_mc_agreement,
    "haar_oracle": verify_haar_oracle,
    "almost_invariance": verify_almost_invariance,
    "channel": verify_channel_almost_invariance,
    "mixture": verify_mixture_linearity,
    "distinguish": distinguisher_experiment,
    "performance": verify_hadamard_performance,
}

SUITES: dict[str, list[tuple[str, dict]]] = {
    "default": [
        ("bintype", {"n": 2, "st": 2}),
        ("bintype", {"n": 3, "st": 2}),
        ("flatness", {"n": 14, "s": 8, "c": 8.0, "trials": 100}),
        ("combinatorics", {"st_max": 6}),
        ("bounds", {"n": 2, "s": 2, "t": 1, "dense_svd": "always"}),
        ("bounds", {"n": 2, "s": 2, "t": 2, "dense_svd": "always"}),
        ("structural", {"n": 2, "s": 2, "t": 1}),
        ("structural", {"n": 2, "s": 2, "t": 2}),
        ("structural", {"n": 3, "s": 2, "t": 1}),
        ("structural", {"n": 3, "s": 3, "t": 1}),
        ("structural", {"n": 3, "s": 1, "t": 3}),
        ("bounds", {"n": 7, "s": 2, "t": 1}),
        ("bounds", {"n": 7, "s": 3, "t": 1}),
        ("bounds", {"n": 9, "s": 2, "t": 1}),
        ("closeness", {"n": 2, "s": 2, "t": 1}),
        ("closeness", {"n": 3, "s": 2, "t": 1}),
        ("closeness_trend", {"ns": [2, 3, 4, 5], "s": 2, "t": 1}),
        ("closeness_trend", {"ns": [2, 3], "s": 2, "t": 2}),
        ("mc_agreement", {"n": 2, "s": 2, "t": 1, "samples": 10_000}),
        ("haar_oracle", {"N": 4, "q": 2, "samples": 10_000}),
        ("almost_invariance", {"ns": [2, 3, 4, 5], "s": 2, "t": 1}),
        ("channel", {"n": 2, "s": 2, "t": 1}),
        ("mixture", {"n": 2, "s": 2, "t": 1}),
        ("distinguish", {"n": 10, "s": 4, "t": 1, "shots": 100_000, "mode": "keyed"}),
        ("performance", {"n": 24}),
    ],
    "quick": [
        ("bintype", {"n": 2, "st": 2}),
        ("flatness", {"n": 10, "s": 4, "c": 8.0, "trials": 20}),
        ("combinatorics", {"st_max": 4}),
        ("bounds", {"n": 2, "s": 2, "t": 1}),
        ("structural", {"n": 2, "s": 2, "t": 1}),
        ("closeness", {"n": 2, "s": 2, "t": 1}),
        ("haar_oracle", {"N": 3, "q": 2, "samples": 500}),
        ("almost_invariance", {"ns": [2, 3, 4], "s": 2, "t": 1, "stable_ns": [3, 4]}),
        ("channel", {"n": 2, "s": 2, "t": 1}),
        ("distinguish", {"n": 6, "s": 2, "t": 1, "shots": 4000, "null_reps": 50, "haar_reps": 10}),
    ],
}


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def run_check(name: str, params: dict, seed: int) -> CheckResult:
    """Run one registered check; cap and parameter violations become an ``error`` row."""
    if name not in CHECKS:
        raise KeyError(f"unknown check {name!r}")
    t0 = time.perf_counter()
    try:
        return CHECKS[name](**params, seed=seed)
    except (CapExceeded, ValueError) as exc:
        return CheckResult(name, dict(params), seed, {"error": f"{type(exc).__name__}: {exc}"}, {}, "n/a",
                           "error", (time.perf_counter() - t0) * 1e3)


def run_jobs(jobs: list[tuple[str, dict]], seed: int, threads: int | None = None) -> list[CheckResult]:
    """Run independent checks, concurrently when more than one thread is allowed; order is preserved."""
    threads = thread_count() if threads is None else threads
    if threads <= 1:
        return [run_check(name, params, seed) for name, params in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(run_check, name, params, seed) for name, params in jobs]
        return [f.result() for f in futures]


def run_suite(name: str, seed: int, threads: int | None = None) -> list[CheckResult]:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}")
    return run_jobs(SUITES[name], seed, threads)
