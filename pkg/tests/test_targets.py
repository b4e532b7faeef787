import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from prulab.permcomb import (
    BlockEdgePattern,
    OuterPermutation,
    all_permutations,
    block_edge_pattern,
    class_members,
    enumerate_classes,
    random_block_preserving,
    random_permutation,
)
from prulab.qcore import CapExceeded, falling_factorial, index_tuples, trace_norm, uniqueness_projector_diag
from prulab.targets import (
    ConventionError,
    OrthogonalFlatFamily,
    a_p_norm_bound,
    assemble_rho_star,
    average_channel,
    bintype_codes,
    build_A_p,
    build_rho_uni,
    exact_average_output,
    fourier_flat_family,
    g_average_exhaustive,
    mc_average_output,
    nu_bound,
    nu_class,
    nu_sigma,
    nu_sigma_forms,
    nu_sigma_z_table,
    nu_table,
    pi_average_exhaustive,
    pi_average_orbit,
    product_input,
    rank_one_partition_bound,
    unique_restriction,
)

# -- independent brute-force oracles ----------------------------------------------


def nu_reference(vectors, s, t, m):
    """Plain loop over unique tuples; no shared code with the library."""
    N = vectors.shape[1]
    q = s * t
    total, count = 0j, 0
    for x in itertools.permutations(range(N), q):
        term = 1 + 0j
        for v in range(q):
            j = v // t
            term *= vectors[j, x[v]] * np.conj(vectors[j, x[m[v]]])
        total += term
        count += 1
    return total / count


def rho_uni_reference(n, s, t):
    N, q = 1 << n, s * t
    D = N**q
    out = np.zeros((D, D))
    preserving = [p for p in itertools.permutations(range(q)) if all(p[v] // t == v // t for v in range(q))]
    for z in itertools.permutations(range(N), q):
        r = sum(z[v] * N**v for v in range(q))
        for p in preserving:
            c = sum(z[p[v]] * N**v for v in range(q))
            out[r, c] += 1
    return out / math.perm(N, q)


def random_orthonormal_family(n, s, g):
    N = 1 << n
    Q, _ = np.linalg.qr(g.normal(size=(N, s)) + 1j * g.normal(size=(N, s)))
    return OrthogonalFlatFamily(Q.T.copy())


# -- families ------------------------------------------------------------------------


def test_fourier_family_examples():
    fam = fourier_flat_family(4, 5)
    assert np.allclose(fam.vectors[0], 0.25, atol=1e-15)
    G = fam.inner_products()
    assert np.max(np.abs(G - np.eye(5))) < 1e-13
    assert np.allclose(fam.flatness(), 2**-4, rtol=1e-12)
    assert fam.eps == 1 / 16 and fam.n == 4 and fam.s == 5
    with pytest.raises(ValueError):
        fourier_flat_family(2, 5)


def test_family_validation():
    with pytest.raises(ValueError):
        OrthogonalFlatFamily(np.array([[1, 0], [1, 0]], dtype=float))
    with pytest.raises(ValueError):
        OrthogonalFlatFamily(np.array([[1.0, 0.0, 0.0]]))
    with pytest.raises(ValueError):
        OrthogonalFlatFamily(np.array([[1.0, 0.0]]), eps=0.5)
    fam = OrthogonalFlatFamily.from_states(fourier_flat_family(2, 2).states())
    assert fam.eps == pytest.approx(0.25)


# -- rho_uni and A_p ---------------------------------------------------------------------


def test_rho_uni_single_state_is_maximally_mixed():
    assert np.allclose(build_rho_uni(3, 1, 1, dense=True), np.eye(8) / 8)


@pytest.mark.parametrize("n,s,t", [(2, 2, 1), (2, 1, 2), (2, 2, 2), (3, 2, 1)])
def test_rho_uni_matches_brute_force(n, s, t):
    rho = build_rho_uni(n, s, t, dense=True)
    ref = rho_uni_reference(n, s, t)
    assert np.max(np.abs(rho - ref)) < 1e-15
    assert np.trace(rho) == pytest.approx(1.0, abs=1e-14)
    w = np.linalg.eigvalsh(rho)
    assert w.min() > -1e-12
    assert np.allclose(w, np.linalg.eigvalsh(ref), atol=1e-12)


def test_rho_uni_needs_unique_tuples():
    with pytest.raises(ValueError):
        build_rho_uni(1, 3, 1)


def test_rho_uni_support_is_unique():
    rho = build_rho_uni(2, 2, 1)
    u = uniqueness_projector_diag(4, 2)
    rows, cols = rho.nonzero()
    assert u[rows].all() and u[cols].all()


def test_A_p_zero_pattern_single_slot():
    pat = BlockEdgePattern.from_offdiagonal(1, 1, [[0]])
    assert np.allclose(build_A_p(2, pat).to_dense(), np.eye(4))


def test_A_p0_norm_n2_s2_t1():
    pat = BlockEdgePattern.from_offdiagonal(2, 1, [[0, 0], [0, 0]])
    A = build_A_p(2, pat)
    assert trace_norm(A.to_dense()) == pytest.approx(12.0, rel=1e-9)
    assert A.trace_norm_exact() == pytest.approx(12.0, rel=1e-12)


def test_A_swap_matches_rank_one_pieces():
    pat = BlockEdgePattern.from_offdiagonal(2, 1, [[0, 1], [1, 0]])
    svd = np.linalg.svd(build_A_p(2, pat).to_dense(), compute_uv=False).sum()
    assert svd == pytest.approx(12.0, rel=1e-9)
    assert svd == pytest.approx(rank_one_partition_bound(4, 2, 1, 1), rel=1e-9)


@pytest.mark.parametrize("s,t", [(2, 2), (2, 1), (1, 2)])
def test_A_p_transpose_is_transposed_pattern(s, t):
    for pat in enumerate_classes(s, t):
        A = build_A_p(2, pat).to_dense()
        AT = build_A_p(2, pat.transpose()).to_dense()
        assert np.array_equal(A.T, AT)
        assert np.array_equal(build_A_p(2, pat).transpose().to_dense(), AT)


@pytest.mark.parametrize("n,s,t", [(2, 2, 1), (2, 2, 2), (3, 1, 3)])
def test_A_p_norms_bounded_and_exact(n, s, t):
    N = 1 << n
    for pat in enumerate_classes(s, t):
        A = build_A_p(n, pat)
        dense = np.linalg.svd(A.to_dense(cap=4096), compute_uv=False).sum()
        assert A.trace_norm_exact() == pytest.approx(dense, rel=1e-9)
        assert dense <= a_p_norm_bound(N, s, t, pat.k) * (1 + 1e-9)


def test_A_p_caps():
    pat = BlockEdgePattern.from_offdiagonal(2, 2, [[0, 0], [0, 0]])
    with pytest.raises(CapExceeded):
        build_A_p(3, pat).to_dense(cap=1000)


# -- nu ---------------------------------------------------------------------------------


def test_nu_single_slot_identity():
    fam = fourier_flat_family(3, 1)
    assert nu_sigma(fam, OuterPermutation.identity(1, 1)) == pytest.approx(1 / 8, abs=1e-15)


@pytest.mark.parametrize("t", [1, 2, 3])
def test_nu_s1_equal_across_sigma(t):
    fam = fourier_flat_family(3, 1)
    vals = [nu_sigma(fam, sigma) for sigma in all_permutations(1, t)]
    ref = nu_reference(fam.vectors, 1, t, tuple(range(t)))
    for v in vals:
        assert abs(v - ref) < 1e-12
        assert abs(v.imag) < 1e-14 and v.real > 0


def test_nu_swap_bound_n3():
    fam = fourier_flat_family(3, 2)
    swap = OuterPermutation(2, 1, (1, 0))
    nu = nu_sigma(fam, swap)
    assert abs(nu - nu_reference(fam.vectors, 2, 1, (1, 0))) < 1e-13
    N = 8
    assert abs(nu) <= 4 / (N * falling_factorial(N, 2)) + 1e-15
    assert nu_bound(N, 2, 1, 2, 1 / N) == pytest.approx(4 / (N * falling_factorial(N, 2)))


@given(st.integers(0, 2**32 - 1))
def test_nu_matches_reference_random_family(seed):
    g = np.random.default_rng(seed)
    s, t = [(1, 2), (2, 1), (2, 2), (3, 1), (1, 3)][seed % 5]
    fam = random_orthonormal_family(2 if s * t <= 4 else 3, s, g)
    sigma = random_permutation(s, t, g)
    assert abs(nu_sigma(fam, sigma) - nu_reference(fam.vectors, s, t, sigma.map)) < 1e-12


@given(st.integers(0, 2**32 - 1))
def test_nu_forms_agree(seed):
    g = np.random.default_rng(seed)
    s, t = [(1, 2), (2, 1), (2, 2), (3, 1), (1, 4), (4, 1)][seed % 6]
    n = int(g.integers(2, 5))
    fam = random_orthonormal_family(n, s, g)
    r = nu_sigma_forms(fam, random_permutation(s, t, g))
    assert abs(r.direct - r.crossing) < 1e-12
    assert r.visits == falling_factorial(1 << n, s * t)


@given(st.integers(0, 2**32 - 1))
def test_nu_invariant_under_block_preserving_composition(seed):
    g = np.random.default_rng(seed)
    s, t = [(2, 2), (3, 1), (2, 1), (1, 3)][seed % 4]
    fam = random_orthonormal_family(3, s, g)
    sigma = random_permutation(s, t, g)
    a, b = random_block_preserving(s, t, g), random_block_preserving(s, t, g)
    assert abs(nu_sigma(fam, a * sigma * b) - nu_sigma(fam, sigma)) < 1e-11


def test_nu_budget():
    with pytest.raises(CapExceeded):
        nu_sigma(fourier_flat_family(4, 2), OuterPermutation.identity(2, 2), budget=100)
    with pytest.raises(ValueError):
        nu_sigma(fourier_flat_family(2, 2), OuterPermutation.identity(3, 1))


def test_nu_class_examples():
    fam = fourier_flat_family(3, 2)
    zero = BlockEdgePattern.from_offdiagonal(2, 2, [[0, 0], [0, 0]])
    assert nu_class(fam, zero) == pytest.approx(nu_sigma(fam, OuterPermutation.identity(2, 2)), abs=1e-15)
    full = BlockEdgePattern.from_offdiagonal(2, 2, [[0, 2], [2, 0]])
    members = class_members(2, 2)[full]
    vals = [nu_sigma(fam, OuterPermutation(2, 2, m)) for m in members]
    assert max(abs(v - vals[0]) for v in vals) < 1e-11
    assert nu_class(fam, full) == pytest.approx(vals[0], abs=1e-11)


def test_nu_class_conjugate_transpose():
    g = np.random.default_rng(3)
    fam = random_orthonormal_family(3, 3, g)
    pat = block_edge_pattern(OuterPermutation(3, 1, (1, 2, 0)))
    assert nu_class(fam, pat.transpose()) == pytest.approx(np.conj(nu_class(fam, pat)), abs=1e-13)


def test_nu_class_detects_convention_bug(monkeypatch):
    from prulab import targets

    fam = random_orthonormal_family(2, 2, np.random.default_rng(0))
    pat = BlockEdgePattern.from_offdiagonal(2, 2, [[0, 1], [1, 0]])
    real = targets.nu_sigma
    calls = []

    def skewed(family, sigma, budget=targets.NU_BUDGET):
        calls.append(sigma)
        return real(family, sigma, budget) + (1e-6 if len(calls) > 1 else 0)

    monkeypatch.setattr(targets, "nu_sigma", skewed)
    with pytest.raises(ConventionError):
        targets.nu_class(fam, pat)


def test_z_independence_exhaustive_pi():
    fam = fourier_flat_family(2, 2)
    inv_pis = np.array(list(itertools.permutations(range(4))))
    for sigma in all_permutations(2, 1):
        vals = nu_sigma_z_table(fam, sigma, inv_pis)
        assert np.ptp(vals.real) < 1e-11 and np.ptp(vals.imag) < 1e-11
        assert abs(vals[0] - nu_sigma(fam, sigma)) < 1e-12


def test_nu_decay_in_regime_n7():
    fam = fourier_flat_family(7, 2)
    N = 128
    assert (2 * 2) / N < 0.25
    for row in nu_table(fam, 1):
        assert abs(row["nu"]) <= row["bound"] * (1 + 1e-9)
    k2 = [row for row in nu_table(fam, 1) if row["k"] == 2][0]
    assert k2["bound"] == pytest.approx(4 / (N * falling_factorial(N, 2)))


# -- rho* and the averaged output ----------------------------------------------------------


@pytest.mark.parametrize("n,s,t", [(2, 2, 1), (2, 1, 2), (3, 2, 1), (2, 2, 2)])
def test_rho_star_is_unique_restriction_of_average(n, s, t):
    fam = fourier_flat_family(n, s)
    rho_star = assemble_rho_star(fam, t)
    assert np.max(np.abs(rho_star - rho_star.conj().T)) < 1e-11
    assert abs(np.trace(rho_star) - 1) < 1e-11
    avg = exact_average_output(fam.states(), t).rho
    restricted, _ = unique_restriction(avg, 1 << n, s * t)
    assert np.max(np.abs(rho_star - restricted)) < 1e-10


def test_rho_star_random_family():
    fam = random_orthonormal_family(2, 2, np.random.default_rng(5))
    avg = exact_average_output(fam.states(), 1).rho
    restricted, _ = unique_restriction(avg, 4, 2)
    assert np.max(np.abs(assemble_rho_star(fam, 1) - restricted)) < 1e-10


def test_rho_star_single_state():
    assert np.allclose(assemble_rho_star(fourier_flat_family(3, 1), 1), np.eye(8) / 8, atol=1e-14)


def test_average_of_plus_state_is_maximally_mixed():
    plus = np.array([1, 1]) / np.sqrt(2)
    # by hand: all 4 sign functions and both permutations of {0, 1}
    acc = np.zeros((2, 2), dtype=complex)
    for g0, g1 in itertools.product((1, -1), repeat=2):
        for perm in ((0, 1), (1, 0)):
            v = np.zeros(2, dtype=complex)
            v[list(perm)] = plus * np.array([g0, g1])
            acc += np.outer(v, v.conj())
    assert np.allclose(acc / 8, np.eye(2) / 2)
    for mode in ("orbit", "exhaustive"):
        for g_mode in ("mask", "exhaustive"):
            out = exact_average_output([plus], 1, pi_mode=mode, g_mode=g_mode).rho
            assert np.allclose(out, np.eye(2) / 2, atol=1e-15)


def test_cross_blocks_vanish_exactly():
    fam = fourier_flat_family(2, 2)
    for g_mode in ("mask", "exhaustive"):
        rho = exact_average_output(fam.states(), 1, pi_mode="exhaustive", g_mode=g_mode).rho
        u = uniqueness_projector_diag(4, 2)
        assert np.all(rho[np.ix_(u, ~u)] == 0)
        assert np.all(rho[np.ix_(~u, u)] == 0)


def test_exhaustive_sign_average_equals_bintype_mask():
    g = np.random.default_rng(1)
    D = 4**3
    X = g.normal(size=(D, D)) + 1j * g.normal(size=(D, D))
    ex = g_average_exhaustive(X, 4, 3)
    codes = bintype_codes(4, 3)
    assert np.array_equal(ex, np.where(codes[:, None] == codes[None, :], X, 0))


def test_bintype_examples():
    codes = bintype_codes(4, 2)
    idx = {tuple(z): i for i, z in enumerate(index_tuples(4, 2).tolist())}
    assert codes[idx[(0, 1)]] == codes[idx[(1, 0)]]
    assert codes[idx[(0, 1)]] != codes[idx[(0, 0)]]
    assert codes[idx[(0, 0)]] == codes[idx[(3, 3)]] == 0


@given(st.integers(0, 2**32 - 1))
def test_orbit_average_equals_exhaustive(seed):
    g = np.random.default_rng(seed)
    N, q = [(2, 2), (3, 2), (4, 2), (2, 3), (3, 3)][seed % 5]
    D = N**q
    X = g.normal(size=(D, D)) + 1j * g.normal(size=(D, D))
    assert np.max(np.abs(pi_average_orbit(X, N, q) - pi_average_exhaustive(X, N, q))) < 1e-12


def test_pi_exhaustive_cap():
    with pytest.raises(CapExceeded):
        pi_average_exhaustive(np.zeros((9**1, 9**1)), 9, 1)


def test_mc_estimator_agrees_with_exact():
    fam = fourier_flat_family(2, 2)
    exact = exact_average_output(fam.states(), 1, pi_mode="exhaustive", g_mode="exhaustive").rho
    mc = mc_average_output(fam.states(), 1, 10_000, np.random.default_rng(2))
    se = np.abs(mc.stderr.real) + np.abs(mc.stderr.imag)
    dev = np.abs(exact - mc.rho)
    random_entries = se > 0
    # entries the estimator can never move are exact
    assert np.max(dev[~random_entries]) < 1e-12
    z = dev[random_entries] / se[random_entries]
    assert np.mean(z > 3) < 0.02


def test_average_with_f_agrees_with_mc():
    fam = fourier_flat_family(1, 2)
    exact = exact_average_output(fam.states(), 1, include_f=True).rho
    mc = mc_average_output(fam.states(), 1, 20_000, np.random.default_rng(4), include_f=True)
    assert np.max(np.abs(exact - mc.rho)) < 5 * np.max(np.abs(mc.stderr)) + 1e-12
    assert abs(np.trace(exact) - 1) < 1e-12


def test_sampled_pi_mode_reports_errors():
    fam = fourier_flat_family(2, 2)
    out = exact_average_output(fam.states(), 1, pi_mode="sampled", samples=200, rng=np.random.default_rng(0))
    exact = exact_average_output(fam.states(), 1).rho
    assert out.stderr is not None and out.samples == 200
    assert np.max(np.abs(out.rho - exact) - 5 * np.abs(out.stderr) - 1e-12) <= 0


def test_average_channel_validation():
    with pytest.raises(ValueError):
        average_channel(np.eye(3), 4, 1)
    with pytest.raises(ValueError):
        average_channel(np.eye(4), 4, 1, pi_mode="bogus")
    with pytest.raises(ValueError):
        average_channel(np.eye(4), 4, 1, g_mode="bogus")
    with pytest.raises(CapExceeded):
        exact_average_output(fourier_flat_family(3, 2).states(), 2, cap=1000)


def test_product_input_slot_order():
    a, b = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    v = product_input([a, b], 2)
    # slots (a, a, b, b) with the first slot least significant: index 0 + 0 + 4 + 8
    assert np.argmax(np.abs(v)) == 12
