import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from prulab.flatness import (
    DEFAULT_C,
    VacuousBoundWarning,
    check_flattening,
    flatness_of,
    flatness_threshold,
    hoeffding_failure_bound,
)
from prulab.oracles import apply_hadamard_all, apply_inner_permutation, apply_phase
from prulab.qcore import basis_state, random_state, uniform_state
from prulab.sampling import SeededStream, sample_binary_function, sample_inner_permutation
from prulab.targets import fourier_flat_family


def test_flatness_examples():
    assert flatness_of(uniform_state(6)) == pytest.approx(2**-6, abs=1e-16)
    assert flatness_of(basis_state(6, 9)) == 1.0
    for v in fourier_flat_family(5, 4).states():
        assert flatness_of(v) == pytest.approx(2**-5, rel=1e-12)


def test_bound_closed_form():
    b = hoeffding_failure_bound(14, 8, 8)
    assert b == pytest.approx(16 * math.exp(-(2 - math.log(2)) * 14))
    assert 1.7e-7 < b < 1.9e-7


def test_bound_vacuous_at_critical_c():
    for s in (1, 3, 8):
        assert hoeffding_failure_bound(10, s, 4 * math.log(2)) == pytest.approx(2 * s)


@given(st.integers(1, 30), st.integers(1, 50), st.floats(0.5, 20))
def test_bound_linear_in_s(n, s, c):
    assert hoeffding_failure_bound(n, 2 * s, c) == pytest.approx(2 * hoeffding_failure_bound(n, s, c), rel=1e-14)


def test_default_c():
    assert DEFAULT_C == 8.0
    assert flatness_threshold(14, 8) == 8 * 14 / 2**14


def test_flattening_basis_states_n14():
    states = [basis_state(14, x) for x in range(0, 8 * 1000, 1000)]
    rep = check_flattening(states, c=8, trials=100, rng=SeededStream(7))
    assert rep.failures == 0
    assert rep.measured.min() >= 2**-14
    assert rep.measured.max() <= 8 * 14 / 2**14
    summ = rep.summary()
    assert summ["s"] == 8 and summ["trials"] == 100 and summ["bound"] == pytest.approx(rep.bound)


def test_flattening_plus_input_n14():
    rep = check_flattening([uniform_state(14)], c=8, trials=100, rng=SeededStream(8))
    assert rep.failures == 0


def test_flattening_precondition_warns():
    with pytest.warns(VacuousBoundWarning):
        rep = check_flattening([basis_state(1, 0)], c=1, trials=4, rng=SeededStream(0))
    # |H U_f |0>|^2 is 1/2 everywhere; the threshold c n / 2^n equals it
    assert np.allclose(rep.measured, 0.5)
    assert rep.threshold == 0.5


def test_no_warning_above_critical_c():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        check_flattening([basis_state(3, 1)], c=3.0, trials=2)


def test_flattening_validation():
    with pytest.raises(ValueError):
        check_flattening([])
    with pytest.raises(ValueError):
        check_flattening([basis_state(2, 0), basis_state(3, 0)])


def test_flattening_is_reproducible():
    a = check_flattening([basis_state(10, 3)], trials=5, rng=SeededStream(4, 2))
    b = check_flattening([basis_state(10, 3)], trials=5, rng=SeededStream(4, 2))
    assert np.array_equal(a.measured, b.measured)


@given(st.integers(1, 10), st.integers(0, 2**32 - 1))
def test_flatness_invariant_under_phase_and_permutation(n, seed):
    g = np.random.default_rng(seed)
    psi = random_state(n, g)
    f = sample_binary_function(n, g)
    pi = sample_inner_permutation(n, g)
    assert flatness_of(apply_phase(psi, f)) == flatness_of(psi)
    assert flatness_of(apply_inner_permutation(psi, pi)) == flatness_of(psi)


@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_flatness_at_least_uniform(n, seed):
    psi = random_state(n, np.random.default_rng(seed))
    assert flatness_of(psi) >= 2**-n * (1 - 1e-12)
    assert flatness_of(apply_hadamard_all(psi)) >= 2**-n * (1 - 1e-12)


def test_failure_rate_n12_many_trials():
    n, c, trials = 12, 8.0, 10_000
    rep = check_flattening([basis_state(n, 5)], c=c, trials=trials, rng=SeededStream(12))
    bound = hoeffding_failure_bound(n, 1, c)
    sigma = math.sqrt(max(bound * (1 - bound), 1e-300) / trials)
    assert rep.failure_rate <= bound + 3 * sigma
    mean = rep.measured.mean()
    assert 2**-n <= mean <= 8 * n / 2**n
