import json

import numpy as np
import pytest

from prulab import verify
from prulab.qcore import CapExceeded
from prulab.verify import (
    CHECKS,
    SUITES,
    CheckResult,
    make_family,
    run_check,
    run_jobs,
    stream_for,
    thread_count,
)

ROW_KEYS = {"check", "params", "seed", "measured", "bound", "regime", "pass", "status", "runtime_ms", "details"}


def _item(res, name):
    return next(d for d in res.details if d.get("name") == name)


def test_row_schema_and_json():
    res = verify.verify_bintype_collapse(n=2, st=2, seed=4)
    row = res.to_row()
    assert set(row) == ROW_KEYS
    assert row["pass"] is True and row["status"] == "pass"
    assert json.loads(res.to_json()) == row
    assert res.to_row(timing=False)["runtime_ms"] is None
    assert "bintype" in res.line()


def test_jsonable_handles_complex_and_nonfinite():
    res = CheckResult("x", {"a": (1, 2)}, 0, {"z": 1 + 2j, "inf": float("inf"), "arr": np.arange(2)}, {}, "n/a", "pass")
    row = json.loads(res.to_json())
    assert row["measured"]["z"] == {"re": 1.0, "im": 2.0}
    assert row["measured"]["inf"] == "inf" and row["measured"]["arr"] == [0, 1]
    assert row["params"]["a"] == [1, 2]


def test_criteria_status_rules():
    c = verify._Criteria()
    c.bound("out", 5.0, 1.0, in_regime=False)
    assert c.status() == "skipped" and c.regime() == "out"
    assert c.items[0]["note"] == "skipped (out of regime)" and c.items[0]["pass"] is None
    c.bound("in", 0.5, 1.0)
    assert c.status() == "pass" and c.regime() == "partial"
    c.inconclusive = True
    assert c.status() == "inconclusive"
    c.identity("bad", 1e-3, 1e-12)
    assert c.status() == "fail"


def test_stream_for_isolated_and_stable():
    a = stream_for("x", {"n": 2}, 1)
    assert a == stream_for("x", {"n": 2}, 1)
    assert a != stream_for("x", {"n": 3}, 1)
    assert a != stream_for("y", {"n": 2}, 1)
    assert a.seed == 1


def test_make_family():
    fam = make_family("flattened", 4, 3, seed=2)
    assert fam.s == 3 and fam.N == 16
    assert np.max(np.abs(fam.inner_products() - np.eye(3))) < 1e-12
    again = make_family("flattened", 4, 3, seed=2)
    assert np.array_equal(fam.vectors, again.vectors)
    with pytest.raises(ValueError):
        make_family("other", 2, 1)


@pytest.mark.parametrize("n", [2, 3])
def test_bintype_check(n):
    res = verify.verify_bintype_collapse(n=n, st=2)
    assert res.status == "pass"
    assert res.measured["max_abs_error"] < 1e-12


def test_flatness_check_small():
    res = verify.verify_flatness(n=10, s=4, c=8.0, trials=10, seed=1)
    assert res.status == "pass" and res.measured["failures"] == 0


def test_combinatorics_check():
    res = verify.verify_combinatorics(st_max=5)
    assert res.status == "pass"


def test_bounds_out_of_regime_never_passes_vacuously():
    res = verify.verify_norm_and_count_bounds(n=2, s=2, t=1, dense_svd="always")
    assert res.status == "pass"
    nu_items = [d for d in res.details if d.get("name", "").endswith("|nu_p|")]
    assert nu_items and all(d["pass"] is None and d["regime"] == "out" for d in nu_items)
    assert res.regime == "partial"
    assert res.measured["per_k"] == {"0": 1, "2": 1}


def test_bounds_in_regime_n7():
    res = verify.verify_norm_and_count_bounds(n=7, s=2, t=1)
    assert res.status == "pass"
    nu_items = [d for d in res.details if d.get("name", "").endswith("|nu_p|")]
    assert all(d["pass"] is True for d in nu_items)
    assert res.measured["max_visits"] <= 2 * 10**6


def test_bounds_tail_in_regime_n9():
    res = verify.verify_norm_and_count_bounds(n=9, s=2, t=1)
    tail = _item(res, "sum_{k>0} |nu_p| ||A_p||_1")
    assert tail["regime"] == "in" and tail["pass"] is True


def test_bounds_dense_cap():
    with pytest.raises(CapExceeded):
        verify.verify_norm_and_count_bounds(n=4, s=2, t=2, dense_svd="always")


def test_structural_small():
    res = verify.verify_structural_identities(n=2, s=2, t=1)
    assert res.status == "pass"


def test_closeness_n2():
    res = verify.verify_closeness_chain(n=2, s=2, t=1)
    m = res.measured
    assert res.status == "pass"
    assert m["cross_block_max"] == 0.0
    assert m["rho_minus_rho_star"] <= 1.0
    assert m["rho_star_gap"] < 1e-10
    assert m["leading_minus_rho_uni"] < 1e-10
    assert m["c1"] == pytest.approx(4 / 3)
    assert m["defect_rho_uni"] == pytest.approx(0.2)


def test_closeness_flattened_family():
    res = verify.verify_closeness_chain(n=2, s=2, t=1, family="flattened", seed=3)
    assert res.status == "pass"
    assert res.measured["rho_minus_rho_star"] <= 4 * res.measured["eps"]


def test_closeness_trend_small():
    res = verify.verify_closeness_trend(ns=[2, 3, 4])
    assert res.status == "pass"


def test_mc_agreement_small():
    res = verify.verify_mc_agreement(n=2, s=2, t=1, samples=2000, seed=5)
    assert res.status == "pass"


def test_haar_oracle_small():
    res = verify.verify_haar_oracle(N=3, q=2, samples=500)
    assert res.status == "pass"


def test_almost_invariance():
    res = verify.verify_almost_invariance(ns=[2, 3, 4, 5])
    assert res.status == "pass"


def test_channel_and_mixture():
    assert verify.verify_channel_almost_invariance(n=2, s=2, t=1).status == "pass"
    assert verify.verify_mixture_linearity(n=2, s=2, t=1).status == "pass"


def test_distinguisher_small_is_deterministic():
    a = verify.distinguisher_experiment(n=6, s=2, t=1, shots=4000, null_reps=30, haar_reps=10, seed=2)
    b = verify.distinguisher_experiment(n=6, s=2, t=1, shots=4000, null_reps=30, haar_reps=10, seed=2)
    assert a.to_json(timing=False) == b.to_json(timing=False)
    assert a.status == "pass"


def test_distinguisher_random_mode():
    res = verify.distinguisher_experiment(n=6, s=2, t=1, shots=4000, mode="random", null_reps=30,
                                          haar_reps=10, seed=3)
    assert res.status == "pass"


def test_performance_row_hides_wallclock_without_timing():
    res = verify.verify_hadamard_performance(n=16)
    assert res.status == "pass"
    row = res.to_row(timing=False)
    assert row["measured"]["seconds"] is None
    assert _item(res, "hadamard seconds")["measured"] is not None
    assert [d for d in row["details"] if d["name"] == "hadamard seconds"][0]["measured"] is None


def test_run_check_error_row_and_unknown():
    res = run_check("closeness", {"n": 7, "s": 2, "t": 1}, 0)
    assert res.status == "error" and "error" in res.measured
    with pytest.raises(KeyError):
        run_check("nope", {}, 0)


def test_run_jobs_thread_parity():
    jobs = SUITES["quick"][:4]
    one = [r.to_json(False) for r in run_jobs(jobs, 9, threads=1)]
    two = [r.to_json(False) for r in run_jobs(jobs, 9, threads=3)]
    assert one == two


def test_thread_count_env(monkeypatch):
    monkeypatch.setenv("PRULAB_THREADS", "4")
    assert thread_count() == 4
    monkeypatch.setenv("PRULAB_THREADS", "junk")
    assert thread_count() == 1
    monkeypatch.delenv("PRULAB_THREADS")
    assert thread_count() == 1


def test_registry_and_suites_consistent():
    import inspect

    for name, jobs in SUITES.items():
        for check, params in jobs:
            accepted = inspect.signature(CHECKS[check]).parameters
            assert set(params) <= set(accepted), (name, check)
