import numpy as np
import pytest

from ppfl.adversary import make_toy_instance
from ppfl.core import ConfigurationError
from ppfl.suite import toy_bound_report, toy_constants


@pytest.fixture(scope="module")
def toy():
    inst = make_toy_instance(np.random.default_rng(0))
    grid = [r * inst.sigma_sq for r in (0.01, 0.1, 1.0)]
    report, evals = toy_bound_report(inst, grid, delta=1.0, n_grid=1201)
    return inst, report, evals


def test_report_rows_per_noise_level(toy):
    _, report, evals = toy
    assert len(evals) == 3
    for t in range(3):
        names = [e.name for e in report.entries if e.t == t]
        assert names == ["leakage_lower", "leakage_upper", "js_tv_bound", "utility_upper",
                         "utility_near_optimal", "tradeoff_upper", "tradeoff_lower", "optimality_gap"]
    assert {"C3", "C4", "C5", "C6", "C6_estimate", "delta"} <= set(report.constants)


def test_exact_entries_that_must_hold(toy):
    _, report, _ = toy
    for e in report.entries:
        if e.name in ("leakage_lower", "js_tv_bound"):
            assert e.status == "pass", e
        assert e.stderr == 0.0


def test_utility_upper_fails_as_noise_vanishes(toy):
    # eps_u -> 0 while -E Var -> -sigma^2 < 0: the stated bound needs C6 TV >= sigma^2
    _, report, evals = toy
    first = next(e for e in report.entries if e.name == "utility_upper" and e.t == 0)
    ev = evals[0]
    assert first.status == ("pass" if ev.eps_u <= -ev.e_var + report.constants["C6"] * ev.tv else "fail")
    assert ev.eps_u == pytest.approx(-ev.noise_var, rel=1e-3)


def test_constants_are_consistent(toy):
    inst, report, evals = toy
    c = toy_constants(inst, evals)
    assert c.c3 > 0 and c.c4 >= 0 and c.c5 >= 0
    assert c.c6 == pytest.approx(2 * c.c3**2 + c.c3 * c.c4 + 2 * c.c4 * c.c5)
    assert report.constants["C6"] == c.c6


def test_fixed_c6_and_missing_delta():
    inst = make_toy_instance(np.random.default_rng(1))
    report, _ = toy_bound_report(inst, [0.1 * inst.sigma_sq], c6=3.0, n_grid=801)
    assert report.constants["C6"] == 3.0
    lower = next(e for e in report.entries if e.name == "tradeoff_lower")
    assert lower.status == "out-of-regime"
    with pytest.raises(ConfigurationError):
        toy_bound_report(inst, [])
