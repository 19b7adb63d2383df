import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ppfl.core import ClientShard, EstimationError, ShapeError
from ppfl.metrics import (bias_variance_decomposition, c6_from_constants, check_tradeoff_bounds,
                          check_utility_upper_bound, conditional_variance, estimate_assumption_constants,
                          gap_values, system_utility_loss, utility_loss)
from ppfl.sampling import update_variance


def test_utility_loss_example():
    # distances 1 and 2 from the optimum: GAP(W) - GAP(W~) = 1 - 4
    a = np.tile([[1.0, 0.0]], (30, 1))
    b = np.tile([[0.0, 2.0]], (30, 1))
    got = utility_loss(a, b, [0.0, 0.0])
    assert got.eps_u == -3.0 and got.stderr == 0.0
    assert utility_loss(b, a, [0.0, 0.0], C=2.0).eps_u == 6.0


def test_utility_loss_needs_replicas_and_matching_shapes():
    with pytest.raises(EstimationError):
        utility_loss(np.zeros((29, 2)), np.zeros((29, 2)), [0, 0])
    with pytest.raises(ShapeError):
        utility_loss(np.zeros((30, 2)), np.zeros((31, 2)), [0, 0])


def test_gap_values_and_system_average():
    assert np.allclose(gap_values([[3.0, 4.0], [0.0, 0.0]], [0.0, 0.0], C=0.5), [12.5, 0.0])
    assert system_utility_loss([[1.0, 2.0], [3.0, -2.0]]) == 1.0


def test_bias_variance_two_point_example():
    bv = bias_variance_decomposition([0.0, 2.0], [0.0])
    assert bv == (2.0, 1.0, 1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 8]))
def test_bias_variance_identity(seed, d):
    rng = np.random.default_rng(seed)
    reps = rng.normal(rng.normal(size=d), rng.uniform(0.1, 10), size=(50, d))
    w_star = rng.normal(size=d)
    bv = bias_variance_decomposition(reps, w_star)
    assert abs(bv.gap - bv.variance - bv.bias_sq) <= 1e-10 * max(bv.gap, 1e-300)


def test_bias_variance_gaussian_moments():
    rng = np.random.default_rng(0)
    reps = rng.normal(1.0, 2.0, size=(10_000, 1))
    bv = bias_variance_decomposition(reps, [0.0])
    assert bv.variance == pytest.approx(4.0, rel=0.05)
    assert bv.bias_sq == pytest.approx(1.0, rel=0.1)


def test_total_variance_law_nested_monte_carlo():
    # Var W~ = E Var[W~ | W] + Var E[W~ | W] for W ~ N(0, 1), W~ = W + N(0, s2)
    rng = np.random.default_rng(1)
    s2 = 0.5
    outer = rng.normal(size=400)
    inner = outer[:, None] + math.sqrt(s2) * rng.normal(size=(400, 200))
    total = inner.var()
    within = inner.var(axis=1).mean()
    between = inner.mean(axis=1).var()
    assert total == pytest.approx(within + between, rel=1e-12)
    assert within == pytest.approx(s2, rel=0.05)


def test_conditional_variance_adds_noise_per_coordinate():
    rng = np.random.default_rng(2)
    shard = ClientShard(rng.normal(size=(5, 3)), rng.normal(size=5))
    w = rng.normal(size=3)
    assert conditional_variance(w, shard, 0.3, 0.2) == pytest.approx(update_variance(w, shard, 0.3) + 0.6)


def test_utility_bound_without_protection():
    bound, target = check_utility_upper_bound(0.0, 0.0, 0.0, 0.0, 0.0, 5.0)
    assert bound.status == "pass" and target.status == "pass"
    bound, target = check_utility_upper_bound(-1.0, 0.0, 0.5, 0.2, 0.0, 5.0)
    assert bound.status == "pass" and target.status == "fail"


def test_tradeoff_zero_xi_and_missing_delta():
    entries = check_tradeoff_bounds(eps_p=0.1, eps_u=-0.2, e_var=0.3, c1=0.1, xi=0.0, c6=2.0)
    by = {e.name: e for e in entries}
    # C2 = 0: upper reduces to eps_p <= 2 C1
    assert by["tradeoff_upper"].status == "pass"
    assert by["tradeoff_upper"].lhs == pytest.approx(0.1) and by["tradeoff_upper"].rhs == pytest.approx(0.2)
    assert by["tradeoff_lower"].status == "out-of-regime"
    assert by["optimality_gap"].lhs == pytest.approx(0.1)


def test_tradeoff_lower_uses_degradation():
    entries = check_tradeoff_bounds(eps_p=0.05, eps_u=-0.2, e_var=0.3, c1=0.1, xi=0.5, c6=2.0, delta=1.0)
    lower = next(e for e in entries if e.name == "tradeoff_lower")
    c_d = 0.25 * math.expm1(1.0)
    assert lower.rhs == pytest.approx(0.05 + c_d * 0.2)
    assert lower.status == ("pass" if 0.1 <= lower.rhs else "fail")


def test_tradeoff_overflow_is_out_of_regime():
    entries = check_tradeoff_bounds(eps_p=0.1, eps_u=-0.1, e_var=0.1, c1=0.1, xi=800.0, c6=1.0, delta=1.0)
    assert all(e.status == "out-of-regime" for e in entries)


def test_assumption_constants_zero_history():
    ac = estimate_assumption_constants([(np.zeros((4, 2)), 0.0)], [0.0, 0.0])
    assert (ac.c3, ac.c4, ac.c5, ac.c6) == (0.0, 0.0, 0.0, 0.0) and ac.c5_estimable


def test_assumption_constants_unit_sphere():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(100, 3))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    ac = estimate_assumption_constants([(x, 0.0)], np.zeros(3))
    assert ac.c3 == pytest.approx(1.1)
    # biased replicas with zero TV: the bias slope cannot be identified
    assert not estimate_assumption_constants([(x + 1.0, 0.0)], np.zeros(3)).c5_estimable
    with pytest.raises(EstimationError):
        estimate_assumption_constants([], np.zeros(3))


def test_c5_slope_recovers_linear_relation():
    hist = [(np.full((3, 1), 0.5 * tv), tv) for tv in (0.1, 0.2, 0.4)]
    ac = estimate_assumption_constants(hist, [0.0])
    assert ac.c5 == pytest.approx(0.5)
    assert ac.c6 == pytest.approx(c6_from_constants(ac.c3, ac.c4, ac.c5))


@given(st.floats(0.01, 100), st.floats(0.01, 100))
def test_log_ratio_lipschitz_inequality(a, b):
    assert abs(math.log(a / b)) <= abs(a - b) / min(a, b) + 1e-12


def test_expectation_gap_bounded_by_tv():
    # |E_P f - E_Q f| <= 2 sup|f| TV(P, Q) for bounded f, Gaussians N(0,1) vs N(0.3,1)
    from scipy import stats
    f = np.tanh
    x = np.linspace(-12, 12, 200_001)
    p, q = stats.norm.pdf(x), stats.norm.pdf(x, 0.3)
    dx = x[1] - x[0]
    gap = abs(((p - q) * f(x)).sum() * dx)
    tv = 0.5 * np.abs(p - q).sum() * dx
    assert gap <= 2 * tv + 1e-9
