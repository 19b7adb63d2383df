import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import grads, normal_equations

from ppfl.core import ConfigurationError, ShapeError
from ppfl.model import (DegenerateDesignWarning, LinearModel, check_gap_dominates_loss, gap, gradient,
                        loss, per_point_gradients, pooled_loss, solve_optimum)


@pytest.mark.parametrize("w,x,y,expected", [((0, 0), (1, 1), 0, 0.0), ((1, 2), (1, 1), 0, 9.0),
                                            ((1, 2), (2, 0), 1, 1.0)])
def test_loss_examples(w, x, y, expected):
    assert loss(w, (x, y)) == expected


@pytest.mark.parametrize("w,x,expected", [((0, 0), (1, 0), (0, 0)), ((1, 0), (1, 0), (2, 0))])
def test_gradient_examples(w, x, expected):
    assert np.array_equal(gradient(w, (x, 0.0)), expected)


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        loss([1.0, 2.0], ([1.0], 0.0))
    with pytest.raises(ShapeError):
        gap([1.0], [1.0, 2.0])


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        d = rng.integers(1, 5)
        w, x, y = rng.normal(size=d), rng.normal(size=d), rng.normal()
        h = 1e-6
        fd = np.array([(loss(w + h * e, (x, y)) - loss(w - h * e, (x, y))) / (2 * h) for e in np.eye(d)])
        g = gradient(w, (x, y))
        worst = max(worst, np.max(np.abs(fd - g)) / max(1.0, np.max(np.abs(g))))
    assert worst <= 1e-5


def test_per_point_gradients_match_oracle():
    rng = np.random.default_rng(1)
    x, y, w = rng.normal(size=(7, 3)), rng.normal(size=7), rng.normal(size=3)
    assert np.allclose(per_point_gradients(w, x, y), grads(w, x, y), rtol=0, atol=1e-12)


@pytest.mark.parametrize("w,ws,C,expected", [((1, 1), (0, 0), 1.0, 2.0), ((3, 4), (0, 0), 2.0, 50.0)])
def test_gap_examples(w, ws, C, expected):
    assert gap(w, ws, C) == expected


@settings(max_examples=100)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=2), st.lists(st.floats(-100, 100), min_size=2, max_size=2),
       st.floats(0.1, 10))
def test_gap_symmetric_and_quadratic(w, ws, C):
    assert gap(w, w, C) == 0.0
    assert gap(w, ws, C) == pytest.approx(gap(ws, w, C), rel=1e-12, abs=1e-12)
    assert gap(2 * np.array(w), np.zeros(2), C) == pytest.approx(4 * gap(w, np.zeros(2), C), rel=1e-12)


def test_gap_requires_positive_constant():
    with pytest.raises(ConfigurationError):
        gap([1.0], [0.0], 0.0)
    with pytest.raises(ConfigurationError):
        LinearModel(2, gap_constant=-1.0)


def test_solve_optimum_examples():
    assert np.allclose(solve_optimum([[1, 0], [0, 1]], [1, 2]), [1, 2])
    assert np.allclose(solve_optimum(np.random.default_rng(0).normal(size=(5, 2)), np.zeros(5)), 0)


def test_solve_optimum_matches_normal_equations():
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=(20, 3)), rng.normal(size=20)
    w = solve_optimum(x, y)
    assert np.allclose(w, normal_equations(x, y), rtol=0, atol=1e-8)
    g = per_point_gradients(w, x, y).mean(axis=0)
    assert np.linalg.norm(g) <= 1e-8 * (1 + np.linalg.norm(w))
    # fixed point of a full-batch gradient step
    assert np.linalg.norm(0.1 * g) <= 1e-8
    assert pooled_loss(w, x, y) <= pooled_loss(w + 1e-3, x, y)


def test_rank_deficient_design_warns():
    x = np.array([[1.0, 1.0], [2.0, 2.0]])
    with pytest.warns(DegenerateDesignWarning):
        w = solve_optimum(x, [1.0, 2.0])
    assert np.allclose(w, [0.5, 0.5])


def test_gap_dominates_loss_on_unit_features():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(50, 3))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    w_star, w = rng.normal(size=3), rng.normal(size=3)
    assert check_gap_dominates_loss(w_star, w_star, x)
    assert check_gap_dominates_loss(w, w_star, x)


def test_gap_dominates_loss_can_fail_for_large_features():
    # ||x||^2 = 4 > C breaks the Cauchy-Schwarz step
    x = np.array([[2.0, 0.0]])
    with warnings.catch_warnings():
        assert not check_gap_dominates_loss([1.0, 0.0], [0.0, 0.0], x, C=1.0)
