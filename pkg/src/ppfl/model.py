"""Linear model with squared loss, the GAP surrogate and the pooled optimum."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import ATOL, ConfigurationError, ShapeError


class DegenerateDesignWarning(UserWarning):
    """The pooled design matrix is rank deficient."""


@dataclass(frozen=True)
class LinearModel:
    dim: int
    gap_constant: float = 1.0

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigurationError("dim must be positive")
        if not self.gap_constant > 0:
            raise ConfigurationError("the GAP constant C must be > 0")


def _check(w, x):
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if w.shape[-1] != x.shape[-1]:
        raise ShapeError(f"parameter has dimension {w.shape[-1]}, feature has {x.shape[-1]}")
    return w, x


def loss(w, point) -> float:
    """Squared residual ``(x.w - y)**2`` of a single (feature, label) pair."""
    x, y = point
    w, x = _check(w, x)
    return float((x @ w - y) ** 2)


def gradient(w, point) -> np.ndarray:
    """Gradient of :func:`loss` with respect to ``w``: ``2 (x.w - y) x``."""
    x, y = point
    w, x = _check(w, x)
    return 2.0 * (x @ w - y) * x


def per_point_gradients(w, features, labels) -> np.ndarray:
    """Stacked gradients, shape (M, d), for every row of ``features``."""
    w, x = _check(w, np.atleast_2d(features))
    resid = x @ w - np.asarray(labels, dtype=np.float64)
    return 2.0 * resid[:, None] * x


def pooled_loss(w, features, labels) -> float:
    """Mean squared residual over all points."""
    w, x = _check(w, np.atleast_2d(features))
    return float(np.mean((x @ w - np.asarray(labels)) ** 2))


def gap(w, w_star, C: float = 1.0) -> float:
    """``C * ||w - w_star||**2``."""
    if not C > 0:
        raise ConfigurationError("C must be > 0")
    w, w_star = _check(w, w_star)
    diff = w - w_star
    return float(C * (diff @ diff))


def solve_optimum(features, labels) -> np.ndarray:
    """Least-squares minimiser of the pooled loss.

    A rank-deficient design gets the minimum-norm solution and a
    :class:`DegenerateDesignWarning`.
    """
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if x.shape[0] != y.shape[0]:
        raise ShapeError("features and labels disagree in length")
    sol, _, rank, _ = np.linalg.lstsq(x, y, rcond=None)
    if rank < x.shape[1]:
        warnings.warn(f"design has rank {rank} < {x.shape[1]}; returning the minimum-norm solution",
                      DegenerateDesignWarning, stacklevel=2)
    return sol


def check_gap_dominates_loss(w, w_star, features, C: float = 1.0) -> bool:
    """True iff ``loss(w, (x, x.w_star)) <= gap(w, w_star, C)`` for every row ``x``.

    Holds by Cauchy-Schwarz whenever every ``||x||**2 <= C``; larger features
    can break it.
    """
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    w, x = _check(w, x)
    w_star = np.asarray(w_star, dtype=np.float64)
    losses = (x @ (w - w_star)) ** 2
    return bool(np.all(losses <= gap(w, w_star, C) + ATOL))
