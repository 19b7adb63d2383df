"""Bernoulli mini-batch sampling and the moments of the resulting update.

The moment formulas describe the un-normalised update used in the analysis,

    W_t = W_{t-1} - (1/N) * sum_j sum_i grad_i * 1{i drawn in sampling round j},

where every point enters each of the ``N`` sampling rounds independently
with probability ``p``. The learning-rate/batch-normalised step actually
run by clients lives in :mod:`ppfl.federation`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import ClientShard, ConfigurationError, InfeasibleBudgetError, ShapeError
from .model import per_point_gradients


@dataclass(frozen=True)
class SamplingPlan:
    p: float
    rounds: int = 1

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ConfigurationError(f"p must lie in [0, 1], got {self.p}")
        if self.rounds < 1:
            raise ConfigurationError("the number of sampling rounds must be >= 1")


class SamplingProbability(NamedTuple):
    p: float
    free: bool  # True when any p works, i.e. the budget already holds


def draw_minibatch(shard: ClientShard, stream: np.random.Generator, p: float | None = None) -> np.ndarray:
    """Indices kept by independent Bernoulli(p) trials; may be empty."""
    p = shard.sample_prob if p is None else p
    return np.flatnonzero(stream.random(shard.size) < p)


def gradient_sq_sum(w_prev, shard: ClientShard) -> float:
    """Sum of squared Euclidean norms of the per-point gradients."""
    g = per_point_gradients(w_prev, shard.features, shard.labels)
    return float(np.sum(g * g))


def expected_update(w_prev, shard: ClientShard, p: float, noise=None) -> np.ndarray:
    """Exact mean of the sampled update: ``w_prev - p * sum_i grad_i + noise``."""
    w_prev = np.asarray(w_prev, dtype=np.float64)
    g = per_point_gradients(w_prev, shard.features, shard.labels)
    out = w_prev - p * g.sum(axis=0)
    if noise is not None:
        noise = np.asarray(noise, dtype=np.float64)
        if noise.shape != out.shape:
            raise ShapeError("noise and parameter shapes differ")
        out = out + noise
    return out


def update_variance(w_prev, shard: ClientShard, p: float, n_rounds: int = 1) -> float:
    """Total (trace) variance of the sampled update, ``p(1-p)/N * sum ||grad_i||^2``.

    ``n_rounds=1`` gives the single-round formula.
    """
    SamplingPlan(p, n_rounds)
    return p * (1.0 - p) * gradient_sq_sum(w_prev, shard) / n_rounds


def sampled_updates(w_prev, shard: ClientShard, p: float, n_rounds: int,
                    stream: np.random.Generator, size: int = 1) -> np.ndarray:
    """Draw ``size`` independent sampled updates, shape (size, d)."""
    SamplingPlan(p, n_rounds)
    w_prev = np.asarray(w_prev, dtype=np.float64)
    g = per_point_gradients(w_prev, shard.features, shard.labels)
    out = np.empty((size, g.shape[1]))
    # chunk to bound memory at size * n_rounds * M booleans
    chunk = max(1, 2_000_000 // max(1, n_rounds * shard.size))
    for start in range(0, size, chunk):
        stop = min(size, start + chunk)
        mask = stream.random((stop - start, n_rounds, shard.size)) < p
        counts = mask.sum(axis=1) / n_rounds
        out[start:stop] = w_prev - counts @ g
    return out


def sampling_target(c6: float, c1_minus_tau: float, grad_sq_sum: float) -> float:
    """Right-hand side ``C6 (C1 - tau) / sum ||grad||^2`` that ``p(1-p)`` must reach."""
    if grad_sq_sum <= 0:
        return math.inf if c6 * c1_minus_tau > 0 else 0.0
    return c6 * c1_minus_tau / grad_sq_sum


def calibrate_sampling_probability(c_target: float) -> SamplingProbability:
    """Smallest ``p`` with ``p(1-p) >= c_target``.

    Raises :class:`InfeasibleBudgetError` for ``c_target > 1/4``. A negative
    target is clamped to zero with a warning.
    """
    if c_target > 0.25:
        raise InfeasibleBudgetError(f"p(1-p) >= {c_target:.6g} has no solution (max is 1/4)")
    if c_target < 0:
        warnings.warn("negative sampling target clamped to 0: the budget exceeds C1", stacklevel=2)
        c_target = 0.0
    if c_target == 0.0:
        return SamplingProbability(0.0, True)
    if c_target == 0.25:
        return SamplingProbability(0.5, False)
    # 2c / (1 + sqrt(1 - 4c)) avoids cancellation for small c
    p = 2.0 * c_target / (1.0 + math.sqrt(1.0 - 4.0 * c_target))
    if p * (1.0 - p) < c_target:
        p = math.nextafter(p, 1.0)
    return SamplingProbability(p, False)
