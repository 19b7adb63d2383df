"""Utility loss, bias-variance decomposition and the bound checks.

Utility loss follows the literal sign ``GAP(W) - GAP(W~)``: it is negative
when the distortion pushes the parameter away from the optimum. The
opposite ("degradation") orientation is available as
``-utility_loss(...).eps_u``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .adversary import c2_from_xi
from .core import BoundEntry, ClientShard, EstimationError, ShapeError
from .sampling import update_variance

#: multiplicative safety margin on observed norms
NORM_MARGIN = 1.1


class UtilityLoss(NamedTuple):
    eps_u: float
    stderr: float


class BiasVariance(NamedTuple):
    gap: float
    variance: float
    bias_sq: float


def _replicas(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    return arr.reshape(-1, 1) if arr.ndim == 1 else arr


def gap_values(replicas, w_star, C: float = 1.0) -> np.ndarray:
    """``C ||W_r - w_star||^2`` for every replica row."""
    arr = _replicas(replicas)
    diff = arr - np.asarray(w_star, dtype=np.float64)
    return C * np.einsum("ij,ij->i", diff, diff)


def utility_loss(unprotected, protected, w_star, C: float = 1.0, *,
                 min_replicas: int = 30) -> UtilityLoss:
    """Mean of ``GAP(W_r) - GAP(W~_r)`` over paired replicas and its standard error."""
    a, b = _replicas(unprotected), _replicas(protected)
    if a.shape != b.shape:
        raise ShapeError(f"arms differ in shape: {a.shape} vs {b.shape}")
    if a.shape[0] < min_replicas:
        raise EstimationError(f"need at least {min_replicas} replicas per arm, got {a.shape[0]}")
    diff = gap_values(a, w_star, C) - gap_values(b, w_star, C)
    se = float(np.std(diff, ddof=1) / math.sqrt(diff.size)) if diff.size > 1 else 0.0
    return UtilityLoss(float(diff.mean()), se)


def system_utility_loss(per_client_round) -> float:
    """Average of the per-client, per-round utility losses."""
    return float(np.mean(np.asarray(per_client_round, dtype=np.float64)))


def bias_variance_decomposition(replicas, w_star) -> BiasVariance:
    """Split the mean squared distance to ``w_star`` into variance and squared bias.

    Moments use the empirical measure of the replicas (divide by ``R``), so
    ``gap == variance + bias_sq`` is an algebraic identity.
    """
    arr = _replicas(replicas)
    w_star = np.asarray(w_star, dtype=np.float64)
    mean = arr.mean(axis=0)
    centred = arr - mean
    variance = float(np.einsum("ij,ij->", centred, centred) / arr.shape[0])
    bias = mean - w_star
    gap = float(gap_values(arr, w_star).mean())
    return BiasVariance(gap, variance, float(bias @ bias))


def conditional_variance(w_prev, shard: ClientShard, p: float, noise_var: float,
                         n_rounds: int = 1) -> float:
    """``E tr Var[W~ | W_prev]``: sampling variance plus ``d`` times the noise variance."""
    return update_variance(w_prev, shard, p, n_rounds) + shard.dim * noise_var


def check_utility_upper_bound(eps_u: float, eps_u_stderr: float, e_var: float, tv: float,
                              tv_stderr: float, c6: float, *, t: int = -1,
                              k: int = -1) -> tuple[BoundEntry, BoundEntry]:
    """Utility-loss bound ``eps_u <= -E Var + C6 TV`` and its near-optimality target.

    Returns two entries: the bound itself, and ``-E Var + C6 TV <= 0``,
    which is what a calibrated sampling probability aims for.
    """
    rhs = -e_var + c6 * tv
    rhs_se = c6 * tv_stderr
    bound = BoundEntry.compare("utility_upper", eps_u, rhs, math.hypot(eps_u_stderr, rhs_se), t=t, k=k)
    target = BoundEntry.compare("utility_near_optimal", rhs, 0.0, rhs_se, t=t, k=k)
    return bound, target


def check_tradeoff_bounds(eps_p: float, eps_u: float, e_var: float, c1: float, xi: float,
                          c6: float, *, delta: float | None = None, gamma: float = 1.0,
                          eps_p_stderr: float = 0.0, eps_u_stderr: float = 0.0,
                          t: int = -1, k: int = -1) -> list[BoundEntry]:
    """Upper and lower bounds on the weighted trade-off, plus the optimality residual.

    * upper: ``eps_p + (C2/C6) eps_u <= -(C2/C6) E Var + 2 C1``
    * lower: ``eps_p + C_d (-eps_u) >= C1`` with ``C_d = gamma/(4 delta) (e^{2 xi} - 1)``;
      out-of-regime when ``delta`` is unset. This bound is stated for the
      non-negative degradation ``GAP(W~) - GAP(W)``, hence the sign flip.
    * optimality residual ``|C1 - (C2/C6) E Var|``, reported as a diagnostic
      (lhs = rhs) since it is a condition, not an inequality.
    """
    c2 = c2_from_xi(xi)
    ratio = c2 / c6
    finite = math.isfinite(ratio)
    upper_lhs = eps_p + ratio * eps_u if finite else math.nan
    upper_rhs = -ratio * e_var + 2.0 * c1 if finite else math.nan
    upper_se = math.hypot(eps_p_stderr, ratio * eps_u_stderr) if finite else 0.0
    entries = [BoundEntry.compare("tradeoff_upper", upper_lhs, upper_rhs, upper_se, t=t, k=k,
                                  in_regime=finite)]
    if delta is None or not delta > 0:
        entries.append(BoundEntry("tradeoff_lower", math.nan, math.nan, 0.0, "out-of-regime", t, k,
                                  "delta unset"))
    else:
        c_d = gamma / (4.0 * delta) * 2.0 * c2
        ok = math.isfinite(c_d)
        value = eps_p - c_d * eps_u if ok else math.nan
        se = math.hypot(eps_p_stderr, c_d * eps_u_stderr) if ok else 0.0
        entries.append(BoundEntry.compare("tradeoff_lower", c1, value, se, t=t, k=k, in_regime=ok))
    residual = abs(c1 - ratio * e_var) if finite else math.nan
    entries.append(BoundEntry("optimality_gap", residual, residual, 0.0,
                              "pass" if finite else "out-of-regime", t, k, "diagnostic"))
    return entries


@dataclass(frozen=True)
class AssumptionConstants:
    c3: float
    c4: float
    c5: float
    c5_estimable: bool
    c6: float

    def as_dict(self) -> dict:
        return asdict(self)


def c6_from_constants(c3: float, c4: float, c5: float) -> float:
    """``2 C3^2 + C3 C4 + 2 C4 C5``."""
    return 2.0 * c3 * c3 + c3 * c4 + 2.0 * c4 * c5


def estimate_assumption_constants(history, w_star) -> AssumptionConstants:
    """Norm and bias constants from ``(replicas, tv)`` pairs of past rounds.

    ``C3`` and ``C4`` are the largest observed ``||W||`` and
    ``||mean W - w_star||`` times a 1.1 margin. ``C5`` is the
    through-origin least-squares slope of ``||mean W - w_star||`` on TV;
    it is unestimable when every TV is zero while some bias is not, and
    then contributes nothing to ``C6``.
    """
    history = list(history)
    if not history:
        raise EstimationError("no history to estimate constants from")
    w_star = np.asarray(w_star, dtype=np.float64)
    norms, biases, tvs = [], [], []
    for replicas, tv in history:
        arr = _replicas(replicas)
        norms.append(np.linalg.norm(arr, axis=1).max())
        biases.append(np.linalg.norm(arr.mean(axis=0) - w_star))
        tvs.append(float(tv))
    c3 = NORM_MARGIN * float(max(norms))
    c4 = NORM_MARGIN * float(max(biases))
    tvs_a, biases_a = np.array(tvs), np.array(biases)
    denom = float(tvs_a @ tvs_a)
    if denom > 0:
        c5, estimable = float(tvs_a @ biases_a / denom), True
    else:
        c5, estimable = 0.0, not np.any(biases_a > 0)
    return AssumptionConstants(c3, c4, c5, estimable, c6_from_constants(c3, c4, c5))
