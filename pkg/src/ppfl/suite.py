"""Bound checks on the exact toy instance.

Everything here is computed exactly on a discretised one-dimensional
parameter line, so no entry carries Monte Carlo error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .adversary import ToyEvaluation, ToyInstance, candidate_means, evaluate_toy, leakage_bounds
from .core import BoundReport, ConfigurationError
from .divergence import check_js_tv_bound
from .metrics import c6_from_constants, check_tradeoff_bounds, check_utility_upper_bound, NORM_MARGIN


@dataclass(frozen=True)
class ToyConstants:
    c3: float
    c4: float
    c5: float
    c6: float


def toy_constants(inst: ToyInstance, evals: list[ToyEvaluation], halfwidth: float = 6.0) -> ToyConstants:
    """Norm, bias and combined constants from exact toy distributions.

    ``C3`` uses the largest ``|w|`` inside the grid of the noisiest
    evaluation, ``C4`` the bias of the mean, ``C5`` the through-origin
    slope of bias on TV over the evaluations.
    """
    means = candidate_means(inst.universe, inst.w_prev, inst.p)[:, 0]
    spread = max(math.sqrt(e.sigma_sq + e.noise_var) for e in evals)
    c3 = NORM_MARGIN * max(abs(means.min() - halfwidth * spread), abs(means.max() + halfwidth * spread))
    bias = abs(means[0] - float(inst.w_star[0]))
    c4 = NORM_MARGIN * bias
    tvs = np.array([e.tv for e in evals])
    denom = float(tvs @ tvs)
    c5 = float(bias * tvs.sum() / denom) if denom > 0 else 0.0
    return ToyConstants(c3, c4, c5, c6_from_constants(c3, c4, c5))


def toy_bound_report(inst: ToyInstance, noise_grid, *, gamma: float = 1.0, delta: float | None = None,
                     c6: float | None = None, n_grid: int = 4001) -> tuple[BoundReport, list[ToyEvaluation]]:
    """Evaluate every bound on the toy instance at each noise variance.

    ``delta`` is the configured near-optimal-set constant; when unset the
    lower trade-off entry is out-of-regime. ``c6=None`` uses
    :func:`toy_constants`. Rows are indexed by ``t``.
    """
    noise_grid = [float(v) for v in noise_grid]
    if not noise_grid:
        raise ConfigurationError("empty noise grid")
    evals = [evaluate_toy(inst, v, n_grid=n_grid) for v in noise_grid]
    consts = toy_constants(inst, evals)
    c6_used = consts.c6 if c6 is None else float(c6)
    report = BoundReport(constants={"C": inst.gap_constant, "C3": consts.c3, "C4": consts.c4,
                                    "C5": consts.c5, "C6": c6_used, "C6_estimate": consts.c6,
                                    "gamma": gamma, "delta": delta})
    for t, ev in enumerate(evals):
        sandwich = leakage_bounds(ev.f_tilde, ev.f, ev.f_breve, ev.tv, ev.xi, t=t, k=0)
        report.add(*sandwich.entries)
        report.add(check_js_tv_bound(ev.f_tilde, ev.f, ev.tv, ev.xi, t=t, k=0))
        report.add(*check_utility_upper_bound(ev.eps_u, 0.0, ev.e_var, ev.tv, 0.0, c6_used, t=t, k=0))
        report.add(*check_tradeoff_bounds(ev.eps_p, ev.eps_u, ev.e_var, ev.c1, ev.xi, c6_used,
                                          delta=delta, gamma=gamma, t=t, k=0))
    return report, evals
