"""Gaussian parameter distortion and its calibration from a privacy budget."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import ConfigurationError, EstimationError, RoundRecord

#: below this the calibrated variance is reported as exactly zero
VARIANCE_FLOOR = 1e-300


class OutOfRegimeWarning(UserWarning):
    """A calibration input lies outside the range its guarantee covers."""


@dataclass(frozen=True)
class NoiseSpec:
    variance: float
    dim: int

    def __post_init__(self):
        if not self.variance >= 0:
            raise ConfigurationError(f"noise variance must be >= 0, got {self.variance}")
        if self.dim < 1:
            raise ConfigurationError("dim must be positive")


class NoiseCalibration(NamedTuple):
    variance: float
    zero_noise: bool  # budget already met, or the value underflowed
    in_regime: bool   # 0 < C1 - tau < 0.01


def distort(w, spec: NoiseSpec, stream: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(w + delta, delta)`` with ``delta ~ N(0, variance * I)``."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape[-1] != spec.dim:
        raise ConfigurationError(f"noise dim {spec.dim} does not match parameter dim {w.shape[-1]}")
    if spec.variance == 0.0:
        delta = np.zeros_like(w)
    else:
        delta = stream.normal(0.0, math.sqrt(spec.variance), size=w.shape)
    return w + delta, delta


def calibrate_noise_variance(sigma_sq_model: float, d: int, c1_minus_tau: float) -> NoiseCalibration:
    """Noise variance ``100 sigma^2 (C1 - tau) / sqrt(d)``.

    With this variance the Gaussian TV lower bound ``min(1, s^2 sqrt(d)/sigma^2)/100``
    equals ``C1 - tau`` exactly, as long as ``C1 - tau < 0.01``. Larger gaps
    still get a value, plus an :class:`OutOfRegimeWarning`.
    """
    if not sigma_sq_model > 0:
        raise ConfigurationError("the model-parameter variance must be > 0")
    if d < 1:
        raise ConfigurationError("d must be positive")
    if c1_minus_tau <= 0:
        return NoiseCalibration(0.0, True, False)
    in_regime = c1_minus_tau < 0.01
    if not in_regime:
        warnings.warn(f"C1 - tau = {c1_minus_tau:.4g} >= 0.01: the TV lower bound saturates at 1/100",
                      OutOfRegimeWarning, stacklevel=2)
    var = 100.0 * sigma_sq_model * c1_minus_tau / math.sqrt(d)
    if var < VARIANCE_FLOOR:
        return NoiseCalibration(0.0, True, in_regime)
    return NoiseCalibration(var, False, in_regime)


def replica_variance(replicas) -> float:
    """Mean per-coordinate unbiased sample variance of stacked replicas (R, d)."""
    arr = np.atleast_2d(np.asarray(replicas, dtype=np.float64))
    if arr.shape[0] < 2:
        raise EstimationError("need at least two replicas to estimate a variance")
    return float(np.mean(np.var(arr, axis=0, ddof=1)))


def estimate_model_param_variance(records: list[RoundRecord], client: int) -> float:
    """Per-coordinate variance of the undistorted parameter across replica records of ``client``."""
    rows = [r.w_local for r in records if r.client == client]
    return replica_variance(rows)
