"""Shared types, seed discipline and numeric conventions.

Parameter vectors are plain 1-D ``float64`` numpy arrays; :func:`as_param`
is the single place where they get validated. Every random draw in the
package comes from a :class:`numpy.random.Generator` produced by
:func:`derive_stream`, so a run is a pure function of its master seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

#: absolute tolerance used for exact identities
ATOL = 1e-9

STREAM_TAGS = ("sample", "noise", "oracle")


class ConfigurationError(ValueError):
    """Invalid configuration or argument outside the allowed domain."""


class ShapeError(ValueError):
    """Dimension mismatch between parameter vectors or data points."""


class EstimationError(ValueError):
    """Not enough data to form an estimate."""


class InfeasibleBudgetError(RuntimeError):
    """No sampling probability satisfies the requested privacy budget."""

    def __init__(self, message: str, client: int | None = None, round: int | None = None):
        super().__init__(message)
        self.client = client
        self.round = round


def as_param(values, dim: int | None = None) -> np.ndarray:
    """Validate ``values`` as a finite parameter vector and return a float64 copy."""
    arr = np.atleast_1d(np.array(values, dtype=np.float64))
    if arr.ndim != 1:
        raise ShapeError(f"parameter vector must be 1-D, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ShapeError(f"expected dimension {dim}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("parameter vector has non-finite entries")
    return arr


@dataclass(frozen=True)
class ClientShard:
    """One client's local dataset: ``features`` is (M, d), ``labels`` is (M,)."""

    features: np.ndarray
    labels: np.ndarray
    sample_prob: float = 1.0

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        y = np.asarray(self.labels, dtype=np.float64).reshape(-1)
        if x.shape[0] < 1:
            raise ConfigurationError("a shard needs at least one point")
        if x.shape[0] != y.shape[0]:
            raise ShapeError(f"{x.shape[0]} feature rows but {y.shape[0]} labels")
        if not 0.0 <= self.sample_prob <= 1.0:
            raise ConfigurationError(f"sample_prob must lie in [0, 1], got {self.sample_prob}")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def with_prob(self, p: float) -> ClientShard:
        return ClientShard(self.features, self.labels, p)


@dataclass(frozen=True)
class RngSeedTree:
    """Keyed random streams derived from one 64-bit master seed."""

    master_seed: int

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise ConfigurationError("master_seed must be an unsigned 64-bit integer")

    def stream(self, round: int, client: int, tag: str, replica: int = 0) -> np.random.Generator:
        return derive_stream(self, round, client, tag, replica)


def derive_stream(tree: RngSeedTree, round: int, client: int, tag: str,
                  replica: int = 0) -> np.random.Generator:
    """Return a generator whose draws depend only on the seed and the key.

    ``replica`` distinguishes independent repetitions of the same
    (round, client, tag) slot, e.g. the oracle replicas used for variance
    estimation.
    """
    if tag not in STREAM_TAGS:
        raise ConfigurationError(f"unknown stream tag {tag!r}; expected one of {STREAM_TAGS}")
    if min(round, client, replica) < 0:
        raise ConfigurationError("stream keys must be non-negative")
    seq = np.random.SeedSequence(
        entropy=int(tree.master_seed),
        spawn_key=(int(round), int(client), STREAM_TAGS.index(tag), int(replica)),
    )
    return np.random.default_rng(seq)


@dataclass
class RoundRecord:
    """What one client did in one round."""

    round: int
    client: int
    w_before: np.ndarray
    w_local: np.ndarray
    w_distorted: np.ndarray
    sampled_indices: tuple[int, ...]
    noise: np.ndarray
    noise_var: float
    p: float = 1.0
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.noise_var < 0:
            raise ConfigurationError("noise variance must be non-negative")
        diff = self.w_distorted - self.w_local
        if not np.allclose(diff, self.noise, rtol=0.0, atol=1e-12 * (1.0 + np.max(np.abs(self.w_local), initial=0.0))):
            raise ValueError("w_distorted - w_local must equal the recorded noise")


PASS, FAIL, OUT_OF_REGIME = "pass", "fail", "out-of-regime"


@dataclass
class BoundEntry:
    """One evaluated inequality ``lhs <= rhs`` with its Monte Carlo error."""

    name: str
    lhs: float
    rhs: float
    stderr: float = 0.0
    status: str = PASS
    t: int = -1
    k: int = -1
    note: str = ""

    @classmethod
    def compare(cls, name: str, lhs: float, rhs: float, stderr: float = 0.0, *, t: int = -1,
                k: int = -1, in_regime: bool = True, n_sigma: float = 3.0, atol: float = 1e-12,
                note: str = "") -> BoundEntry:
        lhs, rhs, stderr = float(lhs), float(rhs), float(stderr)
        if not in_regime or not (np.isfinite(lhs) and np.isfinite(rhs)):
            status = OUT_OF_REGIME
        elif lhs <= rhs + n_sigma * stderr + atol:
            status = PASS
        else:
            status = FAIL
        return cls(name, lhs, rhs, stderr, status, t, k, note)

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs


@dataclass
class BoundReport:
    entries: list[BoundEntry] = field(default_factory=list)
    constants: dict = field(default_factory=dict)

    def add(self, *entries: BoundEntry) -> None:
        self.entries.extend(entries)

    def extend(self, other: BoundReport) -> None:
        self.entries.extend(other.entries)

    @property
    def failures(self) -> list[BoundEntry]:
        return [e for e in self.entries if e.status == FAIL]

    @property
    def ok(self) -> bool:
        return not self.failures
