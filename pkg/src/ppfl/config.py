"""Sectioned key-value run configuration.

Example::

    [experiment]
    n_clients = 2
    n_rounds = 20
    dim = 2

    [privacy]
    budget_gap = 0.005

    [toy]
    noise_ratios = 0.001, 0.01, 0.1, 1, 10

Sections map onto :class:`ppfl.federation.ExperimentConfig` (``experiment``,
``privacy`` and ``constants``) and :class:`ToyConfig` (``toy``). Unknown
sections or keys are rejected; missing keys take their defaults. Optional
values are written as ``none``.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import math
import types
import typing
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import ConfigurationError
from .federation import ExperimentConfig, estimate_c6, make_federated_data
from .sampling import gradient_sq_sum, sampling_target

SECTIONS = {
    "experiment": ("n_clients", "n_rounds", "dim", "points_per_client", "lr", "sampling_rounds",
                   "n_replicas", "n_candidates", "feature_law", "label_noise", "gap_constant",
                   "master_seed"),
    "privacy": ("tau", "budget_gap", "p", "noise_var", "p_free", "c1_prior"),
    "constants": ("c6", "delta", "gamma"),
}


class InfeasibleBudgetWarning(UserWarning):
    """The configured budget needs ``p(1-p)`` above 1/4 in the first round."""


@dataclass(frozen=True)
class ToyConfig:
    """Exact one-dimensional adversary instance used by verify-bounds and sweep."""

    n_points: int = 6
    n_candidates: int = 6
    p: float = 0.5
    label_noise: float = 0.5
    noise_ratios: tuple[float, ...] = (0.001, 0.01, 0.1, 1.0, 10.0)
    delta: float | None = 1.0
    n_grid: int = 4001
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "noise_ratios", tuple(float(v) for v in self.noise_ratios))
        if not self.noise_ratios or any(not v >= 0 for v in self.noise_ratios):
            raise ConfigurationError("noise_ratios must be a non-empty list of values >= 0")
        if not 0 < self.p < 1:
            raise ConfigurationError("toy p must lie in (0, 1)")
        if self.n_candidates < 2 or self.n_candidates - 1 > self.n_points:
            raise ConfigurationError("need 2 <= n_candidates <= n_points + 1")
        if self.delta is not None and not self.delta > 0:
            raise ConfigurationError("delta must be > 0")
        if self.n_grid < 3:
            raise ConfigurationError("n_grid must be >= 3")


@dataclass(frozen=True)
class RunConfig:
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    toy: ToyConfig = field(default_factory=ToyConfig)


def _field_types(cls) -> dict:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def _parse(name: str, raw: str, hint):
    raw = raw.strip()
    optional = False
    if isinstance(hint, types.UnionType) or typing.get_origin(hint) is typing.Union:
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        hint, optional = args[0], True
    if optional and raw.lower() == "none":
        return None
    try:
        if typing.get_origin(hint) is tuple:
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if hint is int:
            return int(raw)
        if hint is float:
            value = float(raw)
            if math.isnan(value):
                raise ValueError("nan")
            return value
        return raw
    except ValueError:
        raise ConfigurationError(f"{name}: cannot parse {raw!r} as {getattr(hint, '__name__', hint)}") from None


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str) -> RunConfig:
    """Build a validated :class:`RunConfig` from config text."""
    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise ConfigurationError(f"malformed config: {err}") from None
    allowed = set(SECTIONS) | {"toy"}
    unknown = set(parser.sections()) - allowed
    if unknown:
        raise ConfigurationError(f"unknown section(s): {sorted(unknown)}")
    exp_types, toy_types = _field_types(ExperimentConfig), _field_types(ToyConfig)
    exp_kwargs, toy_kwargs = {}, {}
    for section in parser.sections():
        keys = SECTIONS.get(section, tuple(toy_types))
        for key, raw in parser.items(section):
            if key not in keys:
                raise ConfigurationError(f"unknown key {section}.{key}")
            if section == "toy":
                toy_kwargs[key] = _parse(f"toy.{key}", raw, toy_types[key])
            else:
                exp_kwargs[key] = _parse(f"{section}.{key}", raw, exp_types[key])
    if "p" in exp_kwargs and exp_kwargs["p"] is not None and any(
            exp_kwargs.get(k) is not None for k in ("tau", "budget_gap")):
        raise ConfigurationError("privacy.p and a privacy budget (tau or budget_gap) are mutually exclusive")
    return RunConfig(ExperimentConfig(**exp_kwargs), ToyConfig(**toy_kwargs))


def write_config(config: RunConfig) -> str:
    """Serialise every field; ``parse_config(write_config(c)) == c``."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section, keys in SECTIONS.items():
        parser[section] = {k: _format(getattr(config.experiment, k)) for k in keys}
    parser["toy"] = {f.name: _format(getattr(config.toy, f.name)) for f in dataclasses.fields(ToyConfig)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def load_config(path) -> RunConfig:
    """Read, validate and feasibility-check a config file.

    A budget whose first-round sampling target exceeds 1/4 is accepted with
    an :class:`InfeasibleBudgetWarning`; the run itself will then fail.
    """
    with open(path, encoding="utf-8") as fh:
        config = parse_config(fh.read())
    for message in budget_feasibility(config.experiment):
        warnings.warn(message, InfeasibleBudgetWarning, stacklevel=2)
    return config


def budget_feasibility(config: ExperimentConfig) -> list[str]:
    """Clients whose round-0 sampling target ``p(1-p) >= c`` has ``c > 1/4``."""
    if not config.protected:
        return []
    gap_value = config.budget_gap_at(config.c1_prior)
    if gap_value <= 0:
        return []
    data = make_federated_data(config)
    w = np.zeros(config.dim)
    out = []
    for k, shard in enumerate(data.shards):
        c6 = config.c6 if config.c6 is not None else estimate_c6(w, shard, config.lr, data.w_star)
        target = sampling_target(c6, gap_value, gradient_sq_sum(w, shard))
        if target > 0.25:
            out.append(f"client {k}: round-0 sampling target {target:.6g} exceeds 1/4")
    return out
