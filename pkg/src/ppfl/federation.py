"""Federated rounds: calibration, client training, distortion and aggregation.

Each round, every client

1. resolves its budget gap ``C1 - tau`` from the round's ``C1`` estimate;
2. calibrates the sampling probability from ``C6 (C1 - tau) / sum ||grad||^2``;
3. runs replica trainings to estimate the parameter variance;
4. calibrates the noise variance ``100 sigma^2 (C1 - tau) / sqrt(d)``;
5. trains once for real and distorts the result.

The server then takes the ``n_k / n`` weighted mean of the uploads. The
replica pairs (undistorted, distorted) drive the per-round TV, utility-loss
and leakage measurements. ``C1`` for round 0 comes from the config; later
rounds reuse the previous round's measured value.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .adversary import (CHANNEL_FLOOR, CandidateUniverse, LikelihoodModel, c2_from_xi,
                        candidate_means, leakage_bounds, log_posterior_matrix, mixture_belief,
                        privacy_leakage, xi_from_log_posterior)
from .core import (BoundEntry, BoundReport, ClientShard, ConfigurationError, InfeasibleBudgetError,
                   RngSeedTree, RoundRecord, as_param)
from .divergence import check_js_tv_bound, tv_monte_carlo
from .metrics import (check_tradeoff_bounds, check_utility_upper_bound, estimate_assumption_constants,
                      utility_loss)
from .model import per_point_gradients, solve_optimum
from .protection import NoiseSpec, calibrate_noise_variance, distort, replica_variance
from .sampling import calibrate_sampling_probability, draw_minibatch, gradient_sq_sum, sampling_target

#: replica slots reserved for data generation in the oracle stream
DATA_SLOT = 2**31
FEATURE_LAWS = ("sphere", "ball")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run depends on.

    Protection is set by at most one of ``tau`` (absolute budget) and
    ``budget_gap`` (``C1 - tau`` directly). A fixed ``p`` excludes both and
    may be combined with a fixed ``noise_var``. With none of them the run is
    plain FedSGD with full batches.
    """

    n_clients: int = 2
    n_rounds: int = 20
    dim: int = 2
    points_per_client: int = 8
    lr: float = 0.1
    tau: float | None = None
    budget_gap: float | None = None
    p: float | None = None
    noise_var: float | None = None
    p_free: float = 1.0
    c6: float | None = None
    c1_prior: float = 0.01
    sampling_rounds: int = 1
    n_replicas: int = 30
    n_candidates: int = 4
    feature_law: str = "sphere"
    label_noise: float = 0.3
    gap_constant: float = 1.0
    delta: float | None = None
    gamma: float = 1.0
    master_seed: int = 0

    def __post_init__(self):
        if self.n_clients < 1 or self.dim < 1 or self.points_per_client < 1:
            raise ConfigurationError("n_clients, dim and points_per_client must be >= 1")
        if self.n_rounds < 0:
            raise ConfigurationError("n_rounds must be >= 0")
        if not self.lr > 0:
            raise ConfigurationError("lr must be > 0")
        if self.tau is not None and self.budget_gap is not None:
            raise ConfigurationError("set at most one of tau and budget_gap")
        if self.p is not None and (self.tau is not None or self.budget_gap is not None):
            raise ConfigurationError("a fixed p cannot be combined with a privacy budget")
        if self.noise_var is not None and self.p is None:
            raise ConfigurationError("a fixed noise_var requires a fixed p")
        for name in ("tau", "budget_gap", "noise_var"):
            v = getattr(self, name)
            if v is not None and not v >= 0:
                raise ConfigurationError(f"{name} must be >= 0")
        for name in ("p", "p_free"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1]")
        if self.c6 is not None and not self.c6 > 0:
            raise ConfigurationError("c6 must be > 0")
        if not self.c1_prior >= 0:
            raise ConfigurationError("c1_prior must be >= 0")
        if self.sampling_rounds < 1:
            raise ConfigurationError("sampling_rounds must be >= 1")
        if self.n_replicas < 2:
            raise ConfigurationError("n_replicas must be >= 2")
        if self.n_candidates < 2 or self.n_candidates - 1 > self.points_per_client:
            raise ConfigurationError("need 2 <= n_candidates <= points_per_client + 1")
        if self.feature_law not in FEATURE_LAWS:
            raise ConfigurationError(f"feature_law must be one of {FEATURE_LAWS}")
        if not self.label_noise >= 0 or not self.gap_constant > 0 or not self.gamma > 0:
            raise ConfigurationError("label_noise >= 0, gap_constant > 0 and gamma > 0 required")
        if self.delta is not None and not self.delta > 0:
            raise ConfigurationError("delta must be > 0")
        RngSeedTree(self.master_seed)

    @property
    def protected(self) -> bool:
        return self.tau is not None or self.budget_gap is not None

    def budget_gap_at(self, c1: float) -> float:
        """``C1 - tau`` for the round's ``C1`` estimate (0 when unprotected)."""
        if self.budget_gap is not None:
            return self.budget_gap
        if self.tau is not None:
            return c1 - self.tau
        return 0.0


@dataclass(frozen=True)
class FederatedData:
    shards: tuple[ClientShard, ...]
    candidates: tuple[CandidateUniverse, ...]
    w_true: np.ndarray
    w_star: np.ndarray

    @property
    def weights(self) -> np.ndarray:
        n = np.array([s.size for s in self.shards], dtype=np.float64)
        return n / n.sum()


def _features(rng: np.random.Generator, n: int, d: int, law: str) -> np.ndarray:
    x = rng.normal(size=(n, d))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    if law == "ball":
        x *= rng.random((n, 1)) ** (1.0 / d)
    return x


def make_federated_data(config: ExperimentConfig) -> FederatedData:
    """Synthetic linear-regression shards plus each client's neighbouring candidates.

    Features are uniform on the unit sphere or in the unit ball; labels are
    ``x . w_true + label_noise * N(0, 1)``. Candidate 0 is the true shard;
    every other candidate replaces one point by a fresh draw.
    """
    tree = RngSeedTree(config.master_seed)
    d, m = config.dim, config.points_per_client
    w_true = tree.stream(0, 0, "oracle", DATA_SLOT).normal(0.0, 1.0 / math.sqrt(d), d)
    shards, universes = [], []
    for k in range(config.n_clients):
        rng = tree.stream(0, k, "oracle", DATA_SLOT + 1)
        x = _features(rng, m, d, config.feature_law)
        y = x @ w_true + config.label_noise * rng.normal(size=m)
        shard = ClientShard(x, y)
        cands = [shard]
        for i in rng.choice(m, config.n_candidates - 1, replace=False):
            x2, y2 = x.copy(), y.copy()
            x2[i] = _features(rng, 1, d, config.feature_law)[0]
            y2[i] = x2[i] @ w_true + config.label_noise * rng.normal()
            cands.append(ClientShard(x2, y2))
        shards.append(shard)
        universes.append(CandidateUniverse(tuple(cands)))
    pooled_x = np.vstack([s.features for s in shards])
    pooled_y = np.concatenate([s.labels for s in shards])
    return FederatedData(tuple(shards), tuple(universes), w_true, solve_optimum(pooled_x, pooled_y))


def local_step(w_global, shard: ClientShard, batch: np.ndarray, lr: float) -> np.ndarray:
    """``w - lr * mean of the batch gradients``; an empty batch leaves ``w`` unchanged."""
    w = np.asarray(w_global, dtype=np.float64)
    if batch.size == 0:
        return w.copy()
    g = per_point_gradients(w, shard.features[batch], shard.labels[batch])
    return w - lr * g.mean(axis=0)


def client_training(k: int, w_global, shard: ClientShard, p: float, config: ExperimentConfig,
                    stream: np.random.Generator) -> tuple[np.ndarray, tuple[int, ...]]:
    """One client's local training: ``sampling_rounds`` Bernoulli(p) mini-batch steps.

    Returns the undistorted parameter and the indices of the last batch.
    """
    w = as_param(w_global, config.dim)
    batch = np.empty(0, dtype=np.int64)
    for _ in range(config.sampling_rounds):
        batch = draw_minibatch(shard, stream, p)
        w = local_step(w, shard, batch, config.lr)
    return w, tuple(int(i) for i in batch)


def aggregate(uploads, weights) -> np.ndarray:
    """Weighted mean of the client uploads."""
    uploads = np.atleast_2d(np.asarray(uploads, dtype=np.float64))
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (uploads.shape[0],):
        raise ConfigurationError("one weight per upload is required")
    return weights @ uploads


@dataclass
class GlobalState:
    """Current aggregate, per-round C1 estimates and every client record."""

    w: np.ndarray
    round: int = 0
    c1: float = 0.0
    records: list[RoundRecord] = field(default_factory=list)
    history: list[list[tuple[np.ndarray, float]]] = field(default_factory=list)


@dataclass(frozen=True)
class ClientMeasurement:
    """Replica-based measurements of one client in one round."""

    p: float
    noise_var: float
    c1t: float
    sigma_sq: float
    e_var: float
    tv: float
    tv_stderr: float
    eps_u: float
    eps_u_stderr: float
    eps_p: float
    c1_measured: float
    xi: float
    c6: float
    c6_source: str


def _resolve_p(config: ExperimentConfig, gap_value: float, c6: float, w, shard: ClientShard,
               t: int, k: int) -> float:
    if config.p is not None:
        return config.p
    if not config.protected or gap_value <= 0:
        return config.p_free
    target = sampling_target(c6, gap_value, gradient_sq_sum(w, shard))
    try:
        sp = calibrate_sampling_probability(target)
    except InfeasibleBudgetError as err:
        raise InfeasibleBudgetError(f"client {k}, round {t}: {err}", client=k, round=t) from None
    return config.p_free if sp.free else sp.p


def estimate_c6(w, shard: ClientShard, lr: float, w_star, history=()) -> float:
    """Combined constant from past ``(replicas, tv)`` pairs of one client.

    A full-batch step from ``w`` is always added as a reference point so the
    norm constants are defined from round 0 on.
    """
    pilot = local_step(w, shard, np.arange(shard.size), lr)
    past = [(np.stack([np.asarray(w, dtype=np.float64), pilot]), 0.0), *history]
    return estimate_assumption_constants(past, w_star).c6


def _resolve_c6(config: ExperimentConfig, state: GlobalState, k: int, w, shard: ClientShard,
                w_star) -> tuple[float, str]:
    if config.c6 is not None:
        return config.c6, "config"
    return estimate_c6(w, shard, config.lr, w_star, [h[k] for h in state.history]), "estimate"


class Beliefs(NamedTuple):
    f: np.ndarray        # posterior averaged over undistorted replicas
    f_tilde: np.ndarray  # posterior averaged over distorted replicas
    prior: np.ndarray
    xi: float


def _beliefs(universe: CandidateUniverse, config: ExperimentConfig, w, p: float, sigma_sq: float,
             noise_var: float, plain: np.ndarray, noisy: np.ndarray) -> Beliefs:
    """Adversary beliefs averaged over the replicas, and ``xi`` over the realised points."""
    prior = universe.prior
    if p <= 0:
        # nothing is ever trained, so the parameter carries no information
        return Beliefs(prior, prior, prior, 0.0)
    lik = LikelihoodModel(sigma_sq + CHANNEL_FLOOR, lr=config.lr)
    lik_tilde = LikelihoodModel(sigma_sq + noise_var + CHANNEL_FLOOR, lr=config.lr)
    log_post = log_posterior_matrix(universe, lik, plain, w, p)
    log_post_tilde = log_posterior_matrix(universe, lik_tilde, noisy, w, p)
    realized = np.vstack([plain, noisy, candidate_means(universe, w, p, lr=config.lr)])
    xi = xi_from_log_posterior(log_posterior_matrix(universe, lik, realized, w, p))
    return Beliefs(mixture_belief(log_post, np.ones(len(plain))),
                   mixture_belief(log_post_tilde, np.ones(len(noisy))), prior, xi)


def run_round(t: int, state: GlobalState, config: ExperimentConfig, data: FederatedData,
              report: BoundReport | None = None) -> GlobalState:
    """Execute one round for every client and aggregate the uploads."""
    tree = RngSeedTree(config.master_seed)
    w = state.w
    uploads, c1_next, hist = [], [], []
    for k, shard in enumerate(data.shards):
        gap_value = config.budget_gap_at(state.c1)
        c6, c6_source = _resolve_c6(config, state, k, w, shard, data.w_star)
        p = _resolve_p(config, gap_value, c6, w, shard, t, k)

        plain = np.stack([client_training(k, w, shard, p, config, tree.stream(t, k, "oracle", r))[0]
                          for r in range(config.n_replicas)])
        sigma_sq = replica_variance(plain)
        if config.noise_var is not None:
            noise_var = config.noise_var
        elif config.protected and gap_value > 0 and sigma_sq > 0:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                noise_var = calibrate_noise_variance(sigma_sq, config.dim, gap_value).variance
        else:
            noise_var = 0.0
        spec = NoiseSpec(noise_var, config.dim)
        noise_rng = tree.stream(t, k, "oracle", config.n_replicas)
        noisy = np.stack([distort(row, spec, noise_rng)[0] for row in plain])

        tv = tv_monte_carlo(plain, noisy, rng=tree.stream(t, k, "oracle", config.n_replicas + 1))
        eu = utility_loss(plain, noisy, data.w_star, config.gap_constant, min_replicas=2)
        # conditional variance of the simulated upload given the round's start point
        e_var = config.dim * (sigma_sq + noise_var)
        beliefs = _beliefs(data.candidates[k], config, w, p, sigma_sq, noise_var, plain, noisy)
        c1_measured = privacy_leakage(beliefs.f, beliefs.prior)
        eps_p = privacy_leakage(beliefs.f_tilde, beliefs.prior)
        xi = beliefs.xi

        w_local, batch = client_training(k, w, shard, p, config, tree.stream(t, k, "sample"))
        w_tilde, noise = distort(w_local, spec, tree.stream(t, k, "noise"))
        meas = ClientMeasurement(p, noise_var, state.c1, sigma_sq, e_var, tv.estimate, tv.stderr,
                                 eu.eps_u, eu.stderr, eps_p, c1_measured, xi, c6, c6_source)
        state.records.append(RoundRecord(t, k, w.copy(), w_local, w_tilde, batch, noise, noise_var, p,
                                         {"measurement": meas}))
        uploads.append(w_tilde)
        c1_next.append(c1_measured)
        hist.append((noisy, tv.estimate))
        if report is not None:
            _check_round(report, config, meas, beliefs, t, k)
    new_w = aggregate(uploads, data.weights)
    state.history.append(hist)
    return GlobalState(new_w, t + 1, float(np.mean(c1_next)), state.records, state.history)


def _check_round(report: BoundReport, config: ExperimentConfig, m: ClientMeasurement,
                 beliefs: Beliefs, t: int, k: int) -> None:
    sandwich = leakage_bounds(beliefs.f_tilde, beliefs.f, beliefs.prior, m.tv, m.xi,
                              tv_stderr=m.tv_stderr, t=t, k=k)
    report.add(*sandwich.entries)
    report.add(check_js_tv_bound(beliefs.f_tilde, beliefs.f, m.tv, m.xi, t=t, k=k,
                                 tv_stderr=m.tv_stderr))
    report.add(*check_utility_upper_bound(m.eps_u, m.eps_u_stderr, m.e_var, m.tv, m.tv_stderr, m.c6,
                                          t=t, k=k))
    report.add(*check_tradeoff_bounds(m.eps_p, m.eps_u, m.e_var, m.c1_measured, m.xi, m.c6,
                                      delta=config.delta, gamma=config.gamma,
                                      eps_u_stderr=m.eps_u_stderr, t=t, k=k))
    gap_value = config.budget_gap_at(m.c1t)
    if config.protected and gap_value > 0:
        report.add(BoundEntry.compare("budget_tv", gap_value, m.tv, m.tv_stderr, t=t, k=k,
                                      note="TV >= C1 - tau"))
    c2 = c2_from_xi(m.xi)
    report.constants.setdefault("per_round", []).append(
        {"t": t, "k": k, "C1t": m.c1t, "C1_measured": m.c1_measured, "C2": c2, "C6": m.c6,
         "C6_source": m.c6_source, "xi": m.xi, "gamma": config.gamma, "delta": config.delta})


def run_experiment(config: ExperimentConfig, *, on_round=None) -> tuple[GlobalState, BoundReport]:
    """Run ``n_rounds`` rounds from the zero parameter and collect the bound checks.

    ``on_round(state, report)`` is called after every round, e.g. to append
    report rows as they become available.
    """
    data = make_federated_data(config)
    state = GlobalState(np.zeros(config.dim), 0, config.c1_prior)
    report = BoundReport(constants={"C": config.gap_constant, "gamma": config.gamma,
                                    "delta": config.delta, "C1_prior": config.c1_prior,
                                    "w_star": data.w_star.tolist()})
    for t in range(config.n_rounds):
        state = run_round(t, state, config, data, report)
        if on_round is not None:
            on_round(state, report)
    return state, report
