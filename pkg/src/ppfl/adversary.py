"""Exact Bayesian adversary over a finite set of candidate datasets.

The adversary knows the previous global parameter and the sampling
probability. It scores each candidate dataset by the Gaussian density of
the observed parameter around that candidate's expected update and
normalises against the prior.

Three beliefs matter:

* the prior ``f_breve``;
* ``f``, the posterior averaged over the law ``P`` of the unprotected
  parameter;
* ``f_tilde``, the posterior for the noisy channel averaged over the law
  ``P~`` of the protected parameter. The adversary knows the noise
  variance and widens its likelihood accordingly.

Leakage is ``sqrt JS(f_tilde, f_breve)``; the pivot constant ``C1`` is
``sqrt JS(f, f_breve)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import special, stats

from .core import BoundEntry, ClientShard, ConfigurationError
from .divergence import DiscreteDist, js_discrete, tv_discrete
from .model import per_point_gradients, solve_optimum
from .sampling import expected_update, update_variance

#: variance floor added to the unprotected channel so densities stay finite
CHANNEL_FLOOR = 1e-6


class DegeneratePosteriorWarning(UserWarning):
    """The posterior could not be normalised and fell back to uniform."""


@dataclass(frozen=True)
class CandidateUniverse:
    """Candidate datasets the adversary considers, with a prior over them."""

    candidates: tuple[ClientShard, ...]
    prior: np.ndarray | None = None

    def __post_init__(self):
        cands = tuple(self.candidates)
        if len(cands) < 2:
            raise ConfigurationError("a universe needs at least two candidates")
        if len({c.dim for c in cands}) != 1:
            raise ConfigurationError("candidates differ in feature dimension")
        if self.prior is None:
            prior = np.full(len(cands), 1.0 / len(cands))
        else:
            prior = np.asarray(self.prior, dtype=np.float64).reshape(-1)
            if prior.shape != (len(cands),):
                raise ConfigurationError("prior length must match the number of candidates")
            DiscreteDist.from_array(prior)  # validates
        prior.setflags(write=False)
        object.__setattr__(self, "candidates", cands)
        object.__setattr__(self, "prior", prior)

    def __len__(self) -> int:
        return len(self.candidates)

    @property
    def prior_dist(self) -> DiscreteDist:
        return DiscreteDist.from_array(self.prior)


@dataclass(frozen=True)
class LikelihoodModel:
    """Isotropic Gaussian channel from candidate dataset to observed parameter.

    ``lr=None`` centres each candidate at the un-normalised update mean
    ``w - p sum grad``. A learning rate switches to the mean of the
    batch-normalised client step, ``w - lr (1 - (1-p)^M) mean grad``.
    """

    variance: float
    lr: float | None = None

    def __post_init__(self):
        if not self.variance > 0:
            raise ConfigurationError("channel variance must be > 0")


def candidate_means(universe: CandidateUniverse, w_prev, p: float, lr: float | None = None) -> np.ndarray:
    """Expected parameter under each candidate, shape (n_candidates, d)."""
    w_prev = np.asarray(w_prev, dtype=np.float64)
    if lr is None:
        return np.stack([expected_update(w_prev, c, p) for c in universe.candidates])
    rows = []
    for c in universe.candidates:
        g = per_point_gradients(w_prev, c.features, c.labels).mean(axis=0)
        # probability that the batch is non-empty
        keep = 1.0 if p >= 1 else -math.expm1(c.size * math.log1p(-p))
        rows.append(w_prev - lr * keep * g)
    return np.stack(rows)


def log_posterior_matrix(universe: CandidateUniverse, lik: LikelihoodModel, observed,
                         w_prev, p: float) -> np.ndarray:
    """Log posterior for each observation row, shape (n_obs, n_candidates)."""
    obs = np.atleast_2d(np.asarray(observed, dtype=np.float64))
    means = candidate_means(universe, w_prev, p, lr=lik.lr)
    if obs.shape[1] != means.shape[1]:
        raise ConfigurationError("observation and parameter dimensions differ")
    sq = ((obs[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    with np.errstate(divide="ignore"):
        logits = np.log(universe.prior)[None, :] - 0.5 * sq / lik.variance
    norm = special.logsumexp(logits, axis=1, keepdims=True)
    with np.errstate(invalid="ignore"):
        log_post = logits - norm
    bad = ~np.isfinite(norm[:, 0])
    if np.any(bad):
        warnings.warn(f"{int(bad.sum())} degenerate posterior(s) replaced by the uniform belief",
                      DegeneratePosteriorWarning, stacklevel=2)
        log_post[bad] = -math.log(len(universe))
    return log_post


def posterior(universe: CandidateUniverse, lik: LikelihoodModel, observed_w, w_prev,
              p: float) -> DiscreteDist:
    """Belief over candidates after seeing ``observed_w``."""
    log_post = log_posterior_matrix(universe, lik, observed_w, w_prev, p)[0]
    probs = np.exp(log_post)
    return DiscreteDist.from_array(probs / probs.sum())


def mixture_belief(log_post: np.ndarray, weights) -> np.ndarray:
    """Posterior averaged over observations with the given weights."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (log_post.shape[0],):
        raise ConfigurationError("one weight per observation is required")
    weights = weights / weights.sum()
    out = weights @ np.exp(log_post)
    return out / out.sum()


def xi_from_log_posterior(log_post: np.ndarray, weights=None) -> float:
    """``max |log(post(d|w) / f(d))|`` with ``f`` the weighted mixture of the rows."""
    n_obs = log_post.shape[0]
    if n_obs == 0:
        raise ConfigurationError("the parameter grid is empty")
    if weights is None:
        log_w = np.full(n_obs, -math.log(n_obs))
    else:
        weights = np.asarray(weights, dtype=np.float64)
        with np.errstate(divide="ignore"):
            log_w = np.log(weights / weights.sum())
    log_f = special.logsumexp(log_post + log_w[:, None], axis=0)
    # rows with zero weight are still part of the parameter space
    return float(np.max(np.abs(log_post - log_f[None, :])))


def compute_xi(universe: CandidateUniverse, lik: LikelihoodModel, param_grid, w_prev,
               p: float, weights=None) -> float:
    """Worst-case log ratio between posterior and marginal belief over ``param_grid``.

    The marginal is the posterior averaged over the grid with ``weights``
    (uniform by default).
    """
    grid = np.asarray(param_grid, dtype=np.float64)
    if grid.size == 0:
        raise ConfigurationError("the parameter grid is empty")
    return xi_from_log_posterior(log_posterior_matrix(universe, lik, grid, w_prev, p), weights)


def c2_from_xi(xi: float) -> float:
    """``(e^{2 xi} - 1) / 2``, infinite when it overflows."""
    return 0.5 * math.expm1(2.0 * xi) if 2.0 * xi < 709.0 else math.inf


def privacy_leakage(f_tilde, f) -> float:
    """``sqrt JS(f_tilde, f)``."""
    return math.sqrt(js_discrete(f_tilde, f))


class LeakageSandwich(NamedTuple):
    lower: float
    measured: float
    upper: float
    in_regime: bool
    entries: tuple[BoundEntry, BoundEntry]


def leakage_bounds(f_tilde, f, f_breve, tv_pw: float, xi: float, *, tv_stderr: float = 0.0,
                   t: int = -1, k: int = -1) -> LeakageSandwich:
    """Lower and upper bounds on the leakage ``sqrt JS(f_tilde, f_breve)``.

    With ``C1 = sqrt JS(f, f_breve)`` and ``C2 = (e^{2 xi} - 1) / 2``:

    * lower: ``C1 - C2 TV``, from the triangle inequality for ``sqrt JS``;
    * upper: ``2 C1 - C2 TV``, claimed when ``C2 TV <= C1``. Outside that
      regime the upper entry is reported as out-of-regime.
    """
    c1 = privacy_leakage(f, f_breve)
    c2 = c2_from_xi(xi)
    measured = privacy_leakage(f_tilde, f_breve)
    lower = c1 - c2 * tv_pw
    upper = 2.0 * c1 - c2 * tv_pw
    in_regime = c2 * tv_pw <= c1
    se = c2 * tv_stderr if tv_stderr else 0.0
    lo = BoundEntry.compare("leakage_lower", lower, measured, se, t=t, k=k)
    hi = BoundEntry.compare("leakage_upper", measured, upper, se, t=t, k=k, in_regime=in_regime)
    return LeakageSandwich(lower, measured, upper, in_regime, (lo, hi))


@dataclass(frozen=True)
class ToyInstance:
    """One-dimensional instance where every belief can be computed exactly.

    Candidate 0 is the client's true shard; the others replace one of its
    points by a fresh draw.
    """

    universe: CandidateUniverse
    w_prev: np.ndarray
    p: float
    w_star: np.ndarray
    gap_constant: float = 1.0

    @property
    def true_shard(self) -> ClientShard:
        return self.universe.candidates[0]

    @property
    def sigma_sq(self) -> float:
        """Variance of the unprotected parameter."""
        return update_variance(self.w_prev, self.true_shard, self.p)


def make_toy_instance(rng: np.random.Generator, n_points: int = 6, n_candidates: int = 6,
                      p: float = 0.5, label_noise: float = 0.5) -> ToyInstance:
    """Random scalar regression shard plus neighbouring candidate shards."""
    if n_candidates < 2 or n_candidates - 1 > n_points:
        raise ConfigurationError("need 2 <= n_candidates <= n_points + 1")
    if not 0 < p < 1:
        raise ConfigurationError("the toy instance needs 0 < p < 1")
    w_true = rng.normal()
    draw_x = lambda n: rng.choice([-1.0, 1.0], n) * rng.uniform(0.5, 1.0, n)  # noqa: E731
    x = draw_x(n_points)
    y = w_true * x + label_noise * rng.normal(size=n_points)
    shards = [ClientShard(x[:, None], y, p)]
    for i in rng.choice(n_points, n_candidates - 1, replace=False):
        x2, y2 = x.copy(), y.copy()
        x2[i] = draw_x(1)[0]
        y2[i] = w_true * x2[i] + label_noise * rng.normal()
        shards.append(ClientShard(x2[:, None], y2, p))
    w_star = solve_optimum(x[:, None], y)
    w_prev = w_star + rng.normal(0.0, 0.5, size=1)
    return ToyInstance(CandidateUniverse(tuple(shards)), w_prev, p, w_star)


@dataclass(frozen=True)
class ToyEvaluation:
    noise_var: float
    sigma_sq: float
    tv: float
    xi: float
    c1: float
    c2: float
    eps_p: float          # sqrt JS(f_tilde, prior)
    eps_p_direct: float   # sqrt JS(f_tilde, f)
    eps_u: float          # GAP(W) - GAP(W~), literal orientation
    e_var: float          # E Var[W~ | W_prev]
    f: DiscreteDist
    f_tilde: DiscreteDist
    f_breve: DiscreteDist
    extras: dict = field(default_factory=dict)

    @property
    def eps_u_degradation(self) -> float:
        return -self.eps_u


def evaluate_toy(inst: ToyInstance, noise_var: float, n_grid: int = 4001,
                 halfwidth: float = 6.0) -> ToyEvaluation:
    """Exact beliefs, TV, leakage and utility loss on a discretised parameter line.

    ``P = N(mu, sigma^2)`` and ``P~ = N(mu, sigma^2 + noise_var)`` are
    restricted to a common grid spanning ``halfwidth`` protected standard
    deviations beyond the extreme candidate means, and renormalised. All
    quantities are then finite sums over that grid. ``xi`` is taken over the
    same grid for the unprotected channel.
    """
    if noise_var < 0:
        raise ConfigurationError("noise variance must be >= 0")
    s2 = inst.sigma_sq
    if not s2 > 0:
        raise ConfigurationError("the unprotected parameter has zero variance")
    lik = LikelihoodModel(s2 + CHANNEL_FLOOR)
    means = candidate_means(inst.universe, inst.w_prev, inst.p)[:, 0]
    mu = means[0]
    spread = math.sqrt(s2 + noise_var)
    grid = np.linspace(means.min() - halfwidth * spread, means.max() + halfwidth * spread, n_grid)
    pw = stats.norm.pdf(grid, mu, math.sqrt(s2))
    pw_tilde = stats.norm.pdf(grid, mu, spread)
    pw, pw_tilde = pw / pw.sum(), pw_tilde / pw_tilde.sum()

    log_post = log_posterior_matrix(inst.universe, lik, grid[:, None], inst.w_prev, inst.p)
    lik_tilde = LikelihoodModel(s2 + noise_var + CHANNEL_FLOOR)
    log_post_tilde = log_posterior_matrix(inst.universe, lik_tilde, grid[:, None], inst.w_prev, inst.p)
    f = mixture_belief(log_post, pw)
    f_tilde = mixture_belief(log_post_tilde, pw_tilde)
    prior = inst.universe.prior
    xi = xi_from_log_posterior(log_post, pw)

    sq = inst.gap_constant * (grid - inst.w_star[0]) ** 2
    eps_u = float(pw @ sq - pw_tilde @ sq)
    return ToyEvaluation(
        noise_var=float(noise_var), sigma_sq=s2, tv=tv_discrete(pw, pw_tilde), xi=xi,
        c1=privacy_leakage(f, prior), c2=c2_from_xi(xi),
        eps_p=privacy_leakage(f_tilde, prior), eps_p_direct=privacy_leakage(f_tilde, f),
        eps_u=eps_u, e_var=s2 + noise_var,
        f=DiscreteDist.from_array(f), f_tilde=DiscreteDist.from_array(f_tilde),
        f_breve=DiscreteDist.from_array(prior),
    )
