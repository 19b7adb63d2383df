"""Seedable simulator of privacy-preserving federated learning.

Clients train a linear model on Bernoulli-sampled mini-batches, distort
their parameters with calibrated Gaussian noise and upload them to a
server that averages. An exact Bayesian adversary over candidate datasets
measures the privacy leakage, and every bound relating leakage, utility
loss and total variation is evaluated numerically with a pass/fail status.
"""

from .adversary import (CandidateUniverse, LikelihoodModel, ToyInstance, compute_xi, evaluate_toy,
                        leakage_bounds, make_toy_instance, posterior, privacy_leakage)
from .config import RunConfig, ToyConfig, load_config, parse_config, write_config
from .core import (BoundEntry, BoundReport, ClientShard, ConfigurationError, EstimationError,
                   InfeasibleBudgetError, RngSeedTree, RoundRecord, ShapeError, derive_stream)
from .divergence import (DiscreteDist, GaussianDist, js_discrete, kl_discrete, tv_discrete,
                         tv_gaussian_1d, tv_monte_carlo)
from .federation import ExperimentConfig, GlobalState, client_training, run_experiment, run_round
from .metrics import (bias_variance_decomposition, check_tradeoff_bounds, check_utility_upper_bound,
                      estimate_assumption_constants, utility_loss)
from .model import LinearModel, gap, gradient, loss, pooled_loss, solve_optimum
from .protection import NoiseSpec, calibrate_noise_variance, distort
from .sampling import calibrate_sampling_probability, draw_minibatch, expected_update, update_variance

__version__ = "0.1.0"

__all__ = [
    "BoundEntry", "BoundReport", "CandidateUniverse", "ClientShard", "ConfigurationError",
    "DiscreteDist", "EstimationError", "ExperimentConfig", "GaussianDist", "GlobalState",
    "InfeasibleBudgetError", "LikelihoodModel", "LinearModel", "NoiseSpec", "RngSeedTree",
    "RoundRecord", "RunConfig", "ShapeError", "ToyConfig", "ToyInstance",
    "bias_variance_decomposition", "calibrate_noise_variance", "calibrate_sampling_probability",
    "check_tradeoff_bounds", "check_utility_upper_bound", "client_training", "compute_xi",
    "derive_stream", "distort", "draw_minibatch", "estimate_assumption_constants", "evaluate_toy",
    "expected_update", "gap", "gradient", "js_discrete", "kl_discrete", "leakage_bounds",
    "load_config", "loss", "make_toy_instance", "parse_config", "pooled_loss", "posterior",
    "privacy_leakage", "run_experiment", "run_round", "solve_optimum", "tv_discrete",
    "tv_gaussian_1d", "tv_monte_carlo", "update_variance", "utility_loss", "write_config",
]
