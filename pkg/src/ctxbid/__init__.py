"""Learning to bid in repeated contextual first-price auctions.

Competing bids follow ``m = alpha0 . x + z`` with log-concave noise ``z``.
The package provides the noise models and the virtual-bid map, a
log-concave density estimator, likelihood losses with projected gradient
descent, a seeded auction simulator, the learning policies and an
experiment harness.
"""

from .environment import ContextDist, EnvironmentConfig, ValueFn, draw_round, draw_rounds, expected_utility
from .errors import (
    ConfigError,
    ConvergenceError,
    CtxBidError,
    DegenerateError,
    InsufficientDataError,
    NumericalError,
    SupportError,
)
from .harness import ExperimentConfig, RegretTrace, fit_scaling, run_experiment, run_lower_bound_instance
from .logconcave import EmpiricalCdf, LogConcaveFit, cdf_of_fit, fit_logconcave, knot_sandwich_check
from .noise import NoiseConstants, NoiseModel, noise_constants
from .optim import Batch, LambdaSet, loss_binary_known, loss_binary_partial, loss_full_info, minimize
from .optim import project_l1, project_lambda
from .policies import EpisodeSchedule, PolicyState, clairvoyant_bid

__version__ = "0.1.0"
