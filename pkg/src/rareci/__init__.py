"""Confidence intervals for rare-event rates from importance-sampled weights.

The point estimate is the inverse-probability-weighted count of observed
events. Intervals come from a Poisson bootstrap, an exponential bootstrap,
a weighted Gamma law, or one of three moment-matched Gamma variants.
"""

from .ci import check_monotonicity, compute_ci, eb_ci, gm_ci, go_ci, gp_ci, pb_ci, weighted_gamma_ci
from .core import (
    Backend,
    CiConfig,
    CiResult,
    GammaSumSpec,
    InputError,
    Method,
    NextWeightMode,
    NextWeightSpec,
    NumericalError,
    RareCIError,
    WeightSample,
    group_weights,
    validate_weights,
)
from .gamma_engine import mc_quantile, saddlepoint_quantile, saddlepoint_tail
from .next_weight import SegmentRecord, estimate_second_moment, estimate_w2, fit_gamma_index, resolve_next_weight
from .simulator import Scenario, run_study

__all__ = [
    "Backend", "CiConfig", "CiResult", "GammaSumSpec", "InputError", "Method", "NextWeightMode",
    "NextWeightSpec", "NumericalError", "RareCIError", "Scenario", "SegmentRecord", "WeightSample",
    "check_monotonicity", "compute_ci", "eb_ci", "estimate_second_moment", "estimate_w2",
    "fit_gamma_index", "gm_ci", "go_ci", "gp_ci", "group_weights", "mc_quantile", "pb_ci",
    "resolve_next_weight", "run_study", "saddlepoint_quantile", "saddlepoint_tail",
    "validate_weights", "weighted_gamma_ci",
]
__version__ = "0.1.0"
