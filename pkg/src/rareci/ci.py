"""Confidence intervals for the rate ``theta`` from observed event weights.

Methods
-------
PB  Poisson bootstrap: quantiles of ``sum_i w_i P_i`` with ``P_i ~ Poisson(1)``.
EB  Exponential bootstrap: lower from ``sum_i w_i e_i``, upper from the same
    sum plus ``w** e_{n+1}``, with ``e ~ Exponential(1)``.
WG  Weighted Gamma on grouped strata (EB is WG with every stratum of size 1).
GO  Original Gamma, moment-matched single Gammas for each bound.
GP  Mid-p Gamma: quantiles of the equal mixture of the GO lower/upper laws.
GM  Modified Gamma: GO with the next-weight contribution replaced by the
    mean and mean-square of the distinct weights.

PB, EB and WG satisfy the monotonicity property (adding events never lowers
either bound); GO, GP and GM do not.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .core import (
    Backend,
    CiConfig,
    CiResult,
    GammaSumSpec,
    Method,
    NextWeightMode,
    NextWeightSpec,
    NextWeightUnresolved,
    WeightSample,
    group_weights,
)
from .gamma_engine import MatchedGamma, mc_quantile, mixture_quantile, nearest_rank, saddlepoint_quantile
from .next_weight import SegmentRecord, resolve_next_weight

log = logging.getLogger(__name__)

FALLBACK_WARNING = "no segment data for the wm rule; fell back to the maximum observed weight"

_EXPONENTIAL, _POISSON = 0, 1
_EVENT_STREAM, _NEXT_STREAM = 0, 1


class CoupledDraws:
    """Bootstrap multipliers keyed by event identity.

    Row ``i`` of :meth:`events` depends only on ``(seed, kind, event_id)``,
    so an event gets the same ``B`` draws whether the interval is computed on
    a subset or on a superset containing it.  This makes Monte Carlo
    monotonicity hold replicate by replicate.
    """

    def __init__(self, seed: int, draws: int, kind: str = "exponential"):
        if kind not in ("exponential", "poisson"):
            raise ValueError(f"unknown draw kind {kind!r}")
        self.seed = int(seed) & (2**64 - 1)
        self.draws = int(draws)
        self.kind = kind
        self._code = _EXPONENTIAL if kind == "exponential" else _POISSON

    def _rng(self, *key: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, self._code, *key])

    def _draw(self, rng: np.random.Generator) -> np.ndarray:
        if self._code == _EXPONENTIAL:
            return rng.standard_exponential(self.draws)
        return rng.poisson(1.0, self.draws).astype(float)

    def events(self, event_ids: Iterable[int]) -> np.ndarray:
        """``(n, B)`` matrix of multipliers for the given events."""
        rows = [self._draw(self._rng(_EVENT_STREAM, int(i))) for i in event_ids]
        if not rows:
            return np.zeros((0, self.draws))
        return np.vstack(rows)

    def next_column(self) -> np.ndarray:
        return self._draw(self._rng(_NEXT_STREAM))

    def statistic(self, sample: WeightSample) -> np.ndarray:
        """Replicates ``sum_i w_i m_i`` over the sample's events."""
        if sample.n == 0:
            return np.zeros(self.draws)
        return np.asarray(sample.weights) @ self.events(sample.event_ids)


def _finish(sample: WeightSample, lower: float, upper: float, **kw) -> CiResult:
    m = sample.miles_normalizer
    lower = max(lower, 0.0) / m
    upper = max(upper, 0.0) / m
    return CiResult(point_estimate=sample.point_estimate, lower=lower, upper=max(upper, lower), **kw)


def next_weight_for(
    sample: WeightSample,
    spec: NextWeightSpec,
    records: Sequence[SegmentRecord] | None = None,
) -> tuple[float, tuple[str, ...]]:
    """Resolve ``w**``; the wm rule falls back to max-observed without data."""
    try:
        return resolve_next_weight(spec, sample, records), ()
    except NextWeightUnresolved:
        if spec.mode is NextWeightMode.WM and sample.n > 0:
            log.warning(FALLBACK_WARNING)
            return sample.max_weight, (FALLBACK_WARNING,)
        raise


def pb_ci(sample: WeightSample, cfg: CiConfig, draws: CoupledDraws | None = None) -> CiResult:
    """Poisson bootstrap percentile interval."""
    draws = draws or CoupledDraws(cfg.seed, cfg.bootstrap_draws, "poisson")
    stat = np.sort(draws.statistic(sample))
    a = cfg.alpha
    return _finish(
        sample,
        nearest_rank(stat, a / 2),
        nearest_rank(stat, 1 - a / 2),
        method=Method.PB,
        alpha=a,
        backend=Backend.MONTE_CARLO,
    )


def eb_bounds_saddlepoint(weights: Sequence[float], next_weight: float, alpha: float) -> tuple[float, float]:
    """EB lower/upper by the saddlepoint approximation, in weight units."""
    terms = tuple((float(w), 1.0) for w in weights)
    lower = saddlepoint_quantile(GammaSumSpec(terms), 1 - alpha / 2)
    upper = saddlepoint_quantile(GammaSumSpec(terms, float(next_weight)), alpha / 2)
    return lower, upper


def eb_ci(
    sample: WeightSample,
    cfg: CiConfig,
    records: Sequence[SegmentRecord] | None = None,
    draws: CoupledDraws | None = None,
    next_weight: float | None = None,
) -> CiResult:
    """Exponential bootstrap interval.

    ``next_weight`` overrides ``cfg.next_weight`` when given.
    """
    warnings: tuple[str, ...] = ()
    if next_weight is None:
        next_weight, warnings = next_weight_for(sample, cfg.next_weight, records)
    a = cfg.alpha
    if cfg.backend is Backend.SADDLEPOINT:
        lower, upper = eb_bounds_saddlepoint(sample.weights, next_weight, a)
    else:
        draws = draws or CoupledDraws(cfg.seed, cfg.bootstrap_draws, "exponential")
        base = draws.statistic(sample)
        lower = nearest_rank(np.sort(base), a / 2)
        upper = nearest_rank(np.sort(base + next_weight * draws.next_column()), 1 - a / 2)
    return _finish(
        sample, lower, upper, method=Method.EB, alpha=a, next_weight_used=next_weight,
        backend=cfg.backend, warnings=warnings,
    )


def weighted_gamma_ci(
    strata: Sequence[tuple[float, float]],
    next_weight: float,
    alpha: float,
    backend: Backend | str = Backend.SADDLEPOINT,
    draws: int = 10_000,
    seed: int = 0,
    miles_normalizer: float = 1.0,
) -> CiResult:
    """Weighted Gamma interval on ``(weight, count)`` strata."""
    backend = Backend.parse(backend)
    lower_spec = GammaSumSpec.from_strata(strata)
    upper_spec = GammaSumSpec.from_strata(strata, next_weight)
    if backend is Backend.SADDLEPOINT:
        lower = saddlepoint_quantile(lower_spec, 1 - alpha / 2)
        upper = saddlepoint_quantile(upper_spec, alpha / 2)
    else:
        lower = mc_quantile(lower_spec, alpha / 2, draws, [seed, 0]) if not lower_spec.is_empty else 0.0
        upper = mc_quantile(upper_spec, 1 - alpha / 2, draws, [seed, 1]) if not upper_spec.is_empty else 0.0
    m = miles_normalizer
    return CiResult(
        point_estimate=lower_spec.mean / m,
        lower=max(lower, 0.0) / m,
        upper=max(upper, lower, 0.0) / m,
        method=Method.WG,
        alpha=alpha,
        next_weight_used=next_weight,
        backend=backend,
    )


def gamma_laws(weights: Sequence[float], next_mean: float, next_var: float) -> tuple[MatchedGamma, MatchedGamma]:
    """Moment-matched Gammas generating the lower and upper bounds."""
    w = np.asarray(weights, dtype=float)
    mean = math.fsum(w)
    var = math.fsum(w * w)
    return MatchedGamma(mean, var), MatchedGamma(mean + next_mean, var + next_var)


def go_ci(sample: WeightSample, next_weight: float, alpha: float) -> CiResult:
    """Original Gamma interval with next weight ``next_weight``."""
    g_lo, g_up = gamma_laws(sample.weights, next_weight, next_weight**2)
    return _finish(
        sample, g_lo.quantile(alpha / 2), g_up.quantile(1 - alpha / 2),
        method=Method.GO, alpha=alpha, next_weight_used=next_weight,
    )


def gp_ci(sample: WeightSample, next_weight: float, alpha: float) -> CiResult:
    """Mid-p Gamma interval: quantiles of the 50/50 mixture of the GO laws."""
    laws = list(gamma_laws(sample.weights, next_weight, next_weight**2))
    return _finish(
        sample, mixture_quantile(laws, alpha / 2), mixture_quantile(laws, 1 - alpha / 2),
        method=Method.GP, alpha=alpha, next_weight_used=next_weight,
    )


def gm_ci(strata: Sequence[tuple[float, float]], alpha: float, miles_normalizer: float = 1.0) -> CiResult:
    """Modified Gamma interval on ``(weight, count)`` strata.

    The upper law adds ``mean(w_k)`` to the mean and ``mean(w_k**2)`` to the
    variance, over the ``K`` distinct weights.  With no strata there is no
    next-weight information and the interval is ``[0, 0]``.
    """
    strata = [(float(w), float(x)) for w, x in strata if x > 0]
    if not strata:
        return CiResult(0.0, 0.0, 0.0, Method.GM, alpha, warnings=("no events: modified Gamma upper bound undefined",))
    k = len(strata)
    next_mean = math.fsum(w for w, _ in strata) / k
    next_var = math.fsum(w * w for w, _ in strata) / k
    mean = math.fsum(w * x for w, x in strata)
    var = math.fsum(w * w * x for w, x in strata)
    g_lo, g_up = MatchedGamma(mean, var), MatchedGamma(mean + next_mean, var + next_var)
    m = miles_normalizer
    return CiResult(
        point_estimate=mean / m,
        lower=g_lo.quantile(alpha / 2) / m,
        upper=g_up.quantile(1 - alpha / 2) / m,
        method=Method.GM,
        alpha=alpha,
        next_weight_used=math.sqrt(next_var),
    )


def compute_ci(
    sample: WeightSample,
    cfg: CiConfig,
    records: Sequence[SegmentRecord] | None = None,
    draws: CoupledDraws | None = None,
) -> CiResult:
    """Interval for ``sample`` with the method named in ``cfg``."""
    method = cfg.method
    if method is Method.PB:
        return pb_ci(sample, cfg, draws)
    if method is Method.EB:
        return eb_ci(sample, cfg, records, draws)
    if method is Method.GM:
        return gm_ci(group_weights(sample), cfg.alpha, sample.miles_normalizer)
    nw, warnings = next_weight_for(sample, cfg.next_weight, records)
    if method is Method.WG:
        res = weighted_gamma_ci(
            group_weights(sample), nw, cfg.alpha, cfg.backend, cfg.bootstrap_draws, cfg.seed,
            sample.miles_normalizer,
        )
    elif method is Method.GO:
        res = go_ci(sample, nw, cfg.alpha)
    else:
        res = gp_ci(sample, nw, cfg.alpha)
    return replace(res, warnings=res.warnings + warnings)


@dataclass(frozen=True)
class MonotonicityRow:
    method: Method
    subset: CiResult
    union: CiResult

    @property
    def lower_violation(self) -> bool:
        return self.subset.lower > self.union.lower

    @property
    def upper_violation(self) -> bool:
        return self.subset.upper > self.union.upper

    @property
    def violated(self) -> bool:
        return self.lower_violation or self.upper_violation


def check_pair(
    subset: WeightSample,
    union: WeightSample,
    methods: Iterable[Method | str],
    cfg: CiConfig,
    records: Sequence[SegmentRecord] | None = None,
) -> list[MonotonicityRow]:
    """Compare intervals for ``subset`` and ``union`` method by method.

    Monte Carlo methods share :class:`CoupledDraws` between the two calls, so
    event identities (``event_ids``) must agree between the samples.
    """
    rows = []
    for method in methods:
        mcfg = replace(cfg, method=Method.parse(method))
        draws = None
        if mcfg.method is Method.PB:
            draws = CoupledDraws(cfg.seed, cfg.bootstrap_draws, "poisson")
        elif mcfg.method is Method.EB and cfg.backend is Backend.MONTE_CARLO:
            draws = CoupledDraws(cfg.seed, cfg.bootstrap_draws, "exponential")
        rows.append(
            MonotonicityRow(
                mcfg.method,
                compute_ci(subset, mcfg, records, draws),
                compute_ci(union, mcfg, records, draws),
            )
        )
    return rows


def check_monotonicity(
    full: WeightSample,
    subset_category: str,
    methods: Iterable[Method | str],
    cfg: CiConfig,
    records: Sequence[SegmentRecord] | None = None,
) -> list[MonotonicityRow]:
    """Does pooling every category with ``subset_category`` raise both bounds?"""
    return check_pair(full.subset(subset_category), full, methods, cfg, records)
