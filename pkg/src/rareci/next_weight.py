"""Estimating the next weight ``w**`` from segment sampling metadata.

The recommended next weight is ``w_m = max(||w||_2, w_1, ..., w_n)`` where
``||w||_2 = sqrt(E(W^2 | W > 0))``.  The second moment is estimated with a
Hajek-type ratio over all simulated segments, assuming the true-positive
probability follows ``r(v) ~ p(v)**(1/gamma)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import optimize

from .core import InputError, NextWeightMode, NextWeightSpec, NextWeightUnresolved, NumericalError, WeightSample

GAMMA_MAX = 2.0
MIN_FIT_RECORDS = 30
GREEDY_RATIO = 1e6


class NoSimulatedRecords(InputError):
    pass


class ZeroDenominator(NumericalError):
    pass


class InsufficientData(InputError):
    pass


class Unidentifiable(InputError):
    pass


class GreedySamplingVariance(NumericalError):
    """The estimated second moment is infinite or absurdly large."""


@dataclass(frozen=True)
class SegmentRecord:
    segment_id: str
    s_prob: float
    h_prob: float | None
    p_prob: float
    simulated: bool
    reviewed: bool
    outcome: bool | None = None

    def __post_init__(self):
        if not 0 < self.s_prob <= 1:
            raise InputError(f"{self.segment_id}: s_prob must be in (0, 1]")
        if not 0 <= self.p_prob <= 1:
            raise InputError(f"{self.segment_id}: p_prob must be in [0, 1]")
        if self.h_prob is not None:
            if not 0 <= self.h_prob <= 1:
                raise InputError(f"{self.segment_id}: h_prob must be in [0, 1]")
            if abs(self.p_prob - self.s_prob * self.h_prob) > 1e-12:
                raise InputError(f"{self.segment_id}: p_prob must equal s_prob * h_prob")
        if self.reviewed and not self.simulated:
            raise InputError(f"{self.segment_id}: reviewed segments must be simulated")
        if self.outcome is not None and not self.reviewed:
            raise InputError(f"{self.segment_id}: outcome is only observable for reviewed segments")


def estimate_second_moment(records: Sequence[SegmentRecord], gamma_hat: float) -> float:
    """Hajek estimate of ``E(W^2 | W > 0)`` under ``r ~ p**(1/gamma_hat)``.

    Only simulated records with ``p > 0`` enter the sums; each is weighted
    by ``1/s``.  The unknown scale of ``r`` cancels, so it is computed in log
    space relative to the largest ``p`` to avoid under/overflow at small
    ``gamma_hat``.
    """
    if not gamma_hat > 0:
        raise InputError("gamma_hat must be > 0")
    sim = [r for r in records if r.simulated and r.p_prob > 0]
    if not sim:
        raise NoSimulatedRecords("no simulated records with p > 0")
    s = np.array([r.s_prob for r in sim])
    p = np.array([r.p_prob for r in sim])
    return _second_moment(s, p, gamma_hat)


def _second_moment(s: np.ndarray, p: np.ndarray, gamma_hat: float) -> float:
    log_p = np.log(p)
    log_r = (log_p - log_p.max()) / gamma_hat
    # numerator sum r/(s p), denominator sum r p / s, both rescaled by max p
    num = np.exp(log_r - np.log(s) - (log_p - log_p.max())).sum()
    den = np.exp(log_r - np.log(s) + (log_p - log_p.max())).sum()
    if not den > 0:
        raise ZeroDenominator("denominator of the second-moment estimate is zero")
    return float(num / den) / float(p.max()) ** 2


def estimate_w2(records: Sequence[SegmentRecord], gamma_hat: float) -> float:
    """``||w||_2`` estimate: square root of :func:`estimate_second_moment`."""
    return math.sqrt(estimate_second_moment(records, gamma_hat))


def _neg_loglik(p: np.ndarray, y: np.ndarray, gamma: float, log_c: float) -> float:
    prob = np.exp(log_c + np.log(p) / gamma)
    prob = np.clip(prob, 1e-300, 1.0 - 1e-12)
    return -float(np.sum(np.where(y, np.log(prob), np.log1p(-prob))))


def _profile(p: np.ndarray, y: np.ndarray, gamma: float) -> tuple[float, float]:
    """Best ``log c`` for fixed ``gamma`` and the minimized negative log-likelihood."""
    log_scaled = np.log(p) / gamma
    # c * max(p)^(1/gamma) > 1 clips everything at the top, so cap log c there
    upper = -log_scaled.max() + math.log1p(-1e-12)
    mean_y = max(y.mean(), 1e-12)
    start = math.log(mean_y) - math.log(np.exp(log_scaled - log_scaled.max()).mean()) - log_scaled.max()
    lower = min(start, upper) - 50.0
    res = optimize.minimize_scalar(
        lambda lc: _neg_loglik(p, y, gamma, lc), bounds=(lower, upper), method="bounded",
        options={"xatol": 1e-10},
    )
    return float(res.x), float(res.fun)


def fit_gamma_index(records: Sequence[SegmentRecord]) -> float:
    """Maximum-likelihood ``gamma`` for ``Y ~ Bernoulli(min(1, c p**(1/gamma)))``.

    Uses reviewed records with an observed outcome.  ``gamma`` is searched on
    ``(0, 2]`` by profiling out ``c``: a coarse log-spaced grid locates the
    optimum, then a bounded scalar search refines it.
    """
    rows = [r for r in records if r.reviewed and r.outcome is not None and r.p_prob > 0]
    if len(rows) < MIN_FIT_RECORDS:
        raise InsufficientData(f"need at least {MIN_FIT_RECORDS} reviewed records with outcomes, got {len(rows)}")
    p = np.array([r.p_prob for r in rows])
    y = np.array([bool(r.outcome) for r in rows])
    if np.ptp(p) <= 1e-12 * p.max():
        raise Unidentifiable("all sampling probabilities are equal")
    if y.all() or not y.any():
        raise Unidentifiable("outcomes are all identical")

    grid = np.geomspace(0.02, GAMMA_MAX, 60)
    nll = np.array([_profile(p, y, g)[1] for g in grid])
    i = int(np.argmin(nll))
    lo = grid[max(i - 1, 0)] if i > 0 else 1e-3
    hi = grid[min(i + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(
        lambda g: _profile(p, y, g)[1], bounds=(lo, hi), method="bounded", options={"xatol": 1e-6}
    )
    return float(min(res.x, GAMMA_MAX))


def resolve_next_weight(
    spec: NextWeightSpec,
    sample: WeightSample,
    records: Sequence[SegmentRecord] | None = None,
) -> float:
    """Numeric ``w**`` for a sample under the chosen rule.

    ``w2`` and ``wm`` use ``spec.w2_value`` when given, otherwise estimate
    ``||w||_2`` from ``records`` with ``spec.gamma_hat``.
    """
    mode = spec.mode
    if mode is NextWeightMode.FIXED:
        return float(spec.value)
    if mode is NextWeightMode.MAX_OBSERVED:
        return sample.max_weight
    if spec.w2_value is not None:
        w2 = float(spec.w2_value)
    elif records:
        w2 = estimate_w2(records, spec.gamma_hat)
    else:
        raise NextWeightUnresolved(f"next-weight mode {mode.value!r} needs segment records or a supplied ||w||_2")
    if not math.isfinite(w2) or (sample.n and w2 > GREEDY_RATIO * sample.max_weight):
        raise GreedySamplingVariance(
            f"estimated ||w||_2={w2} is unusable; sampling may be too greedy for a finite variance"
        )
    if mode is NextWeightMode.W2:
        return w2
    return max(w2, sample.max_weight)
