"""Shared domain types for rate estimation from importance-sampled events.

A :class:`WeightSample` holds the positive Horvitz-Thompson weights
``1/p(V_i)`` of the confirmed events.  Every interval method in
:mod:`rareci.ci` consumes one, and the Gamma-family methods reduce it to a
:class:`GammaSumSpec` (a weighted sum of independent Gamma variables).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence


class RareCIError(Exception):
    """Base class for every error raised by this package."""


class InputError(RareCIError, ValueError):
    """Malformed or inconsistent user input."""


class NumericalError(RareCIError, ArithmeticError):
    """A numerical routine failed or was called outside its domain."""


class NonPositiveWeight(InputError):
    pass


class NonFiniteWeight(InputError):
    pass


class UnknownCategory(InputError):
    pass


class NextWeightUnresolved(InputError):
    pass


class DomainError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    pass


class Method(str, enum.Enum):
    PB = "PB"  # Poisson bootstrap
    EB = "EB"  # Exponential bootstrap
    WG = "WG"  # weighted Gamma
    GO = "GO"  # original Gamma, extended to continuous weights
    GP = "GP"  # mid-p Gamma, extended to continuous weights
    GM = "GM"  # modified Gamma (discrete strata)

    @classmethod
    def parse(cls, value: str | "Method") -> "Method":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise InputError(f"unknown method {value!r}") from None


class Backend(str, enum.Enum):
    MONTE_CARLO = "monte_carlo"
    SADDLEPOINT = "saddlepoint"

    @classmethod
    def parse(cls, value: str | "Backend") -> "Backend":
        if isinstance(value, cls):
            return value
        key = str(value).lower()
        if key in ("mc", "monte-carlo"):
            key = "monte_carlo"
        try:
            return cls(key)
        except ValueError:
            raise InputError(f"unknown backend {value!r}") from None


@dataclass(frozen=True)
class WeightSample:
    """Observed positive importance weights, in input order.

    Input order is the identity of each event: the Monte Carlo methods key
    their random draws on it, so a subset must keep the indices it had in
    the full sample (see :meth:`subset`).
    """

    weights: tuple[float, ...] = ()
    categories: tuple[str | None, ...] | None = None
    miles_normalizer: float = 1.0
    indices: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.categories is not None and len(self.categories) != len(self.weights):
            raise InputError("categories must have one entry per weight")
        if self.indices is not None and len(self.indices) != len(self.weights):
            raise InputError("indices must have one entry per weight")
        if not (math.isfinite(self.miles_normalizer) and self.miles_normalizer > 0):
            raise InputError("miles_normalizer must be positive and finite")

    @property
    def n(self) -> int:
        return len(self.weights)

    @property
    def total(self) -> float:
        return math.fsum(self.weights)

    @property
    def point_estimate(self) -> float:
        return self.total / self.miles_normalizer

    @property
    def max_weight(self) -> float:
        return max(self.weights, default=0.0)

    @property
    def event_ids(self) -> tuple[int, ...]:
        """Coupling keys of the events (their positions in the full sample)."""
        if self.indices is not None:
            return self.indices
        return tuple(range(self.n))

    def category_names(self) -> list[str]:
        if self.categories is None:
            return []
        seen: dict[str, None] = {}
        for c in self.categories:
            if c is not None:
                seen.setdefault(c, None)
        return list(seen)

    def subset(self, category: str) -> "WeightSample":
        """Events of one category, keeping their original coupling keys."""
        if category not in self.category_names():
            raise UnknownCategory(f"category {category!r} not present in sample")
        ids = self.event_ids
        keep = [i for i, c in enumerate(self.categories) if c == category]
        return WeightSample(
            weights=tuple(self.weights[i] for i in keep),
            categories=tuple(self.categories[i] for i in keep),
            miles_normalizer=self.miles_normalizer,
            indices=tuple(ids[i] for i in keep),
        )


def validate_weights(
    raw: Iterable[float],
    categories: Sequence[str | None] | None = None,
    miles_normalizer: float = 1.0,
) -> WeightSample:
    """Check raw weights and wrap them in a :class:`WeightSample`.

    An empty input is valid (no events observed).  Order is preserved.
    """
    weights = []
    for i, value in enumerate(raw):
        w = float(value)
        if not math.isfinite(w):
            raise NonFiniteWeight(f"weight #{i} is not finite: {value!r}")
        if w <= 0:
            raise NonPositiveWeight(f"weight #{i} must be > 0, got {value!r}")
        weights.append(w)
    cats = None
    if categories is not None:
        cats = tuple(None if c in (None, "") else str(c) for c in categories)
    return WeightSample(tuple(weights), cats, float(miles_normalizer))


def group_weights(sample: WeightSample | Sequence[float], rel_tol: float = 1e-12) -> list[tuple[float, int]]:
    """Merge (nearly) equal weights into ``(weight, count)`` strata.

    Weights within ``rel_tol`` relative difference of the first weight of a
    run (after sorting) share a stratum; the stratum weight is the run mean so
    that ``sum(weight * count)`` stays equal to the sample total.
    """
    if rel_tol < 0:
        raise InputError("rel_tol must be >= 0")
    weights = sorted(sample.weights if isinstance(sample, WeightSample) else sample)
    strata: list[tuple[float, int]] = []
    run: list[float] = []
    for w in weights:
        if run and w - run[0] > rel_tol * run[0]:
            strata.append((math.fsum(run) / len(run), len(run)))
            run = []
        run.append(w)
    if run:
        strata.append((math.fsum(run) / len(run), len(run)))
    return strata


@dataclass(frozen=True)
class GammaSumSpec:
    """``sum_k weight_k * Gamma(shape_k, rate=1) + next_weight * Gamma(1)``."""

    terms: tuple[tuple[float, float], ...] = ()
    next_weight: float = 0.0

    def __post_init__(self):
        for w, x in self.terms:
            if not (w > 0 and math.isfinite(w)):
                raise InputError(f"term weight must be positive and finite, got {w}")
            if not (x > 0 and math.isfinite(x)):
                raise InputError(f"term shape must be positive and finite, got {x}")
        if not (self.next_weight >= 0 and math.isfinite(self.next_weight)):
            raise InputError("next_weight must be >= 0 and finite")

    @classmethod
    def from_strata(cls, strata: Iterable[tuple[float, float]], next_weight: float = 0.0) -> "GammaSumSpec":
        """Build from ``(weight, count)`` pairs, dropping zero-count strata."""
        return cls(tuple((float(w), float(x)) for w, x in strata if x > 0), float(next_weight))

    def all_terms(self) -> list[tuple[float, float]]:
        """Terms with the next weight appended as a shape-1 term when > 0."""
        out = list(self.terms)
        if self.next_weight > 0:
            out.append((self.next_weight, 1.0))
        return out

    @property
    def is_empty(self) -> bool:
        return not self.terms and self.next_weight == 0

    @property
    def mean(self) -> float:
        return math.fsum(w * x for w, x in self.all_terms())

    @property
    def variance(self) -> float:
        return math.fsum(w * w * x for w, x in self.all_terms())

    @property
    def max_weight(self) -> float:
        return max((w for w, _ in self.all_terms()), default=0.0)


class NextWeightMode(str, enum.Enum):
    FIXED = "fixed"
    MAX_OBSERVED = "max_observed"
    W2 = "w2"
    WM = "wm"


@dataclass(frozen=True)
class NextWeightSpec:
    """How to pick the next weight ``w**`` added to the upper-bound sum.

    ``w2`` and ``wm`` need the second-moment norm of the weights, either
    supplied directly as ``w2_value`` or estimated from segment records with
    index ``gamma_hat``.
    """

    mode: NextWeightMode = NextWeightMode.MAX_OBSERVED
    value: float = 0.0
    gamma_hat: float = 0.5
    w2_value: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", NextWeightMode(self.mode))
        if self.mode is NextWeightMode.FIXED and not (self.value >= 0 and math.isfinite(self.value)):
            raise InputError("fixed next weight must be >= 0 and finite")
        if not self.gamma_hat > 0:
            raise InputError("gamma_hat must be > 0")
        if self.w2_value is not None and not (self.w2_value >= 0 and math.isfinite(self.w2_value)):
            raise InputError("w2_value must be >= 0 and finite")

    @classmethod
    def fixed(cls, value: float) -> "NextWeightSpec":
        return cls(NextWeightMode.FIXED, value=float(value))


@dataclass(frozen=True)
class CiConfig:
    alpha: float = 0.1
    method: Method = Method.EB
    backend: Backend = Backend.SADDLEPOINT
    bootstrap_draws: int = 10_000
    seed: int = 0
    next_weight: NextWeightSpec = field(default_factory=NextWeightSpec)

    def __post_init__(self):
        object.__setattr__(self, "method", Method.parse(self.method))
        object.__setattr__(self, "backend", Backend.parse(self.backend))
        if not 0 < self.alpha < 1:
            raise InputError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.bootstrap_draws < 100:
            raise InputError("bootstrap_draws must be >= 100")


@dataclass(frozen=True)
class CiResult:
    point_estimate: float
    lower: float
    upper: float
    method: Method
    alpha: float
    next_weight_used: float = 0.0
    backend: Backend | None = None
    warnings: tuple[str, ...] = ()

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def covers(self, theta: float) -> bool:
        return self.lower <= theta <= self.upper
