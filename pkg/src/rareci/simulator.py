"""Coverage studies on synthetic importance-sampled populations.

A replicate draws ``N ~ Poisson(lambda)`` candidates, labels each a true
positive with probability ``pi``, draws its feature from ``f1`` or ``f0``,
samples candidates with probabilities tied to the Bayes true-positive
probability ``r(v)``, and computes every requested interval from the
Horvitz-Thompson weights of the sampled true positives.
"""

from __future__ import annotations

import math
import os
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy import special

from .ci import eb_bounds_saddlepoint, gamma_laws, CoupledDraws
from .core import Backend, InputError, RareCIError, WeightSample
from .gamma_engine import mixture_quantile, nearest_rank
from .next_weight import GREEDY_RATIO, SegmentRecord, _second_moment

SAMPLING_MODELS = ("power", "sqrt_times_one_minus_r", "r_times_one_plus_r")
STUDY_METHODS = ("pb", "eb2", "eb2m", "go2m", "gp2m")
# gamma_hat used by the oracle policy when the true index is 0 (uniform sampling)
ORACLE_GAMMA_FLOOR = 0.01
# gamma_hat used by the oracle policy for the non-power sampling models
MISSPECIFIED_GAMMA_HAT = 0.5


@dataclass(frozen=True)
class SamplingModel:
    kind: str = "power"
    gamma: float = 0.5

    def __post_init__(self):
        if self.kind not in SAMPLING_MODELS:
            raise InputError(f"unknown sampling model {self.kind!r}")
        if self.kind == "power" and self.gamma < 0:
            raise InputError("power-law gamma must be >= 0")

    def score(self, r: np.ndarray) -> np.ndarray:
        """Unnormalized sampling preference of candidates with probability ``r``."""
        if self.kind == "power":
            return np.ones_like(r) if self.gamma == 0 else r**self.gamma
        if self.kind == "sqrt_times_one_minus_r":
            return np.sqrt(r) * (1.0 - r)
        return r * (1.0 + r)

    @property
    def label(self) -> str:
        return f"{self.gamma:g}" if self.kind == "power" else self.kind


@dataclass(frozen=True)
class TwoStage:
    b1: float
    gamma1: float
    gamma2: float


@dataclass(frozen=True)
class Scenario:
    """One cell of a coverage study.

    For two-stage sampling, ``budget`` is the second-stage budget ``b2`` and
    the first stage is described by ``two_stage``; ``sampling_model`` is then
    ignored.  ``gamma_hat=None`` is the oracle policy (the true index).
    """

    lam: float = 1e5
    pi: float = 1e-3
    f1: tuple[float, float] = (2.0, 2.0)
    f0: tuple[float, float] = (-2.0, 2.0)
    sampling_model: SamplingModel = field(default_factory=SamplingModel)
    budget: float = 0.01
    two_stage: TwoStage | None = None
    alpha: float = 0.1
    methods: tuple[str, ...] = ("pb", "eb2m")
    gamma_hat: float | None = None
    replicates: int = 2000
    base_seed: int = 0
    backend: str = "saddlepoint"
    bootstrap_draws: int = 10_000

    def __post_init__(self):
        if self.lam < 0:
            raise InputError("lambda must be >= 0")
        if not 0 < self.pi <= 1:
            raise InputError("pi must be in (0, 1]")
        if not 0 <= self.budget <= 1:
            raise InputError("budget must be in [0, 1]")
        if not 0 < self.alpha < 1:
            raise InputError("alpha must be in (0, 1)")
        if self.replicates < 1:
            raise InputError("replicates must be >= 1")
        if self.gamma_hat is not None and not self.gamma_hat > 0:
            raise InputError("gamma_hat must be > 0")
        bad = [m for m in self.methods if m not in STUDY_METHODS]
        if bad:
            raise InputError(f"unknown study methods {bad}; choose from {STUDY_METHODS}")
        Backend.parse(self.backend)

    @property
    def theta(self) -> float:
        return self.pi * self.lam

    @property
    def gamma(self) -> float | None:
        """True sampling index, or ``None`` for the non-power models."""
        if self.two_stage is not None:
            return self.two_stage.gamma1 + self.two_stage.gamma2
        if self.sampling_model.kind == "power":
            return self.sampling_model.gamma
        return None

    @property
    def gamma_label(self) -> str:
        if self.two_stage is not None:
            return f"{self.gamma:g}"
        return self.sampling_model.label

    def resolved_gamma_hat(self) -> float:
        if self.gamma_hat is not None:
            return self.gamma_hat
        if self.gamma is None:
            return MISSPECIFIED_GAMMA_HAT
        return max(self.gamma, ORACLE_GAMMA_FLOOR)


def true_positive_prob(scenario: Scenario, v) -> np.ndarray | float:
    """Bayes probability ``pi f1(v) / (pi f1(v) + (1 - pi) f0(v))``."""
    v = np.asarray(v, dtype=float)
    pi = scenario.pi
    if pi >= 1.0:
        out = np.ones_like(v)
    else:
        (m1, s1), (m0, s0) = scenario.f1, scenario.f0
        log_f1 = -0.5 * ((v - m1) / s1) ** 2 - math.log(s1)
        log_f0 = -0.5 * ((v - m0) / s0) ** 2 - math.log(s0)
        out = special.expit(math.log(pi) - math.log1p(-pi) + log_f1 - log_f0)
    return out if out.ndim else float(out)


@dataclass
class Population:
    v: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.v)


def generate_population(scenario: Scenario, seed) -> Population:
    """``N ~ Poisson(lambda)`` candidates with labels and features."""
    rng = np.random.default_rng(seed)
    n = int(rng.poisson(scenario.lam)) if scenario.lam > 0 else 0
    y = rng.random(n) < scenario.pi
    (m1, s1), (m0, s0) = scenario.f1, scenario.f0
    v = np.where(y, rng.normal(m1, s1, n), rng.normal(m0, s0, n))
    return Population(v, y)


@dataclass
class SamplingOutcome:
    """Weights of sampled true positives plus per-simulated-segment metadata."""

    weights: np.ndarray
    s_prob: np.ndarray
    h_prob: np.ndarray
    reviewed: np.ndarray
    outcome: np.ndarray
    segment_index: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    @property
    def p_prob(self) -> np.ndarray:
        return self.s_prob * self.h_prob

    def sample(self) -> WeightSample:
        return WeightSample(tuple(float(w) for w in self.weights))

    def records(self) -> list[SegmentRecord]:
        ids = self.segment_index if len(self.segment_index) == len(self.s_prob) else range(len(self.s_prob))
        return [
            SegmentRecord(
                segment_id=str(i),
                s_prob=float(s),
                h_prob=float(h),
                p_prob=float(s) * float(h),
                simulated=True,
                reviewed=bool(j),
                outcome=bool(y) if j else None,
            )
            for i, s, h, j, y in zip(ids, self.s_prob, self.h_prob, self.reviewed, self.outcome)
        ]


def _inclusion_probs(score: np.ndarray, budget: float, n_pool: int) -> np.ndarray:
    """``min(1, n_pool * budget * score / sum(score))``."""
    total = score.sum()
    if n_pool == 0 or budget == 0 or total <= 0:
        return np.zeros_like(score)
    return np.minimum(1.0, n_pool * budget * score / total)


def apply_sampling(population: Population, scenario: Scenario, seed) -> SamplingOutcome:
    """Sample candidates for review and return HT weights and segment metadata."""
    rng = np.random.default_rng(seed)
    n = len(population)
    r = true_positive_prob(scenario, population.v) if n else np.empty(0)
    r = np.atleast_1d(r)
    if scenario.two_stage is None:
        p = _inclusion_probs(scenario.sampling_model.score(r), scenario.budget, n)
        sampled = rng.random(n) < p
        chosen = sampled & population.y
        return SamplingOutcome(
            weights=1.0 / p[chosen],
            s_prob=np.ones(n),
            h_prob=p,
            reviewed=sampled,
            outcome=population.y.copy(),
            segment_index=np.arange(n),
        )
    st = scenario.two_stage
    first = SamplingModel("power", st.gamma1)
    s = _inclusion_probs(first.score(r), st.b1, n)
    simulated = rng.random(n) < s
    idx = np.flatnonzero(simulated)
    second = SamplingModel("power", st.gamma2)
    h = _inclusion_probs(second.score(r[idx]), scenario.budget, len(idx))
    reviewed = rng.random(len(idx)) < h
    y = population.y[idx]
    chosen = reviewed & y
    return SamplingOutcome(
        weights=1.0 / (s[idx][chosen] * h[chosen]),
        s_prob=s[idx],
        h_prob=h,
        reviewed=reviewed,
        outcome=y,
        segment_index=idx,
    )


@dataclass
class ReplicateResult:
    point_estimate: float
    n_events: int
    intervals: dict[str, tuple[float, float]]
    errors: dict[str, str]


def _study_intervals(outcome: SamplingOutcome, scenario: Scenario, seed: int) -> tuple[dict, dict]:
    weights = outcome.weights
    alpha = scenario.alpha
    methods = scenario.methods
    out: dict[str, tuple[float, float]] = {}
    errors: dict[str, str] = {}
    w_max = float(weights.max()) if len(weights) else 0.0

    w2 = None
    if any(m != "pb" for m in methods):
        keep = outcome.p_prob > 0
        try:
            if not keep.any():
                raise InputError("no simulated segments with p > 0")
            w2 = math.sqrt(_second_moment(outcome.s_prob[keep], outcome.p_prob[keep], scenario.resolved_gamma_hat()))
            if not math.isfinite(w2) or (len(weights) and w2 > GREEDY_RATIO * w_max):
                raise InputError(f"unusable ||w||_2 estimate {w2}")
        except (RareCIError, FloatingPointError, ZeroDivisionError) as exc:
            for m in methods:
                if m != "pb":
                    errors[m] = f"{type(exc).__name__}: {exc}"
            w2 = None

    sample = WeightSample(tuple(weights.tolist()))
    backend = Backend.parse(scenario.backend)
    eb_lower = None
    for m in methods:
        if m in errors:
            continue
        try:
            if m == "pb":
                draws = CoupledDraws(seed, scenario.bootstrap_draws, "poisson")
                stat = np.sort(draws.statistic(sample))
                out[m] = (nearest_rank(stat, alpha / 2), nearest_rank(stat, 1 - alpha / 2))
                continue
            nw = w2 if m == "eb2" else max(w2, w_max)
            if m in ("eb2", "eb2m"):
                if backend is Backend.SADDLEPOINT:
                    lo, up = eb_bounds_saddlepoint(weights, nw, alpha)
                else:
                    draws = CoupledDraws(seed + 1, scenario.bootstrap_draws, "exponential")
                    base = draws.statistic(sample)
                    lo = nearest_rank(np.sort(base), alpha / 2)
                    up = nearest_rank(np.sort(base + nw * draws.next_column()), 1 - alpha / 2)
                if eb_lower is None:
                    eb_lower = lo
                out[m] = (eb_lower, up)
            elif m == "go2m":
                g_lo, g_up = gamma_laws(weights, nw, nw * nw)
                out[m] = (g_lo.quantile(alpha / 2), g_up.quantile(1 - alpha / 2))
            elif m == "gp2m":
                laws = list(gamma_laws(weights, nw, nw * nw))
                out[m] = (mixture_quantile(laws, alpha / 2), mixture_quantile(laws, 1 - alpha / 2))
        except RareCIError as exc:
            errors[m] = f"{type(exc).__name__}: {exc}"
    return out, errors


def replicate_seed(base_seed: int, cell: int, replicate: int) -> int:
    """Stable 64-bit seed for one replicate of one cell."""
    ss = np.random.SeedSequence([int(base_seed) & (2**64 - 1), cell, replicate])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def run_replicate(scenario: Scenario, seed: int) -> ReplicateResult:
    pop_seed, samp_seed, ci_seed = np.random.SeedSequence(seed).generate_state(3, dtype=np.uint64)
    population = generate_population(scenario, int(pop_seed))
    outcome = apply_sampling(population, scenario, int(samp_seed))
    intervals, errors = _study_intervals(outcome, scenario, int(ci_seed))
    return ReplicateResult(float(outcome.weights.sum()), len(outcome.weights), intervals, errors)


@dataclass
class CoverageRow:
    budget: float
    gamma: str
    method: str
    coverage_error: float
    mean_width: float
    replicates: int
    mean_point_estimate: float
    failures: int = 0

    FIELDS = (
        "budget", "gamma", "method", "coverage_error", "mean_width", "replicates",
        "mean_point_estimate", "failures",
    )

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.FIELDS}


@dataclass
class CoverageReport:
    rows: list[CoverageRow]

    def get(self, method: str, budget: float | None = None, gamma: str | None = None) -> list[CoverageRow]:
        return [
            r for r in self.rows
            if r.method == method
            and (budget is None or math.isclose(r.budget, budget, rel_tol=1e-9))
            and (gamma is None or r.gamma == gamma)
        ]


@dataclass
class _CellTally:
    """Per-replicate values of one cell; totals use ``math.fsum``.

    ``fsum`` is correctly rounded, so the aggregate does not depend on how
    replicates were chunked or in which order chunks were merged.
    """

    estimates: list = field(default_factory=list)
    misses: dict = field(default_factory=lambda: defaultdict(int))
    widths: dict = field(default_factory=lambda: defaultdict(list))
    failures: dict = field(default_factory=lambda: defaultdict(int))

    @property
    def replicates(self) -> int:
        return len(self.estimates)

    def add(self, res: ReplicateResult, theta: float) -> None:
        self.estimates.append(res.point_estimate)
        for m, (lo, up) in res.intervals.items():
            self.widths[m].append(up - lo)
            if not lo <= theta <= up:
                self.misses[m] += 1
        for m in res.errors:
            self.failures[m] += 1

    def merge(self, other: "_CellTally") -> None:
        self.estimates.extend(other.estimates)
        for k, v in other.widths.items():
            self.widths[k].extend(v)
        for name in ("misses", "failures"):
            mine = getattr(self, name)
            for k, v in getattr(other, name).items():
                mine[k] += v


def _run_chunk(args) -> tuple[int, _CellTally]:
    cell, scenario, reps = args
    tally = _CellTally()
    for rep in reps:
        tally.add(run_replicate(scenario, replicate_seed(scenario.base_seed, cell, rep)), scenario.theta)
    # plain dicts pickle cleanly across processes
    for name in ("misses", "widths", "failures"):
        setattr(tally, name, dict(getattr(tally, name)))
    return cell, tally


def run_study(scenarios: Sequence[Scenario], jobs: int = 1, chunk_size: int = 100) -> CoverageReport:
    """Replicate every scenario cell and aggregate coverage error and width.

    Replicate seeds depend only on ``(base_seed, cell index, replicate)``,
    so the report does not depend on ``jobs`` or execution order.
    """
    tasks = []
    for cell, sc in enumerate(scenarios):
        for start in range(0, sc.replicates, chunk_size):
            tasks.append((cell, sc, range(start, min(start + chunk_size, sc.replicates))))
    tallies = {cell: _CellTally() for cell in range(len(scenarios))}
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for cell, t in pool.map(_run_chunk, tasks):
                tallies[cell].merge(t)
    else:
        for task in tasks:
            cell, t = _run_chunk(task)
            tallies[cell].merge(t)

    rows = []
    for cell, sc in enumerate(scenarios):
        t = tallies[cell]
        mean_est = math.fsum(t.estimates) / t.replicates if t.replicates else float("nan")
        for m in sc.methods:
            widths = t.widths.get(m, [])
            ok = len(widths)
            rows.append(
                CoverageRow(
                    budget=sc.budget,
                    gamma=sc.gamma_label,
                    method=m,
                    coverage_error=t.misses.get(m, 0) / ok if ok else float("nan"),
                    mean_width=math.fsum(widths) / ok if ok else float("nan"),
                    replicates=ok,
                    mean_point_estimate=mean_est,
                    failures=t.failures.get(m, 0),
                )
            )
    return CoverageReport(rows)


def point_estimates(scenario: Scenario, replicates: int | None = None) -> np.ndarray:
    """Horvitz-Thompson estimates over replicates, without intervals."""
    sc = replace(scenario, methods=())
    n = replicates or sc.replicates
    out = np.empty(n)
    for rep in range(n):
        out[rep] = run_replicate(sc, replicate_seed(sc.base_seed, 0, rep)).point_estimate
    return out


def expand_grid(
    base: Scenario, budgets: Iterable[float], gammas: Iterable[float] | None = None
) -> list[Scenario]:
    """One scenario per (gamma, budget) pair; gammas apply to the power model."""
    cells = []
    for g in (gammas if gammas is not None else [None]):
        for b in budgets:
            sc = replace(base, budget=float(b))
            if g is not None:
                sc = replace(sc, sampling_model=SamplingModel("power", float(g)))
            cells.append(sc)
    return cells


def default_jobs() -> int:
    return max(1, os.cpu_count() or 1)
