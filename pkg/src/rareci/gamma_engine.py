"""Quantiles of weighted sums of independent Gamma variables.

Two backends compute quantiles of ``Z = sum_k w_k G_k`` with
``G_k ~ Gamma(shape=x_k, rate=1)``:

* a deterministic Lugannani-Rice saddlepoint approximation, using the
  closed-form cumulant generating function
  ``kappa(t) = -sum_k x_k log(1 - w_k t)`` for ``t < 1 / max_k w_k``;
* plain Monte Carlo with the nearest-rank empirical quantile.

Single (moment-matched) Gamma quantiles used by the GO/GP/GM intervals are
found by bracketed root finding on the regularized incomplete gamma function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .core import ConvergenceError, DomainError, GammaSumSpec, InputError

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)

# below this |t*| * sd the Lugannani-Rice form is replaced by its t=0 limit
NEAR_MEAN_THRESHOLD = 1e-6
MAX_BISECTIONS = 500


@dataclass(frozen=True)
class SaddlepointSolution:
    t_star: float
    omega: float
    xi: float
    tail_prob: float


def _arrays(spec: GammaSumSpec) -> tuple[np.ndarray, np.ndarray]:
    terms = spec.all_terms()
    if not terms:
        return np.empty(0), np.empty(0)
    w, x = zip(*terms)
    return np.asarray(w, dtype=float), np.asarray(x, dtype=float)


def _check_t(w: np.ndarray, t: float) -> None:
    if w.size and t * w.max() >= 1.0:
        raise DomainError(f"t={t} is at or beyond the pole 1/max weight={1.0 / w.max()}")


def cgf(spec: GammaSumSpec, t: float) -> float:
    """Cumulant generating function ``kappa(t)`` of the weighted Gamma sum."""
    w, x = _arrays(spec)
    _check_t(w, t)
    return float(-np.dot(x, np.log1p(-w * t)))


def cgf_derivatives(spec: GammaSumSpec, t: float) -> tuple[float, float, float]:
    """First three derivatives of :func:`cgf` at ``t``."""
    w, x = _arrays(spec)
    _check_t(w, t)
    g = w / (1.0 - w * t)
    wx = x * g
    return float(wx.sum()), float(np.dot(wx, g)), float(2.0 * np.dot(wx, g * g))


def normal_sf(z: float) -> float:
    """``1 - Phi(z)`` at full precision in both tails."""
    return 0.5 * math.erfc(z / _SQRT2)


def normal_pdf(z: float) -> float:
    return math.exp(-0.5 * z * z) / _SQRT2PI


def _tk1_minus_k(w: np.ndarray, x: np.ndarray, t: float) -> float:
    """``t kappa'(t) - kappa(t)`` without cancellation near ``t = 0``.

    Per term this is ``x (u/(1-u) + log(1-u))`` with ``u = w t``, whose
    series is ``x sum_{j>=2} (j-1)/j u^j``.
    """
    u = w * t
    small = np.abs(u) < 0.05
    out = np.empty_like(u)
    if small.any():
        us = u[small]
        acc = np.zeros_like(us)
        power = us * us
        for j in range(2, 16):
            acc += (j - 1) / j * power
            power = power * us
        out[small] = acc
    big = ~small
    if big.any():
        ub = u[big]
        out[big] = ub / (1.0 - ub) + np.log1p(-ub)
    return float(np.dot(x, out))


class _Saddlepoint:
    """Precomputed arrays for repeated evaluation of the tail function."""

    def __init__(self, spec: GammaSumSpec):
        self.w, self.x = _arrays(spec)
        if self.w.size == 0:
            raise InputError("saddlepoint needs a nonempty spec")
        self.t_max = 1.0 / self.w.max()
        self.mean = float(np.dot(self.w, self.x))
        self.var = float(np.dot(self.w * self.w, self.x))
        self.sd = math.sqrt(self.var)
        k3 = 2.0 * float(np.dot(self.w**3, self.x))
        self.tail_at_mean = 0.5 - k3 / (6.0 * _SQRT2PI * self.sd**3)

    def k1(self, t: float) -> float:
        return float(np.dot(self.x, self.w / (1.0 - self.w * t)))

    def k2(self, t: float) -> float:
        g = self.w / (1.0 - self.w * t)
        return float(np.dot(self.x, g * g))

    def solution(self, t: float) -> SaddlepointSolution:
        if abs(t) * self.sd < NEAR_MEAN_THRESHOLD:
            return SaddlepointSolution(t, 0.0, 0.0, self.tail_at_mean)
        omega = t * math.sqrt(self.k2(t))
        xi = math.copysign(math.sqrt(2.0 * max(_tk1_minus_k(self.w, self.x, t), 0.0)), t)
        if xi == 0.0:
            return SaddlepointSolution(t, omega, xi, self.tail_at_mean)
        tail = normal_sf(xi) + normal_pdf(xi) * (1.0 / omega - 1.0 / xi)
        return SaddlepointSolution(t, omega, xi, min(max(tail, 0.0), 1.0))

    def f(self, t: float) -> float:
        return self.solution(t).tail_prob

    def solve_k1(self, z: float) -> float:
        """Root of ``kappa'(t) = z``; ``kappa'`` increases from 0 to infinity."""
        if z == self.mean:
            return 0.0
        if z > self.mean:
            lo, hi = 0.0, self.t_max * 0.5
            gap = self.t_max * 0.5
            while self.k1(hi) < z:
                lo = hi
                gap *= 0.5
                hi = self.t_max - gap
                if gap < self.t_max * 1e-300:
                    raise ConvergenceError("could not bracket the saddlepoint")
        else:
            hi, lo = 0.0, -1.0 / self.sd
            while self.k1(lo) > z:
                hi = lo
                lo *= 2.0
                if not math.isfinite(lo):
                    raise ConvergenceError("could not bracket the saddlepoint")
        return optimize.brentq(lambda t: self.k1(t) - z, lo, hi, xtol=1e-300, rtol=1e-15, maxiter=500)


def saddlepoint_solution(spec: GammaSumSpec, z: float) -> SaddlepointSolution:
    """Saddlepoint ``t*`` with ``kappa'(t*) = z`` and the resulting tail terms."""
    if not z > 0:
        raise DomainError(f"z must be > 0, got {z}")
    sp = _Saddlepoint(spec)
    return sp.solution(sp.solve_k1(z))


def saddlepoint_tail(spec: GammaSumSpec, z: float) -> float:
    """Lugannani-Rice approximation of ``P(Z >= z)``."""
    return saddlepoint_solution(spec, z).tail_prob


def saddlepoint_quantile(spec: GammaSumSpec, prob_at_least: float) -> float:
    """The ``z`` with approximate ``P(Z >= z) = prob_at_least``.

    The tail function ``f(t)`` is decreasing in the saddlepoint ``t``, so the
    target is bracketed by walking from ``t = 0`` (geometrically toward
    ``-inf``, or by halving the gap to the pole ``1/max w``) and then bisected.
    An empty spec is the point mass at zero.
    """
    if not 0 < prob_at_least < 1:
        raise InputError("prob_at_least must be in (0, 1)")
    if spec.is_empty:
        return 0.0
    sp = _Saddlepoint(spec)
    target = prob_at_least
    f0 = sp.tail_at_mean
    if f0 == target:
        return sp.mean
    steps = 0
    if f0 < target:
        # lower quantile: t < 0
        hi, lo = 0.0, -1.0 / sp.sd
        while sp.f(lo) < target:
            hi = lo
            lo *= 2.0
            steps += 1
            if steps > MAX_BISECTIONS or not math.isfinite(lo):
                raise ConvergenceError("could not bracket lower saddlepoint quantile")
    else:
        lo, gap = 0.0, sp.t_max * 0.5
        hi = sp.t_max - gap
        while sp.f(hi) > target:
            lo = hi
            gap *= 0.5
            hi = sp.t_max - gap
            steps += 1
            if steps > MAX_BISECTIONS or hi <= lo:
                raise ConvergenceError("could not bracket upper saddlepoint quantile")
    for _ in range(MAX_BISECTIONS):
        mid = 0.5 * (lo + hi)
        fm = sp.f(mid)
        if abs(fm - target) < 1e-10 or hi - lo < 1e-12 * (1.0 + abs(mid)):
            return sp.k1(mid)
        if fm > target:
            lo = mid
        else:
            hi = mid
    raise ConvergenceError(f"saddlepoint bisection did not converge in {MAX_BISECTIONS} steps")


def nearest_rank(sorted_values: np.ndarray, prob: float) -> float:
    """Nearest-rank quantile: the ``ceil(prob * B)``-th smallest of ``B`` values."""
    size = len(sorted_values)
    # guard against 0.05 * 10000 = 500.00000000000006
    rank = math.ceil(round(prob * size, 9))
    rank = min(max(rank, 1), size)
    return float(sorted_values[rank - 1])


def empirical_quantile(values: np.ndarray, prob: float) -> float:
    values = np.asarray(values, dtype=float)
    size = values.size
    rank = min(max(math.ceil(round(prob * size, 9)), 1), size)
    return float(np.partition(values, rank - 1)[rank - 1])


def mc_draws(spec: GammaSumSpec, draws: int, seed) -> np.ndarray:
    """``draws`` independent realizations of the weighted Gamma sum."""
    if draws < 100:
        raise InputError("draws must be >= 100")
    rng = np.random.default_rng(seed)
    total = np.zeros(draws)
    for w, x in spec.all_terms():
        total += w * rng.standard_gamma(x, size=draws)
    return total


def mc_quantile(spec: GammaSumSpec, prob_at_most: float, draws: int = 10_000, seed=0) -> float:
    """Nearest-rank Monte Carlo quantile ``P(Z <= z) >= prob_at_most``."""
    return empirical_quantile(mc_draws(spec, draws, seed), prob_at_most)


def gamma_cdf(z: float, shape: float, rate: float) -> float:
    """Regularized lower incomplete gamma ``P(shape, rate * z)``."""
    if z <= 0:
        return 0.0
    return float(special.gammainc(shape, rate * z))


def _bracket_root(cdf, prob: float, lo: float, hi: float) -> float:
    for _ in range(200):
        if cdf(hi) >= prob:
            break
        lo, hi = hi, hi * 2.0
    else:
        raise ConvergenceError("could not bracket quantile")
    if cdf(lo) >= prob:
        return lo
    try:
        return optimize.brentq(lambda z: cdf(z) - prob, lo, hi, xtol=1e-300, rtol=1e-13, maxiter=500)
    except RuntimeError as exc:
        raise ConvergenceError(str(exc)) from exc


def single_gamma_quantile(shape: float, rate: float, prob_at_most: float) -> float:
    """Inverse CDF of ``Gamma(shape, rate)`` by bracketed root finding."""
    if not (shape > 0 and rate > 0):
        raise InputError("shape and rate must be > 0")
    if not 0 < prob_at_most < 1:
        raise InputError("prob_at_most must be in (0, 1)")
    mean = shape / rate
    sd = math.sqrt(shape) / rate
    return _bracket_root(lambda z: gamma_cdf(z, shape, rate), prob_at_most, 0.0, mean + 20.0 * sd)


@dataclass(frozen=True)
class MatchedGamma:
    """A Gamma law matched to a mean and variance; ``mean == 0`` is a point mass."""

    mean: float
    variance: float

    @property
    def shape(self) -> float:
        return self.mean**2 / self.variance

    @property
    def rate(self) -> float:
        return self.mean / self.variance

    @property
    def degenerate(self) -> bool:
        return self.mean <= 0 or self.variance <= 0

    def cdf(self, z: float) -> float:
        if self.degenerate:
            return 1.0 if z >= 0 else 0.0
        return gamma_cdf(z, self.shape, self.rate)

    def quantile(self, prob: float) -> float:
        if self.degenerate:
            return 0.0
        return single_gamma_quantile(self.shape, self.rate, prob)


def mixture_quantile(components: list[MatchedGamma], prob: float) -> float:
    """Quantile of the equal-weight mixture of matched Gammas."""
    def cdf(z):
        return math.fsum(c.cdf(z) for c in components) / len(components)

    live = [c for c in components if not c.degenerate]
    if not live:
        return 0.0
    if cdf(0.0) >= prob:
        return 0.0
    hi = max(c.mean + 20.0 * math.sqrt(c.variance) for c in live)
    return _bracket_root(cdf, prob, 0.0, hi)
