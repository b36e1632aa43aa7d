import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from rareci.core import ConvergenceError, DomainError, GammaSumSpec, InputError
from rareci.gamma_engine import (
    MatchedGamma,
    _Saddlepoint,
    cgf,
    cgf_derivatives,
    mc_quantile,
    mixture_quantile,
    nearest_rank,
    saddlepoint_quantile,
    saddlepoint_tail,
    single_gamma_quantile,
)

strata = st.lists(
    st.tuples(st.floats(0.1, 500.0), st.floats(1.0, 200.0)), min_size=1, max_size=20
)


def spec_of(*terms, nw=0.0):
    return GammaSumSpec(tuple(terms), nw)


class TestCgf:
    def test_values(self):
        assert cgf(spec_of((1.0, 100.0)), 0.0) == 0.0
        assert math.isclose(cgf(spec_of((2.0, 3.0)), 0.25), -3 * math.log(0.5), rel_tol=1e-14)

    def test_pole(self):
        with pytest.raises(DomainError):
            cgf(spec_of((1.0, 1.0)), 1.0)
        with pytest.raises(DomainError):
            cgf_derivatives(spec_of((1.0, 1.0), nw=2.0), 0.6)

    def test_derivatives_at_zero(self):
        assert cgf_derivatives(spec_of((1.0, 3.0), (2.0, 1.0)), 0.0) == pytest.approx((5, 7, 22))
        assert cgf_derivatives(spec_of((1.0, 100.0)), 0.0) == pytest.approx((100, 100, 200))

    def test_finite_differences(self):
        spec, t, h = spec_of((1.0, 10.0), (5.0, 2.0)), 0.1, 1e-6
        k1, k2, _ = cgf_derivatives(spec, t)
        fd1 = (cgf(spec, t + h) - cgf(spec, t - h)) / (2 * h)
        assert fd1 == pytest.approx(k1, rel=1e-6)
        fd2 = (cgf_derivatives(spec, t + h)[0] - cgf_derivatives(spec, t - h)[0]) / (2 * h)
        assert fd2 == pytest.approx(k2, rel=1e-6)


class TestSaddlepoint:
    def test_mean_expansion(self):
        expected = 0.5 - 200 / (6 * math.sqrt(2 * math.pi) * 1000)
        assert saddlepoint_tail(spec_of((1.0, 100.0)), 100.0) == pytest.approx(expected, abs=1e-9)

    def test_exponential_tail(self):
        assert saddlepoint_tail(spec_of((1.0, 1.0)), 3.0) == pytest.approx(math.exp(-3), abs=0.002)

    def test_nonpositive_z(self):
        with pytest.raises(DomainError):
            saddlepoint_tail(spec_of((1.0, 1.0)), 0.0)

    def test_exponential_median(self):
        assert saddlepoint_quantile(spec_of((5.0, 1.0)), 0.5) == pytest.approx(5 * math.log(2), rel=5e-3)

    def test_single_gamma_quantiles(self):
        assert saddlepoint_quantile(spec_of((1.0, 100.0)), 0.95) == pytest.approx(83.86, rel=5e-3)
        assert round(saddlepoint_quantile(spec_of((1.0, 101.0)), 0.05)) == 118

    def test_quantile_matches_exact_gamma(self):
        # a single stratum is an exact Gamma law
        for shape in (3.0, 30.0, 300.0):
            for q in (0.01, 0.05, 0.5, 0.95, 0.99):
                exact = stats.gamma.ppf(1 - q, shape, scale=2.0)
                assert saddlepoint_quantile(spec_of((2.0, shape)), q) == pytest.approx(exact, rel=0.01)

    def test_empty_and_bad_prob(self):
        assert saddlepoint_quantile(GammaSumSpec(), 0.05) == 0.0
        with pytest.raises(InputError):
            saddlepoint_quantile(spec_of((1.0, 1.0)), 1.0)

    def test_deep_tails_converge(self):
        spec = spec_of((1.0, 2.0), nw=400.0)
        hi = saddlepoint_quantile(spec, 1e-6)
        lo = saddlepoint_quantile(spec, 1 - 1e-6)
        assert 0 < lo < hi < 1e4
        assert saddlepoint_tail(spec, hi) == pytest.approx(1e-6, rel=1e-3)

    @settings(max_examples=50, deadline=None)
    @given(strata, st.floats(-3.0, 0.95))
    def test_tail_function_decreasing(self, terms, frac):
        sp = _Saddlepoint(GammaSumSpec(tuple(terms)))
        t1 = frac * sp.t_max
        t2 = t1 + 0.02 * (sp.t_max - t1)
        assert sp.f(t1) >= sp.f(t2) - 1e-12

    @settings(max_examples=50, deadline=None)
    @given(strata, st.floats(0.02, 0.48))
    def test_quantile_monotone_in_prob_and_terms(self, terms, q):
        spec = GammaSumSpec(tuple(terms))
        assert saddlepoint_quantile(spec, q) >= saddlepoint_quantile(spec, 1 - q)
        bigger = GammaSumSpec(tuple(terms) + ((1.0, 1.0),))
        assert saddlepoint_quantile(bigger, q) >= saddlepoint_quantile(spec, q) * (1 - 1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_agrees_with_monte_carlo(self, seed):
        rng = np.random.default_rng(seed)
        k = rng.integers(1, 21)
        terms = tuple(zip(rng.uniform(0.1, 500, k), rng.uniform(1, 200, k)))
        spec = GammaSumSpec(terms)
        for q in (0.05, 0.95):
            mc = mc_quantile(spec, 1 - q, 10**6, seed)
            assert saddlepoint_quantile(spec, q) == pytest.approx(mc, rel=0.01)


class TestMonteCarlo:
    def test_exponential_median(self):
        assert mc_quantile(spec_of((5.0, 1.0)), 0.5, 10**6, 1) == pytest.approx(3.466, abs=0.02)

    def test_gamma_lower_quantile(self):
        assert mc_quantile(spec_of((1.0, 100.0)), 0.05, 10**6, 2) == pytest.approx(83.9, abs=0.3)

    def test_deterministic_and_monotone(self):
        spec = spec_of((3.0, 4.0), nw=10.0)
        assert mc_quantile(spec, 0.3, 1000, 9) == mc_quantile(spec, 0.3, 1000, 9)
        qs = [mc_quantile(spec, p, 1000, 9) for p in np.linspace(0.01, 0.99, 25)]
        assert np.all(np.diff(qs) >= 0)

    def test_too_few_draws(self):
        with pytest.raises(InputError):
            mc_quantile(spec_of((1.0, 1.0)), 0.5, 10)

    def test_nearest_rank(self):
        v = np.arange(1.0, 10_001.0)
        assert nearest_rank(v, 0.05) == 500.0
        assert nearest_rank(v, 0.95) == 9500.0
        assert nearest_rank(v, 0.0) == 1.0


class TestSingleGamma:
    def test_closed_forms(self):
        assert single_gamma_quantile(1.0, 1.0, 0.95) == pytest.approx(-math.log(0.05), rel=1e-10)
        assert single_gamma_quantile(100.0, 1.0, 0.05) == pytest.approx(84.1393, abs=1e-3)
        z = single_gamma_quantile(2.0, 0.01, 0.95)
        assert 1 - math.exp(-0.01 * z) * (1 + 0.01 * z) == pytest.approx(0.95, abs=1e-12)
        assert z == pytest.approx(474.4, abs=0.05)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.05, 1e4), st.floats(1e-3, 1e3), st.floats(1e-4, 1 - 1e-4))
    def test_matches_scipy(self, shape, rate, prob):
        z = single_gamma_quantile(shape, rate, prob)
        assert z == pytest.approx(stats.gamma.ppf(prob, shape, scale=1 / rate), rel=1e-8)

    def test_bad_args(self):
        with pytest.raises(InputError):
            single_gamma_quantile(0.0, 1.0, 0.5)

    def test_matched_gamma_degenerate(self):
        g = MatchedGamma(0.0, 0.0)
        assert g.degenerate and g.quantile(0.9) == 0.0

    def test_mixture_of_identical_laws(self):
        g = MatchedGamma(50.0, 200.0)
        assert mixture_quantile([g, g], 0.3) == pytest.approx(g.quantile(0.3), rel=1e-10)

    def test_mixture_between_components(self):
        a, b = MatchedGamma(50.0, 100.0), MatchedGamma(80.0, 300.0)
        q = mixture_quantile([a, b], 0.5)
        assert a.quantile(0.5) < q < b.quantile(0.5)
        assert 0.5 * (a.cdf(q) + b.cdf(q)) == pytest.approx(0.5, abs=1e-10)


def test_convergence_error_is_numerical():
    assert issubclass(ConvergenceError, ArithmeticError)
