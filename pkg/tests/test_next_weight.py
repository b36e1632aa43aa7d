import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rareci.core import InputError, NextWeightMode, NextWeightSpec, NextWeightUnresolved, validate_weights
from rareci.next_weight import (
    GreedySamplingVariance,
    InsufficientData,
    NoSimulatedRecords,
    SegmentRecord,
    Unidentifiable,
    _second_moment,
    estimate_second_moment,
    estimate_w2,
    fit_gamma_index,
    resolve_next_weight,
)


def rec(p, s=1.0, i=0, reviewed=False, outcome=None):
    return SegmentRecord(str(i), s, p / s, p, True, reviewed, outcome)


class TestRecords:
    def test_invariants(self):
        with pytest.raises(InputError):
            SegmentRecord("a", 0.5, 0.5, 0.3, True, False)
        with pytest.raises(InputError):
            SegmentRecord("a", 1.0, None, 0.3, False, True)
        with pytest.raises(InputError):
            SegmentRecord("a", 1.0, None, 0.3, True, False, True)
        SegmentRecord("a", 0.5, None, 0.3, True, False)


class TestSecondMoment:
    def test_hand_example(self):
        records = [rec(0.5), rec(0.1, i=1)]
        assert estimate_second_moment(records, 0.5) == pytest.approx(0.6 / 0.126, abs=1e-9)
        assert estimate_w2(records, 0.5) == pytest.approx(2.1822, abs=1e-4)

    def test_constant_p(self):
        records = [rec(0.04, i=i) for i in range(7)]
        assert estimate_second_moment(records, 0.3) == 1 / 0.04**2

    def test_single_record(self):
        assert estimate_w2([rec(0.2)], 1.7) == pytest.approx(5.0, rel=1e-12)

    def test_ignores_unsimulated_and_zero_p(self):
        extra = [SegmentRecord("z", 1.0, 0.0, 0.0, True, False), rec(0.5), rec(0.1, i=1)]
        assert estimate_second_moment(extra, 0.5) == pytest.approx(0.6 / 0.126, abs=1e-9)

    def test_errors(self):
        with pytest.raises(NoSimulatedRecords):
            estimate_second_moment([SegmentRecord("z", 1.0, 0.0, 0.0, True, False)], 0.5)
        with pytest.raises(InputError):
            estimate_second_moment([rec(0.5)], 0.0)

    def test_small_gamma_hat_stays_finite(self):
        records = [rec(p, i=i) for i, p in enumerate(np.geomspace(1e-6, 1, 50))]
        assert math.isfinite(estimate_second_moment(records, 0.01))

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(st.tuples(st.floats(1e-4, 1.0), st.floats(0.05, 1.0)), min_size=1, max_size=30),
        st.floats(0.05, 2.0),
        st.floats(-20, 20),
    )
    def test_scale_invariance_and_lower_bound(self, pairs, g, log_const):
        s = np.array([b for _, b in pairs])
        p = np.array([a for a, _ in pairs]) * s
        m = _second_moment(s, p, g)
        assert m >= 1 - 1e-9
        # inject an explicit constant into r = c * p^(1/g)
        r = np.exp(log_const + np.log(p) / g)
        direct = np.sum(r / (s * p)) / np.sum(r * p / s)
        assert m == pytest.approx(direct, rel=1e-9)


class TestFitGamma:
    def _records(self, gamma, n, seed):
        rng = np.random.default_rng(seed)
        p = rng.uniform(0.01, 1.0, n)
        y = rng.random(n) < 0.8 * p ** (1 / gamma)
        return [rec(float(pi), i=i, reviewed=True, outcome=bool(yi)) for i, (pi, yi) in enumerate(zip(p, y))]

    def test_recovers_gamma(self):
        assert 0.45 <= fit_gamma_index(self._records(0.5, 10_000, 0)) <= 0.55

    def test_recovers_greedy_gamma(self):
        assert fit_gamma_index(self._records(1.2, 10_000, 1)) == pytest.approx(1.2, abs=0.15)

    def test_errors(self):
        with pytest.raises(InsufficientData):
            fit_gamma_index(self._records(0.5, 10, 0))
        same = [rec(0.3, i=i, reviewed=True, outcome=i % 2 == 0) for i in range(40)]
        with pytest.raises(Unidentifiable):
            fit_gamma_index(same)


class TestResolve:
    def test_modes(self, pair):
        a = pair.subset("A")
        assert a.max_weight == 20.0
        wm = NextWeightSpec(NextWeightMode.WM, w2_value=72.75)
        assert resolve_next_weight(wm, a) == 72.75
        assert resolve_next_weight(wm, pair) == 384.69
        assert resolve_next_weight(NextWeightSpec(NextWeightMode.WM, w2_value=7.0), validate_weights([])) == 7.0
        assert resolve_next_weight(NextWeightSpec.fixed(3.0), a) == 3.0
        assert resolve_next_weight(NextWeightSpec(), validate_weights([])) == 0.0
        assert resolve_next_weight(NextWeightSpec(NextWeightMode.W2, w2_value=5.0), pair) == 5.0

    def test_estimated_from_records(self):
        s = validate_weights([2.0, 10.0])
        spec = NextWeightSpec(NextWeightMode.WM, gamma_hat=0.5)
        assert resolve_next_weight(spec, s, [rec(0.5), rec(0.1, i=1)]) == 10.0
        spec2 = NextWeightSpec(NextWeightMode.W2, gamma_hat=0.5)
        assert resolve_next_weight(spec2, s, [rec(0.5), rec(0.1, i=1)]) == pytest.approx(2.1822, abs=1e-4)

    def test_unresolved(self):
        with pytest.raises(NextWeightUnresolved):
            resolve_next_weight(NextWeightSpec(NextWeightMode.W2), validate_weights([1.0]))

    def test_greedy_diagnostic(self):
        with pytest.raises(GreedySamplingVariance):
            resolve_next_weight(NextWeightSpec(NextWeightMode.WM, w2_value=1e9), validate_weights([1.0]))

    @given(st.lists(st.floats(0.5, 500.0), max_size=10), st.lists(st.floats(0.5, 500.0), max_size=10))
    def test_wm_nondecreasing(self, base, extra):
        spec = NextWeightSpec(NextWeightMode.WM, w2_value=30.0)
        small = resolve_next_weight(spec, validate_weights(base))
        assert resolve_next_weight(spec, validate_weights(base + extra)) >= small
