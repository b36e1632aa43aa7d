import math

import numpy as np
import pytest
from scipy import stats

from rareci.core import InputError
from rareci.simulator import (
    SamplingModel,
    Scenario,
    TwoStage,
    apply_sampling,
    expand_grid,
    generate_population,
    point_estimates,
    replicate_seed,
    run_replicate,
    run_study,
    true_positive_prob,
)

BASE = Scenario()


class TestModel:
    def test_true_positive_prob(self):
        assert true_positive_prob(BASE, 0.0) == pytest.approx(1e-3, rel=1e-12)
        assert true_positive_prob(BASE, 2.0) == pytest.approx(0.007342, abs=5e-7)
        assert true_positive_prob(Scenario(pi=1.0), np.array([-5.0, 3.0])) == pytest.approx([1.0, 1.0])

    def test_theta(self):
        assert Scenario(lam=1e6, pi=1e-3).theta == pytest.approx(1000)

    def test_scenario_validation(self):
        with pytest.raises(InputError):
            Scenario(budget=1.5)
        with pytest.raises(InputError):
            Scenario(methods=("xx",))
        with pytest.raises(InputError):
            SamplingModel("nope")

    def test_misspecified_model_depresses_high_r(self):
        m = SamplingModel("sqrt_times_one_minus_r")
        score = m.score(np.array([0.25, 0.99]))
        assert score[1] < score[0]

    def test_oracle_gamma_hat(self):
        assert BASE.resolved_gamma_hat() == 0.5
        assert Scenario(sampling_model=SamplingModel("power", 0.0)).resolved_gamma_hat() == 0.01
        assert Scenario(sampling_model=SamplingModel("r_times_one_plus_r")).resolved_gamma_hat() == 0.5
        assert Scenario(gamma_hat=0.7).resolved_gamma_hat() == 0.7
        assert Scenario(two_stage=TwoStage(0.1, 0.25, 0.3)).gamma == pytest.approx(0.55)


class TestPopulation:
    def test_empty(self):
        sc = Scenario(lam=0)
        pop = generate_population(sc, 1)
        assert len(pop) == 0
        assert apply_sampling(pop, sc, 2).weights.size == 0

    def test_deterministic(self):
        a, b = generate_population(BASE, 5), generate_population(BASE, 5)
        assert np.array_equal(a.v, b.v) and np.array_equal(a.y, b.y)

    def test_true_positive_count(self):
        counts = [generate_population(BASE, s).y.sum() for s in range(40)]
        assert np.mean(counts) == pytest.approx(100, abs=3 * 10 / math.sqrt(40))


class TestSampling:
    def test_zero_budget(self):
        pop = generate_population(BASE, 0)
        assert apply_sampling(pop, Scenario(budget=0.0), 1).weights.size == 0

    def test_uniform_weights_equal(self):
        sc = Scenario(sampling_model=SamplingModel("power", 0.0), budget=0.05)
        out = apply_sampling(generate_population(sc, 3), sc, 4)
        assert out.weights.size > 0
        assert np.allclose(out.weights, out.weights[0], rtol=1e-12)

    @pytest.mark.parametrize("two", [None, TwoStage(0.1, 0.25, 0.25)])
    def test_weights_are_inverse_p(self, two):
        sc = Scenario(budget=0.3 if two else 0.03, two_stage=two)
        out = apply_sampling(generate_population(sc, 6), sc, 7)
        p = out.p_prob
        assert np.all((p > 0) & (p <= 1))
        chosen = out.reviewed & out.outcome
        np.testing.assert_allclose(out.weights, 1 / p[chosen], rtol=1e-12)
        records = out.records()
        assert len(records) == len(p)
        assert all(r.outcome is None for r in records if not r.reviewed)

    def test_two_stage_matches_one_stage(self):
        # generous budgets keep every p below 1
        one = Scenario(lam=1e6, budget=0.01)
        two = Scenario(lam=1e6, budget=0.1, two_stage=TwoStage(0.1, 0.25, 0.25))
        w1, w2 = [], []
        seed = 0
        while min(len(w1), len(w2)) < 500:
            for sc, acc in ((one, w1), (two, w2)):
                pop = generate_population(sc, seed)
                out = apply_sampling(pop, sc, seed + 1)
                assert out.p_prob.max() < 1
                acc.extend(out.weights)
            seed += 2
        res = stats.ks_2samp(w1[:500], w2[:500])
        assert res.pvalue > 0.01


class TestStudy:
    def test_unbiased(self):
        est = point_estimates(Scenario(budget=0.05, replicates=2000, base_seed=3))
        se = est.std(ddof=1) / math.sqrt(est.size)
        assert abs(est.mean() - 100) < 3 * se

    def test_deterministic_and_job_independent(self):
        cells = expand_grid(Scenario(replicates=12, methods=("pb", "eb2", "eb2m", "go2m", "gp2m")), [0.01, 0.05])
        a = run_study(cells, jobs=1, chunk_size=5)
        b = run_study(cells, jobs=2, chunk_size=4)
        assert [r.as_dict() for r in a.rows] == [r.as_dict() for r in b.rows]

    def test_single_replicate(self):
        rep = run_study([Scenario(replicates=1)])
        assert all(r.coverage_error in (0.0, 1.0) for r in rep.rows)

    def test_smoke_replicates(self):
        rep = run_study(expand_grid(Scenario(replicates=10), [0.01, 0.03]))
        assert all(r.replicates + r.failures == 10 for r in rep.rows)

    def test_replicate_contents(self):
        sc = Scenario(methods=("pb", "eb2", "eb2m", "go2m", "gp2m"), budget=0.03)
        res = run_replicate(sc, replicate_seed(1, 0, 0))
        assert set(res.intervals) == set(sc.methods)
        lo2, up2 = res.intervals["eb2"]
        lo2m, up2m = res.intervals["eb2m"]
        assert lo2 == lo2m and up2 <= up2m
        for lo, up in res.intervals.values():
            assert 0 <= lo <= res.point_estimate <= up

    def test_uniform_pb_undercovers_at_tiny_budget(self):
        sc = Scenario(sampling_model=SamplingModel("power", 0.0), budget=0.002, replicates=300, base_seed=5)
        (pb,) = run_study([sc]).get("pb")
        assert pb.coverage_error > 0.5

    def test_replicate_seed_stable(self):
        assert replicate_seed(0, 1, 2) == replicate_seed(0, 1, 2)
        assert replicate_seed(0, 1, 2) != replicate_seed(0, 2, 1)
