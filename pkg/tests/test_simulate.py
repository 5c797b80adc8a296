import io
import math

import numpy as np
import pytest
from scipy.special import expit

from zigmhmm import EmConfig, MixtureHmmParams
from zigmhmm.exceptions import ZigHmmError
from zigmhmm.simulate import (
    ScenarioSpec,
    apply_mcar,
    apply_mnar,
    convergence_experiment,
    misclassification_experiment,
    sample_dataset,
    scenario_params,
    simulate,
    write_convergence_csv,
    write_curve_csv,
)


class TestScenarios:
    @pytest.mark.parametrize("case,e,a2", [("hard", 0.75, 3), ("medium_hard", 0.9, 3), ("medium-easy", 0.75, 5), ("easy", 0.9, 5)])
    def test_design(self, case, e, a2):
        p = scenario_params(case)
        np.testing.assert_array_equal(p.A[0], [[e, 1 - e], [1 - e, e]])
        np.testing.assert_array_equal(p.A[1], [[1 - e, e], [e, 1 - e]])
        assert p.shape.tolist() == [1.0, a2] and p.rate.tolist() == [1.0, 1.0]
        assert p.epsilon.tolist() == [0.1, 0.1] and p.delta.tolist() == [0.5, 0.5]

    def test_unknown(self):
        with pytest.raises(ZigHmmError):
            scenario_params("trivial")
        with pytest.raises(ZigHmmError):
            ScenarioSpec(missingness="mar")


class TestSampling:
    def test_class_shares(self, rng):
        d = sample_dataset(scenario_params("easy"), 10_000, 0, rng)
        assert d.values.shape == (10_000, 1)
        assert abs(d.z.mean() - 0.5) < 3 * math.sqrt(0.25 / 10_000)

    def test_transitions_and_zeros(self, rng):
        p = scenario_params("medium_hard")
        d = sample_dataset(p, 200, 500, rng)
        for k in range(2):
            x = d.x[d.z == k]
            counts = np.zeros((2, 2))
            np.add.at(counts, (x[:, :-1].ravel(), x[:, 1:].ravel()), 1)
            rows = counts.sum(axis=1, keepdims=True)
            se = np.sqrt(p.A[k] * (1 - p.A[k]) / rows)
            assert np.all(np.abs(counts / rows - p.A[k]) < 3 * se)
        for h in range(2):
            y = d.complete[d.x == h]
            assert abs((y == 0).mean() - 0.1) < 3 * math.sqrt(0.09 / y.size)

    def test_reproducible(self):
        a = simulate(ScenarioSpec("hard", 5, 30, "mnar", seed=9))
        b = simulate(ScenarioSpec("hard", 5, 30, "mnar", seed=9))
        np.testing.assert_array_equal(a.values, b.values)


class TestMissingness:
    def test_mcar_counts(self, rng):
        y = rng.random((50, 100))
        one = apply_mcar(y, [(1, 10)], rng)
        two = apply_mcar(y, [(2, 20)], rng)
        assert np.all(np.isnan(one).sum(axis=1) == 10)
        assert np.all(np.isnan(two).sum(axis=1) == 40)
        np.testing.assert_array_equal(one[~np.isnan(one)], y[~np.isnan(one)])
        np.testing.assert_array_equal(apply_mcar(y, [], rng), y)

    def test_mcar_runs_are_contiguous(self, rng):
        masked = apply_mcar(np.ones((20, 100)), [(1, 10)], rng)
        for row in np.isnan(masked):
            idx = np.flatnonzero(row)
            assert idx[-1] - idx[0] == 9

    def test_mcar_too_long(self, rng):
        with pytest.raises(ZigHmmError):
            apply_mcar(np.ones((1, 30)), [(2, 20)], rng)

    def test_mnar_saturation(self, rng):
        assert not np.isnan(apply_mnar(np.full((1, 1000), 25.0), rng)).any()
        zeros = apply_mnar(np.zeros((1, 100_000)), rng)
        assert abs((~np.isnan(zeros)).mean() - 0.5) < 3 * math.sqrt(0.25 / 1e5)

    def test_mnar_rate(self, rng):
        d = sample_dataset(scenario_params("hard"), 200, 499, rng)
        masked = apply_mnar(d.complete, rng)
        ref = expit(sample_dataset(scenario_params("hard"), 2000, 499, rng).complete).mean()
        n = masked.size
        assert abs((~np.isnan(masked)).mean() - ref) < 3 * math.sqrt(ref * (1 - ref) / n) + 0.005

    def test_mnar_depends_on_state(self, rng):
        d = sample_dataset(scenario_params("easy"), 200, 499, rng)
        seen = ~np.isnan(apply_mnar(d.complete, rng))
        low, high = seen[d.x == 0], seen[d.x == 1]
        se = math.sqrt(low.var() / low.size + high.var() / high.size)
        assert high.mean() - low.mean() > 3 * se


class TestHarnesses:
    def test_identical_components(self, rng):
        p = scenario_params("easy")
        same = MixtureHmmParams(p.delta, [p.pi[0]] * 2, [p.A[0]] * 2, p.epsilon, p.shape, p.rate)
        pts = misclassification_experiment(same, [5, 20], 50, rng)
        assert all(pt.median == 0.0 and pt.q05 == 0.0 for pt in pts)

    def test_curve_csv(self, rng):
        pts = misclassification_experiment("easy", [10, 20], 30, rng)
        buf = io.StringIO()
        write_curve_csv(pts, buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "T,median,q05,q95,error_rate" and len(lines) == 3
        assert pts[1].median < pts[0].median

    def test_convergence_small(self):
        rows = convergence_experiment([(10, 60, "none"), (10, 60, "mcar1")], "easy", replicates=2, config=EmConfig(restarts=2))
        assert len(rows) == 2
        for r in rows:
            assert 0.0 <= r["mse_A"] and r["partition_ari"] <= 1.0
        buf = io.StringIO()
        write_convergence_csv(rows, buf)
        assert buf.getvalue().splitlines()[0].startswith("n,T,missingness,partition_ari,state_ari")
