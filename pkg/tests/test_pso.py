from __future__ import annotations

import numpy as np
import pytest

from ptme.pso import (
    PsoParams,
    compare_runs,
    pso_run,
    sapso_run,
    velocity_update,
    write_comparison,
    write_trajectory,
)
from ptme.sampling import DesignSpace
from ptme.traffic import SyntheticObjective, synthetic_objective


def unit_space(dim, integer=False):
    return DesignSpace(np.zeros(dim), np.ones(dim), integer_valued=integer)


class CountingObjective:
    def __init__(self, name, space):
        self.inner = SyntheticObjective(name, space)
        self.space = space
        self.calls = 0
        self.seen = []

    def __call__(self, x):
        self.calls += 1
        self.seen.append(np.array(x))
        return self.inner(x)


class TestParams:
    def test_defaults_match_protocol(self):
        p = PsoParams()
        assert (p.swarm_size, p.max_evaluations) == (100, 30_000)
        assert p.phi1 == p.phi2 == 2.05
        assert (p.inertia_start, p.inertia_end) == (0.5, 0.1)
        assert p.velocity_clamp == 0.5

    def test_rejects_budget_below_swarm(self):
        with pytest.raises(ValueError):
            PsoParams(swarm_size=100, max_evaluations=50)


class TestVelocityUpdate:
    def test_stationary_attractor_reduces_to_inertia(self):
        x = np.array([0.3, 0.7])
        v = np.array([0.2, -0.1])
        r1 = np.array([0.9, 0.2])
        r2 = np.array([0.4, 0.8])
        out = velocity_update(v, x, x, x, 0.5, 2.05, 2.05, r1, r2)
        np.testing.assert_allclose(out, 0.5 * v, rtol=1e-15)

    def test_pull_toward_better_points(self):
        v = np.zeros(1)
        x = np.array([0.0])
        p = np.array([1.0])
        out = velocity_update(v, x, p, p, 0.5, 2.0, 2.0, np.array([0.5]), np.array([0.5]))
        assert out[0] == pytest.approx(2.0)


class TestPsoRun:
    def test_sphere_convergence_across_seeds(self):
        space = unit_space(10)
        obj = SyntheticObjective("sphere", space)
        hits = 0
        for seed in range(10):
            result = pso_run(obj, space, PsoParams(), seed=seed)
            if result.best_value - 1.0 < 1e-2:
                hits += 1
        assert hits >= 9

    def test_budget_boundary_is_initialization_only(self):
        space = unit_space(4)
        obj = SyntheticObjective("sphere", space)
        params = PsoParams(swarm_size=10, max_evaluations=10)
        result = pso_run(obj, space, params, seed=3)
        assert result.trajectory == [(0, 10, result.best_value)]
        # best equals the best of the URS initial swarm
        rng = np.random.default_rng(3)
        init = rng.uniform(space.lower, space.upper, size=(10, 4))
        expected = min(synthetic_objective("sphere", row) for row in init)
        assert result.best_value == pytest.approx(expected, rel=1e-12)

    def test_velocity_clamp_respected(self):
        space = unit_space(6)
        obj = SyntheticObjective("rastrigin-like", space)
        params = PsoParams(swarm_size=20, max_evaluations=2000)
        for seed in range(5):
            result = pso_run(obj, space, params, seed=seed)
            assert result.max_velocity_fraction <= 0.5 + 1e-12

    def test_integer_space_positions_on_grid_and_in_bounds(self):
        space = DesignSpace.signal_timing(8)
        obj = CountingObjective("sphere", space)
        params = PsoParams(swarm_size=12, max_evaluations=360)
        result = pso_run(obj, space, params, seed=1)
        seen = np.vstack(obj.seen)
        assert np.all(seen >= space.lower) and np.all(seen <= space.upper)
        assert np.all(seen == np.round(seen))
        assert np.all(result.best_x == np.round(result.best_x))
        assert np.all(result.best_x[1::2] == 4)

    def test_global_best_is_monotone(self):
        space = unit_space(5)
        obj = SyntheticObjective("rastrigin-like", space)
        result = pso_run(obj, space, PsoParams(swarm_size=20, max_evaluations=2000), seed=7)
        values = [b for _, _, b in result.trajectory]
        assert all(b2 <= b1 for b1, b2 in zip(values, values[1:]))

    def test_deterministic_per_seed(self):
        space = unit_space(5)
        obj = SyntheticObjective("sphere", space)
        params = PsoParams(swarm_size=15, max_evaluations=600)
        a = pso_run(obj, space, params, seed=11)
        b = pso_run(obj, space, params, seed=11)
        assert a.trajectory == b.trajectory
        np.testing.assert_array_equal(a.best_x, b.best_x)

    def test_evaluation_count_matches_budget(self):
        space = unit_space(3)
        obj = CountingObjective("sphere", space)
        params = PsoParams(swarm_size=10, max_evaluations=200)
        pso_run(obj, space, params, seed=0)
        assert obj.calls == 200


class TestSapsoRun:
    def test_oracle_surrogate_reproduces_pso_exactly(self):
        space = unit_space(8)
        obj = SyntheticObjective("sphere", space)
        params = PsoParams(swarm_size=20, max_evaluations=1000)
        plain = pso_run(obj, space, params, seed=5)
        assisted = sapso_run(obj, obj, space, params, seed=5)
        assert assisted.trajectory == plain.trajectory
        np.testing.assert_array_equal(assisted.best_x, plain.best_x)
        assert assisted.real_value == pytest.approx(plain.best_value, rel=1e-12)

    def test_exactly_one_real_evaluation(self):
        space = unit_space(4)
        surrogate = CountingObjective("sphere", space)
        real = CountingObjective("sphere", space)
        params = PsoParams(swarm_size=10, max_evaluations=150)
        result = sapso_run(surrogate, real, space, params, seed=2)
        assert real.calls == 1
        assert result.real_evaluations == 1
        assert surrogate.calls == result.surrogate_evaluations
        assert surrogate.calls >= params.max_evaluations

    def test_constant_surrogate_never_improves(self):
        space = unit_space(4)
        real = SyntheticObjective("sphere", space)
        params = PsoParams(swarm_size=10, max_evaluations=200)
        result = sapso_run(lambda x: 5.0, real, space, params, seed=4)
        values = {b for _, _, b in result.trajectory}
        assert values == {5.0}
        assert result.real_value >= 1.0

    def test_dimension_mismatch_rejected(self):
        from ptme.surrogate import MlpSpec, build

        space = unit_space(6)
        model = build(MlpSpec.for_dim(4), seed=0)
        with pytest.raises(ValueError, match="inputs"):
            sapso_run(model, SyntheticObjective("sphere", space), space,
                      PsoParams(swarm_size=5, max_evaluations=10), seed=0)


class TestCompareRuns:
    def test_identical_groups_not_significant(self):
        groups = [("a", [1.0, 2.0, 3.0]), ("b", [1.0, 2.0, 3.0])]
        summaries, pairwise = compare_runs(groups)
        assert pairwise[0]["p"] == 1.0
        assert not pairwise[0]["significant"]
        assert summaries[0]["median"] == 2.0

    def test_five_number_summary(self):
        groups = [("a", list(range(1, 11))), ("b", list(range(5, 15)))]
        summaries, _ = compare_runs(groups)
        a = summaries[0]
        assert (a["min"], a["max"], a["n"]) == (1.0, 10.0, 10)
        assert a["q1"] < a["median"] < a["q3"]

    def test_rejects_single_or_empty_groups(self):
        with pytest.raises(ValueError):
            compare_runs([("a", [1.0])])
        with pytest.raises(ValueError):
            compare_runs([("a", [1.0]), ("b", [])])

    def test_csv_writers(self, tmp_path):
        groups = [("pso", [1.0, 1.1, 0.9]), ("sapso", [1.3, 1.2, 1.4])]
        summaries, pairwise = compare_runs(groups)
        write_comparison(tmp_path / "cmp.csv", summaries, pairwise)
        text = (tmp_path / "cmp.csv").read_text()
        assert text.startswith("label,n,min,q1,median,q3,max")
        assert "pso" in text and "sapso" in text

        write_trajectory(tmp_path / "traj.csv", [(0, 10, 5.0), (1, 20, 4.0)])
        lines = (tmp_path / "traj.csv").read_text().splitlines()
        assert lines[0] == "generation,FE,best_fitness"
        assert len(lines) == 3
