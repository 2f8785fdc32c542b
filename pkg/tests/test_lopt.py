"""Tests for local hyperparameter refinement."""

import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hparam_mapper.environments import (
    CountingEnvironment,
    HyperparamSpec,
    HyperparamVector,
    analytic_env,
    rotated_env,
)
from hparam_mapper.lopt import (
    LoptConfig,
    SegmentTree,
    dmc,
    lopt,
    mc,
    write_trace_csv,
)

PAIR = (HyperparamSpec("a", -2.0, 2.0), HyperparamSpec("b", -2.0, 2.0))


def box(n):
    return tuple(HyperparamSpec(f"p{i}", -2.0, 2.0) for i in range(n))


class TestSegmentTree:
    def test_matches_naive_sums(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(1, 40))
            tree = SegmentTree(n, initial=0.0)
            leaves = np.zeros(n)
            for _ in range(int(rng.integers(1, 20))):
                i, value = int(rng.integers(n)), float(rng.random())
                tree.update(i, value)
                leaves[i] = value
            left = int(rng.integers(n))
            right = int(rng.integers(left, n))
            assert tree.range_sum(left, right) == pytest.approx(leaves[left : right + 1].sum())

    @given(data=st.data(), n=st.integers(1, 64))
    def test_prefix_sums_property(self, data, n):
        updates = data.draw(
            st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, 1000)), max_size=30)
        )
        tree = SegmentTree(n, initial=0.0)
        leaves = [0] * n
        for index, value in updates:
            tree.update(index, value / 8)
            leaves[index] = value
        left = data.draw(st.integers(0, n - 1))
        right = data.draw(st.integers(left, n - 1))
        assert tree.range_sum(left, right) == sum(leaves[left : right + 1]) / 8

    def test_unseen_leaves_block_convergence(self):
        tree = SegmentTree(4)
        assert not tree.check_over(0, 3, 1e-3)
        for i in range(4):
            tree.update(i, 1e-4)
        assert tree.check_over(0, 3, 1e-3)
        assert tree[2] == 1e-4

    def test_invalid_use(self):
        tree = SegmentTree(3, initial=0.0)
        with pytest.raises(IndexError):
            tree.update(3, 1.0)
        with pytest.raises(ValueError):
            tree.update(0, -1.0)
        with pytest.raises(ValueError):
            tree.range_sum(2, 1)
        with pytest.raises(ValueError):
            SegmentTree(0)


class TestMc:
    def test_climbs_to_optimum(self):
        env = analytic_env(HyperparamVector(PAIR, (0.73, 0.0)))
        result = mc(HyperparamVector(PAIR, (-1.0, 0.0)), 0, env, None)
        assert result.vector[0] == pytest.approx(0.73, abs=1e-3)
        assert result.vector[1] == 0.0
        assert result.accuracy > result.initial_accuracy

    def test_integer_coordinate_steps_by_one(self):
        depth = HyperparamSpec("depth", 1, 100, dtype="integer")
        env = analytic_env(HyperparamVector((depth,), (50,)), curvature=1e-3)
        result = mc(HyperparamVector((depth,), (40,)), 0, env, None)
        assert result.vector[0] == 50.0

    def test_never_worse_at_optimum(self):
        optimum = HyperparamVector(PAIR, (0.5, 0.5))
        result = mc(optimum, 1, analytic_env(optimum), None)
        assert result.vector == optimum
        assert result.accuracy == 1.0

    def test_coordinate_out_of_range(self):
        optimum = HyperparamVector(PAIR, (0.5, 0.5))
        with pytest.raises(IndexError):
            mc(optimum, 2, analytic_env(optimum), None)


class TestDmc:
    def test_separable_pair_matches_two_climbs(self):
        env = analytic_env(HyperparamVector(PAIR, (0.4, -1.3)), curvature=[1.0, 0.5])
        start = HyperparamVector(PAIR, (-1.0, 1.0))
        paired = dmc(start, 0, env, None)
        first = mc(start, 0, env, None)
        second = mc(first.vector, 1, env, None)
        np.testing.assert_allclose(paired.vector.values, second.vector.values, atol=1e-12)
        assert paired.accuracy == pytest.approx(second.accuracy)

    def test_pair_out_of_range(self):
        optimum = HyperparamVector(PAIR, (0.5, 0.5))
        with pytest.raises(IndexError):
            dmc(optimum, 1, analytic_env(optimum), None)


class TestLopt:
    @pytest.mark.parametrize("seed", range(5))
    def test_converges_on_separable_surface(self, seed):
        rng = np.random.default_rng(seed)
        specs = box(6)
        optimum = HyperparamVector(specs, tuple(rng.uniform(-1, 1, 6)))
        start = HyperparamVector(specs, tuple(rng.uniform(-1, 1, 6)))
        result = lopt(start, analytic_env(optimum, curvature=0.02), None)
        np.testing.assert_allclose(result.vector.u(), optimum.u(), atol=1e-2)
        assert result.accuracy >= result.initial_accuracy

    def test_converges_on_rotated_surface(self):
        optimum = HyperparamVector(PAIR, (0.3, -0.2))
        env = rotated_env(optimum, 45.0)
        result = lopt(HyperparamVector(PAIR, (0.8, 0.4)), env, None)
        np.testing.assert_allclose(result.vector.u(), optimum.u(), atol=1e-2)
        assert result.accuracy > result.initial_accuracy

    def test_pair_climb_from_many_starts(self):
        rng = np.random.default_rng(21)
        for _ in range(100):
            center = rng.uniform(-1, 1, 2)
            optimum = HyperparamVector(PAIR, tuple(center))
            start = HyperparamVector(PAIR, tuple(center + rng.uniform(-0.6, 0.6, 2)))
            result = dmc(start, 0, analytic_env(optimum), None)
            np.testing.assert_allclose(result.vector.u(), optimum.u(), atol=1e-2)
            assert result.accuracy >= result.initial_accuracy

    def test_rotated_surface_from_many_starts(self):
        rng = np.random.default_rng(22)
        for _ in range(100):
            center = rng.uniform(-1, 1, 2)
            optimum = HyperparamVector(PAIR, tuple(center))
            start = HyperparamVector(PAIR, tuple(center + rng.uniform(-0.6, 0.6, 2)))
            result = lopt(start, rotated_env(optimum, 45.0), None)
            np.testing.assert_allclose(result.vector.u(), optimum.u(), atol=1e-2)
            assert result.accuracy >= result.initial_accuracy

    def test_flat_surface_keeps_start(self):
        env = analytic_env(HyperparamVector(PAIR, (0.5, -0.5)), curvature=0.0)
        start = HyperparamVector(PAIR, (-1.2, 1.7))
        result = lopt(start, env, None)
        assert result.vector == start
        assert result.accuracy == result.initial_accuracy == 1.0

    def test_budget(self):
        optimum = HyperparamVector(box(4), (1.0, 1.0, 1.0, 1.0))
        env = CountingEnvironment(analytic_env(optimum, curvature=0.1))
        start = HyperparamVector(box(4), (0.0, 0.0, 0.0, 0.0))
        result = lopt(start, env, None, LoptConfig(eval_budget=10))
        assert result.exhausted
        assert result.evaluations == env.evaluations == 10
        assert result.accuracy >= result.initial_accuracy

    def test_trace(self, tmp_path):
        optimum = HyperparamVector(PAIR, (0.1, 0.2))
        result = lopt(HyperparamVector(PAIR, (0.0, 0.0)), analytic_env(optimum), None, trace=True)
        assert len(result.trace) == result.evaluations
        assert result.trace[0].coordinate == ""
        path = tmp_path / "trace.csv"
        write_trace_csv(result.trace, path)
        with open(path, newline="") as handle:
            rows = list(csv.reader(handle))
        assert rows[0] == ["step", "coordinate", "probe_value", "accuracy"]
        assert len(rows) == result.evaluations + 1
        assert {row[1] for row in rows[2:]} <= {"a", "b"}

    def test_config_validation(self):
        with pytest.raises(ValueError):
            LoptConfig(epsilon=0.0)
        with pytest.raises(ValueError):
            LoptConfig(eval_budget=0)

    @pytest.mark.slow
    def test_evaluations_grow_subquadratically(self):
        rng = np.random.default_rng(11)

        def evaluations(n):
            specs = box(n)
            optimum = HyperparamVector(specs, tuple(rng.uniform(-1, 1, n)))
            start = HyperparamVector(specs, tuple(rng.uniform(-1, 1, n)))
            return lopt(start, analytic_env(optimum, curvature=0.2 / n), None).evaluations

        for n in (4, 16, 64):
            assert evaluations(4 * n) / evaluations(n) < 16
