"""Tests for hyperparameter schemas and environments."""

import math

import numpy as np
import pytest

from hparam_mapper.datasets import SplitPair, TabularDataset, split
from hparam_mapper.environments import (
    RIDGE_LOGISTIC_SPECS,
    CountingEnvironment,
    HyperparamSpec,
    HyperparamVector,
    analytic_env,
    random_search,
    rotated_env,
    sample_vector,
    specs_from_json,
    specs_to_json,
    toy_learner_env,
)
from hparam_mapper.errors import DegenerateSplitError, OutOfBoundsError
from hparam_mapper.synthetic import noisy_blobs

X = HyperparamSpec("x", -2.0, 2.0)
Y = HyperparamSpec("y", -2.0, 2.0)


@pytest.fixture
def blob_split():
    return split(noisy_blobs(120, 3, 2, separation=6.0, seed=1), seed=0)


class TestHyperparamSpec:
    def test_log_scale_round_trip(self):
        spec = HyperparamSpec("lr", 1e-4, 1.0, scale="log10")
        assert spec.u_bounds == (-4.0, 0.0)
        assert spec.from_u(spec.to_u(0.01)) == pytest.approx(0.01)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"low": 1.0, "high": 1.0},
            {"low": 0.0, "high": 1.0, "scale": "log10"},
            {"low": 0.2, "high": 0.8, "dtype": "integer"},
            {"low": 0.0, "high": 1.0, "dtype": "complex"},
            {"low": 0.0, "high": 1.0, "head_activation": "relu"},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            HyperparamSpec("p", **kwargs)

    def test_snap(self):
        epochs = HyperparamSpec("epochs", 1, 200, dtype="integer")
        assert epochs.snap(7.6) == 8.0
        assert epochs.snap(-3.0) == 1.0
        assert X.snap(5.0) == 2.0

    def test_json_round_trip(self):
        assert specs_from_json(specs_to_json(RIDGE_LOGISTIC_SPECS)) == RIDGE_LOGISTIC_SPECS


class TestHyperparamVector:
    def test_out_of_bounds(self):
        with pytest.raises(OutOfBoundsError) as excinfo:
            HyperparamVector((X,), (3.0,))
        assert excinfo.value.name == "x"

    def test_integer_must_be_integral(self):
        epochs = HyperparamSpec("epochs", 1, 200, dtype="integer")
        with pytest.raises(OutOfBoundsError):
            HyperparamVector((epochs,), (2.5,))

    def test_from_u_snaps(self):
        vector = HyperparamVector.from_u(RIDGE_LOGISTIC_SPECS, [-2.0, 3.0, 10.4])
        assert vector.as_dict() == pytest.approx({"learning_rate": 0.01, "l2": 10.0, "epochs": 10})

    def test_u_and_mapping(self):
        vector = HyperparamVector.from_mapping(
            RIDGE_LOGISTIC_SPECS, {"epochs": 5, "l2": 1e-3, "learning_rate": 0.1}
        )
        np.testing.assert_allclose(vector.u(), [-1.0, -3.0, 5.0])
        assert vector.with_value(2, 6).values[2] == 6.0

    def test_sample_is_in_bounds(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            vector = sample_vector(RIDGE_LOGISTIC_SPECS, rng)
            assert all(s.contains(v) for s, v in zip(vector.specs, vector.values, strict=True))


class TestAnalyticEnvironments:
    def test_peak_at_optimum(self):
        optimum = HyperparamVector((X, Y), (0.5, -1.0))
        env = analytic_env(optimum, curvature=[1.0, 2.0])
        assert env.evaluate(optimum, None) == 1.0
        assert env.evaluate(HyperparamVector((X, Y), (0.5, -0.5)), None) == pytest.approx(0.5)

    def test_never_negative(self):
        env = analytic_env(HyperparamVector((X,), (-2.0,)), curvature=10.0)
        assert env.evaluate(HyperparamVector((X,), (2.0,)), None) == 0.0

    def test_rotation_couples_axes(self):
        optimum = HyperparamVector((X, Y), (0.0, 0.0))
        env = rotated_env(optimum, 45.0)
        along = env.evaluate(HyperparamVector((X, Y), (0.5, 0.5)), None)
        across = env.evaluate(HyperparamVector((X, Y), (0.5, -0.5)), None)
        assert along == pytest.approx(1 - 0.5)
        assert across == pytest.approx(1 - 0.25 * 0.5)

    def test_rotated_needs_two_parameters(self):
        with pytest.raises(ValueError):
            rotated_env(HyperparamVector((X,), (0.0,)), 30.0)

    def test_schema_mismatch(self):
        env = analytic_env(HyperparamVector((X,), (0.0,)))
        with pytest.raises(ValueError):
            env.evaluate(HyperparamVector((Y,), (0.0,)), None)


class TestToyLearners:
    @pytest.mark.parametrize("kind", ["ridge_logistic", "boosted_stumps"])
    def test_separable_blobs_are_learned(self, kind, blob_split):
        env = toy_learner_env(kind)
        defaults = {
            "ridge_logistic": {"learning_rate": 0.5, "l2": 1e-4, "epochs": 100},
            "boosted_stumps": {"n_rounds": 30, "learning_rate": 0.3, "max_bins": 16},
        }[kind]
        vector = HyperparamVector.from_mapping(env.specs, defaults)
        assert env.evaluate(vector, blob_split) >= 0.8

    def test_deterministic(self, blob_split):
        env = toy_learner_env("boosted_stumps")
        vector = HyperparamVector.from_mapping(
            env.specs, {"n_rounds": 10, "learning_rate": 0.1, "max_bins": 8}
        )
        assert env.evaluate(vector, blob_split) == env.evaluate(vector, blob_split)

    def test_single_class_train_split(self):
        one_class = TabularDataset(np.zeros((5, 2)), np.zeros(5, dtype=int), 2)
        env = toy_learner_env("ridge_logistic")
        vector = HyperparamVector.from_mapping(
            env.specs, {"learning_rate": 0.1, "l2": 1e-3, "epochs": 5}
        )
        with pytest.raises(DegenerateSplitError):
            env.evaluate(vector, SplitPair(one_class, one_class))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            toy_learner_env("svm")

    def test_needs_a_split(self):
        env = toy_learner_env("ridge_logistic")
        vector = HyperparamVector.from_mapping(
            env.specs, {"learning_rate": 0.1, "l2": 1e-3, "epochs": 5}
        )
        with pytest.raises(TypeError):
            env.evaluate(vector, None)


class TestRandomSearch:
    def test_counts_evaluations(self):
        env = CountingEnvironment(analytic_env(HyperparamVector((X, Y), (0.0, 0.0))))
        result = random_search(env, None, budget=25, seed=3)
        assert env.evaluations == result.evaluations == 25
        assert 0.0 <= result.accuracy <= 1.0

    def test_seeded_and_improving(self):
        env = analytic_env(HyperparamVector((X, Y), (1.0, -1.0)))
        small = random_search(env, None, budget=5, seed=7)
        large = random_search(env, None, budget=200, seed=7)
        assert random_search(env, None, budget=5, seed=7) == small
        assert large.accuracy >= small.accuracy
        assert not math.isnan(large.accuracy)

    def test_budget_must_be_positive(self):
        with pytest.raises(ValueError):
            random_search(analytic_env(HyperparamVector((X,), (0.0,))), None, budget=0)
