"""Tests for the neural-network engine."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hparam_mapper.errors import ShapeError, TrainingDivergedError
from hparam_mapper.nn_engine import (
    NetworkParams,
    NetworkSpec,
    ParamPair,
    TrainConfig,
    activation,
    backward,
    clip_gradients,
    concat,
    conv2d,
    dense,
    dropout,
    evaluate_loss,
    flatten,
    forward,
    global_norm,
    init_params,
    mse,
    reshape,
    split_concat,
    train,
    upsample2d,
)


def two_branch_network():
    """Image branch (conv) and vector branch (dense) joined by a concat."""
    return NetworkSpec(
        input_shapes=((4, 4, 1), (3,)),
        input_names=("img", "vec"),
        layers=(
            conv2d("c1", 1, 2, 3, 2, ("img",)),
            activation("c1_tanh", "tanh"),
            flatten("c1_flat"),
            dense("v", 3, 4, ("vec",)),
            activation("v_elu", "elu"),
            concat("join", ("c1_flat", "v_elu")),
            dense("out", 12, 3),
            activation("out_sig", "sigmoid"),
        ),
    )


def decoder_network():
    """Dense -> reshape -> upsample -> conv, as in an image decoder."""
    return NetworkSpec(
        input_shapes=((4,),),
        layers=(
            dense("fc", 4, 8),
            activation("fc_tanh", "tanh"),
            reshape("grid", (2, 2, 2)),
            upsample2d("up", 2),
            conv2d("conv", 2, 1, 3, 1),
            flatten("flat"),
        ),
    )


def every_layer_network():
    """Uses every layer kind and activation, with dropout ahead of the decoder half."""
    return NetworkSpec(
        input_shapes=((4, 4, 1), (3,)),
        input_names=("img", "vec"),
        layers=(
            conv2d("c1", 1, 2, 3, 1, ("img",)),
            activation("c1_relu", "relu"),
            flatten("c1_flat"),
            dense("v", 3, 4, ("vec",)),
            activation("v_tanh", "tanh"),
            concat("join", ("c1_flat", "v_tanh")),
            dense("mid", 36, 8),
            activation("mid_elu", "elu"),
            dropout("drop", 0.3),
            reshape("grid", (2, 2, 2)),
            upsample2d("up", 2),
            conv2d("c2", 2, 1, 3, 1),
            flatten("c2_flat"),
            dense("out", 16, 2),
            activation("out_sig", "sigmoid"),
        ),
    )


def numeric_gradients(spec, params, batch, eps=1e-6, dropout_seed=None):
    """Central differences; a fixed ``dropout_seed`` replays the same masks on every call."""

    def loss_at(trial):
        rng = None if dropout_seed is None else np.random.default_rng(dropout_seed)
        return evaluate_loss(spec, trial, batch, dropout_rng=rng)

    grads = {}
    for name, pair in params.layers.items():
        parts = []
        for which, base in enumerate(pair):
            g = np.zeros_like(base)
            for idx in np.ndindex(base.shape):
                losses = []
                for sign in (1.0, -1.0):
                    moved = base.copy()
                    moved[idx] += sign * eps
                    replaced = pair._replace(**{pair._fields[which]: moved})
                    trial = NetworkParams({**params.layers, name: replaced})
                    losses.append(loss_at(trial))
                g[idx] = (losses[0] - losses[1]) / (2 * eps)
            parts.append(g)
        grads[name] = ParamPair(*parts)
    return NetworkParams(grads)


class TestNetworkSpec:
    def test_shapes_propagate(self):
        spec = two_branch_network()
        assert spec.shapes["c1"] == (2, 2, 2)
        assert spec.shapes["join"] == (12,)
        assert spec.output_shape == (3,)
        assert [layer.name for layer in spec.parametric_layers] == ["c1", "v", "out"]

    def test_decoder_shapes(self):
        spec = decoder_network()
        assert spec.shapes["up"] == (4, 4, 2)
        assert spec.output_shape == (16,)

    def test_unknown_source_is_rejected(self):
        with pytest.raises(ShapeError) as excinfo:
            NetworkSpec(((2,),), (dense("a", 2, 2, ("nowhere",)),))
        assert excinfo.value.layer == "a"

    def test_dangling_branch_is_rejected(self):
        with pytest.raises(ShapeError):
            NetworkSpec(((2,),), (dense("a", 2, 2), dense("b", 2, 2, ("input0",))))

    def test_mismatched_dense_width_names_layer(self):
        with pytest.raises(ShapeError) as excinfo:
            NetworkSpec(((3,),), (dense("a", 3, 4), dense("b", 5, 1)))
        assert excinfo.value.layer == "b"

    def test_bad_activation(self):
        with pytest.raises(ShapeError):
            activation("x", "softsign")


class TestForward:
    def test_identity_dense(self):
        spec = NetworkSpec(((2,),), (dense("fc", 2, 2),))
        params = NetworkParams({"fc": ParamPair(np.eye(2), np.zeros(2))})
        x = np.array([[0.5, -1.0], [2.0, 3.0]])
        np.testing.assert_array_equal(forward(spec, params, x), x)

    def test_unbatched_sample(self):
        spec = two_branch_network()
        params = init_params(spec, 3)
        img, vec = np.ones((4, 4, 1)), np.arange(3.0)
        single = forward(spec, params, [img, vec])
        batched = forward(spec, params, [img[None], vec[None]])
        assert single.shape == (3,)
        np.testing.assert_allclose(single, batched[0])

    def test_dropout_is_identity_at_inference(self):
        with_drop = NetworkSpec(((3,),), (dense("fc", 3, 3), dropout("drop", 0.5)))
        without = NetworkSpec(((3,),), (dense("fc", 3, 3),))
        params = init_params(with_drop, 1)
        x = np.random.default_rng(0).normal(size=(5, 3))
        np.testing.assert_array_equal(forward(with_drop, params, x), forward(without, params, x))

    def test_wrong_input_shape(self):
        spec = two_branch_network()
        params = init_params(spec)
        with pytest.raises(ShapeError):
            forward(spec, params, [np.ones((2, 5, 5, 1)), np.ones((2, 3))])


class TestInit:
    def test_seeded_and_bounded(self):
        spec = two_branch_network()
        a, b = init_params(spec, 11), init_params(spec, 11)
        np.testing.assert_array_equal(a.flat(), b.flat())
        for layer in spec.parametric_layers:
            bound = 1.0 / np.sqrt(layer.fan_in)
            assert np.all(np.abs(a[layer.name].weight) <= bound)
            assert a[layer.name].weight.shape == layer.weight_shape()

    def test_different_seeds_differ(self):
        spec = two_branch_network()
        assert not np.array_equal(init_params(spec, 0).flat(), init_params(spec, 1).flat())


class TestBackward:
    @pytest.mark.parametrize("seed", range(20))
    @pytest.mark.parametrize("build", [two_branch_network, decoder_network])
    def test_matches_finite_differences(self, build, seed):
        spec = build()
        rng = np.random.default_rng(seed)
        params = init_params(spec, seed)
        inputs = [rng.normal(size=(3, *shape)) for shape in spec.input_shapes]
        targets = rng.uniform(0.1, 0.9, size=(3, *spec.output_shape))
        batch = (inputs, targets)

        grads, loss = backward(spec, params, batch)
        assert loss == pytest.approx(evaluate_loss(spec, params, batch))
        expected = numeric_gradients(spec, params, batch)
        np.testing.assert_allclose(grads.flat(), expected.flat(), rtol=1e-4, atol=1e-7)

    @pytest.mark.parametrize("seed", range(20))
    def test_every_layer_kind_in_training_mode(self, seed):
        spec = every_layer_network()
        rng = np.random.default_rng(seed)
        params = init_params(spec, seed)
        inputs = [rng.normal(size=(3, *shape)) for shape in spec.input_shapes]
        targets = rng.uniform(0.1, 0.9, size=(3, *spec.output_shape))
        batch = (inputs, targets)
        mask_seed = 100 + seed

        grads, loss = backward(spec, params, batch, dropout_rng=np.random.default_rng(mask_seed))
        replayed = evaluate_loss(spec, params, batch, dropout_rng=np.random.default_rng(mask_seed))
        assert loss == pytest.approx(replayed)
        assert loss != pytest.approx(evaluate_loss(spec, params, batch))
        expected = numeric_gradients(spec, params, batch, dropout_seed=mask_seed)
        np.testing.assert_allclose(grads.flat(), expected.flat(), rtol=1e-4, atol=1e-7)

    def test_zero_residual_gives_zero_gradients(self):
        spec = two_branch_network()
        rng = np.random.default_rng(3)
        params = init_params(spec, 3)
        inputs = [rng.normal(size=(4, *shape)) for shape in spec.input_shapes]
        grads, loss = backward(spec, params, (inputs, forward(spec, params, inputs)))
        assert loss == 0.0
        assert not np.any(grads.flat())

    def test_pointwise_conv_matches_dense(self):
        conv_spec = NetworkSpec(((2, 3, 3),), (conv2d("c", 3, 2, 1),))
        dense_spec = NetworkSpec(((3,),), (dense("fc", 3, 2),))
        conv_params = init_params(conv_spec, 7)
        pair = conv_params["c"]
        dense_params = NetworkParams({"fc": ParamPair(pair.weight.reshape(2, 3), pair.bias)})
        rng = np.random.default_rng(7)
        x = rng.normal(size=(4, 2, 3, 3))
        y = rng.normal(size=(4, 2, 3, 2))

        conv_grads, conv_loss = backward(conv_spec, conv_params, (x, y))
        dense_grads, dense_loss = backward(
            dense_spec, dense_params, (x.reshape(-1, 3), y.reshape(-1, 2))
        )
        assert conv_loss == pytest.approx(dense_loss)
        np.testing.assert_allclose(conv_grads["c"].weight.reshape(2, 3), dense_grads["fc"].weight)
        np.testing.assert_allclose(conv_grads["c"].bias, dense_grads["fc"].bias)

    def test_empty_batch(self):
        spec = NetworkSpec(((2,),), (dense("fc", 2, 1),))
        with pytest.raises(ShapeError):
            backward(spec, init_params(spec), (np.zeros((0, 2)), np.zeros((0, 1))))


class TestClipping:
    def test_rescales_to_bound(self):
        np.testing.assert_allclose(clip_gradients(np.array([3.0, 4.0]), 1.0), [0.6, 0.8])

    def test_within_bound_untouched(self):
        grads = np.array([0.1, 0.2])
        assert clip_gradients(grads, 1.0) is grads

    def test_network_params(self):
        grads = NetworkParams({"a": ParamPair(np.full((2, 2), 3.0), np.full(2, 4.0))})
        clipped = clip_gradients(grads, 2.0)
        assert global_norm(clipped) == pytest.approx(2.0)

    @settings(max_examples=50, deadline=None)
    @given(
        vector=arrays(np.float64, 6, elements=st.floats(-1e3, 1e3)),
        bound=st.floats(1e-3, 1e2),
    )
    def test_idempotent(self, vector, bound):
        once = clip_gradients(vector, bound)
        assert global_norm(once) <= bound * (1 + 1e-9)
        np.testing.assert_allclose(clip_gradients(once, bound), once)

    def test_non_positive_bound(self):
        with pytest.raises(ValueError):
            clip_gradients(np.ones(2), 0.0)


class TestTrain:
    def test_learns_identity(self):
        spec = NetworkSpec(((1,),), (dense("fc", 1, 1),))
        x = np.linspace(-1, 1, 32)[:, None]
        result = train(spec, TrainConfig(learning_rate=0.1, epochs=200, batch_size=8), (x, x))
        assert result.final_loss < 1e-4
        assert result.final_loss < result.initial_loss
        assert result.params["fc"].weight[0, 0] == pytest.approx(1.0, abs=1e-2)

    def test_deterministic(self):
        spec = two_branch_network()
        rng = np.random.default_rng(0)
        data = ([rng.normal(size=(10, 4, 4, 1)), rng.normal(size=(10, 3))], rng.random((10, 3)))
        config = TrainConfig(learning_rate=0.05, epochs=5, batch_size=4, seed=9)
        a, b = train(spec, config, data), train(spec, config, data)
        assert a.loss_history == b.loss_history
        np.testing.assert_array_equal(a.params.flat(), b.params.flat())

    def test_hook_sees_clipped_gradients(self):
        spec = NetworkSpec(((2,),), (dense("fc", 2, 1),))
        x = np.random.default_rng(1).normal(size=(8, 2)) * 50
        norms = []
        train(
            spec,
            TrainConfig(learning_rate=1e-4, epochs=2, batch_size=4, clip_norm=0.5),
            (x, x.sum(axis=1)),
            on_step=lambda epoch, batch, grads: norms.append(global_norm(grads)),
        )
        assert len(norms) == 4
        assert max(norms) <= 0.5 + 1e-12

    def test_validation_history(self):
        spec = NetworkSpec(((1,),), (dense("fc", 1, 1),))
        x = np.linspace(0, 1, 10)[:, None]
        result = train(spec, TrainConfig(epochs=3), (x, x), validation=(x[:2], x[:2]))
        assert len(result.validation_history) == len(result.loss_history) == 3

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_carries_history(self):
        spec = NetworkSpec(((1,),), (dense("fc", 1, 1),))
        x = np.linspace(-10, 10, 32)[:, None]
        with pytest.raises(TrainingDivergedError) as excinfo:
            train(spec, TrainConfig(learning_rate=1e3, epochs=200, batch_size=32), (x, x))
        assert excinfo.value.epoch == len(excinfo.value.loss_history)

    def test_zero_epochs_returns_initialization(self):
        spec = two_branch_network()
        rng = np.random.default_rng(2)
        data = ([rng.normal(size=(6, 4, 4, 1)), rng.normal(size=(6, 3))], rng.random((6, 3)))
        result = train(spec, TrainConfig(epochs=0, seed=4), data)
        expected = init_params(spec, np.random.default_rng(4))
        np.testing.assert_array_equal(result.params.flat(), expected.flat())
        assert result.loss_history == []
        assert result.final_loss == result.initial_loss

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            TrainConfig(loss="hinge")


def test_split_concat_inverts_concat():
    left, right = np.arange(4.0).reshape(2, 2), np.arange(4.0, 10.0).reshape(2, 3)
    parts = split_concat(np.concatenate([left, right], axis=1), [2, 3])
    assert [p.shape for p in parts] == [(2, 2), (2, 3)]
    np.testing.assert_array_equal(parts[0], left)
    np.testing.assert_array_equal(parts[1], right)


def test_mse():
    assert mse(np.array([1.0, 3.0]), np.array([0.0, 1.0])) == pytest.approx(2.5)
