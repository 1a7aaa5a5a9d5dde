import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gradlab.exceptions import DimensionError, DomainError
from gradlab.lab.config import DatasetSpec
from gradlab.lab.datasets import generate_dataset
from gradlab.layers import ModelSpec
from gradlab.ndcore import RngState
from gradlab.trainkit import (
    Dataset,
    EarlyStopConfig,
    MLPModel,
    StopState,
    TrainConfig,
    batch_indices,
    clip_gradient,
    early_stop_update,
    grad_mean,
    grad_of_mean,
    loss_mean,
    minibatches,
    seed_streams,
    sgd_step,
    train,
)


@pytest.fixture
def regression():
    train_set, val_set = generate_dataset(DatasetSpec("linear_teacher", 64, 16, 0.1, 4), 5)
    model = MLPModel(ModelSpec((4, 8, 1), "tanh"))
    params, _ = model.init_params(seed_streams(5)[0])
    return model, params, train_set, val_set


def test_dataset_validation():
    with pytest.raises(DimensionError):
        Dataset(np.zeros((3, 2)), np.zeros(2))
    with pytest.raises(DimensionError):
        Dataset(np.zeros((0, 2)), np.zeros(0))


def test_loss_mean_examples(regression):
    model, params, data, _ = regression
    one = data.subset([3])
    assert loss_mean(model, params, data.subset([3, 3, 3])) == pytest.approx(loss_mean(model, params, one), rel=1e-15)
    perfect = Dataset(one.inputs, model.predict(params, one.inputs))
    assert loss_mean(model, params, perfect) == 0.0


def test_bce_matches_closed_form():
    model = MLPModel(ModelSpec((2, 1), output_kind="sigmoid"), "bce")
    params = {"W0": np.array([[1.0, -2.0]]), "b0": np.array([0.5])}
    X = np.array([[0.3, 0.1], [-1.0, 2.0], [40.0, -30.0]])
    y = np.array([1.0, 0.0, 0.0])
    z = X @ params["W0"][0] + 0.5
    expected = np.mean(np.logaddexp(0, z) - y * z)
    assert loss_mean(model, params, Dataset(X, y)) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("b", [1, 7, 64])
def test_commuting_forms(regression, b):
    model, params, data, _ = regression
    batch = data.subset(range(b))
    left = grad_of_mean(model, params, batch)
    right = grad_mean(model, params, batch)
    for k in left:
        np.testing.assert_allclose(left[k], right[k], rtol=0, atol=1e-12)


def test_grad_mean_batch_of_one_and_doubling(regression):
    model, params, data, _ = regression
    one = data.subset([0])
    np.testing.assert_array_equal(grad_mean(model, params, one)["W0"], grad_of_mean(model, params, one)["W0"])
    batch = data.subset(range(10))
    doubled = data.subset(list(range(10)) * 2)
    g, g2 = grad_mean(model, params, batch), grad_mean(model, params, doubled)
    for k in g:
        np.testing.assert_allclose(g[k], g2[k], rtol=0, atol=1e-12)


def test_block_weighted_average_is_full_gradient(regression):
    model, params, data, _ = regression
    blocks, _ = batch_indices(len(data), 7, RngState(2))
    total = None
    for blk in blocks:
        g = grad_mean(model, params, data.subset(blk))
        term = {k: len(blk) * v for k, v in g.items()}
        total = term if total is None else {k: total[k] + term[k] for k in total}
    full = grad_of_mean(model, params, data)
    for k in full:
        np.testing.assert_allclose(total[k] / len(data), full[k], rtol=0, atol=1e-10)


def test_minibatch_examples(regression):
    _, _, data, _ = regression
    (only,), _ = batch_indices(len(data), len(data), RngState(0))
    assert sorted(only.tolist()) == list(range(len(data)))
    singles, _ = batch_indices(len(data), 1, RngState(0))
    assert len(singles) == len(data) and all(len(s) == 1 for s in singles)
    batches, _ = minibatches(data, 5, RngState(0))
    assert len(batches) == math.ceil(len(data) / 5)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 60), st.integers(1, 70), st.integers(0, 2**32))
def test_batches_partition(n, b, seed):
    blocks, _ = batch_indices(n, b, RngState(seed))
    flat = np.concatenate(blocks)
    assert sorted(flat.tolist()) == list(range(n))
    assert all(len(x) == b for x in blocks[:-1]) and 1 <= len(blocks[-1]) <= b


def test_clip_examples():
    np.testing.assert_array_equal(clip_gradient(np.array([3.0, -0.5]), 1.0), [1.0, -0.5])
    np.testing.assert_array_equal(clip_gradient(np.array([0.2, -0.3]), 1.0), [0.2, -0.3])
    np.testing.assert_array_equal(clip_gradient(np.array([-7.0]), 2.0), [-2.0])
    with pytest.raises(DomainError):
        clip_gradient(np.ones(2), 0.0)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 8, elements=st.floats(-1e6, 1e6)), st.floats(1e-6, 1e3))
def test_clip_properties(g, theta):
    c = clip_gradient(g, theta)
    assert np.max(np.abs(c)) <= theta
    assert np.all(np.sign(c) == np.sign(g))
    assert np.all((c == 0) == (g == 0))


def test_sgd_examples():
    w = {"w": np.array([1.0, -2.0])}
    np.testing.assert_array_equal(sgd_step(w, {"w": np.zeros(2)}, 0.3)["w"], w["w"])
    assert sgd_step(np.array(1.0), np.array(1.0), 0.1) == 0.9
    g = np.array([0.5, 0.25])
    w0 = np.array([1.0, 2.0])
    np.testing.assert_array_equal(sgd_step(sgd_step(w0, g, 0.5), g, 0.5), sgd_step(w0, g, 1.0))


def test_early_stop_counting():
    cfg = EarlyStopConfig(patience=2)
    state = StopState()
    halts = []
    for epoch, loss in enumerate([1.0, 1.1, 1.1]):
        state, halt = early_stop_update(state, loss, {"w": np.array(loss)}, cfg, epoch)
        halts.append(halt)
    assert halts == [False, False, True]
    assert state.best_val_loss == 1.0 and state.best_params["w"] == 1.0 and state.best_epoch == 0


def test_early_stop_decreasing_never_halts():
    cfg = EarlyStopConfig(patience=1)
    state = StopState()
    for loss in np.linspace(1.0, 0.1, 50):
        state, halt = early_stop_update(state, loss, np.array(loss), cfg)
        assert not halt


def test_early_stop_min_delta():
    cfg = EarlyStopConfig(patience=1, min_delta=0.1)
    state, _ = early_stop_update(StopState(), 1.0, np.array(0.0), cfg)
    state, halt = early_stop_update(state, 0.95, np.array(0.0), cfg)
    assert halt and state.best_val_loss == 1.0


def test_train_linear_teacher_converges():
    train_set, val_set = generate_dataset(DatasetSpec("linear_teacher", 40, 10, 0.0, 3), 1)
    model = MLPModel(ModelSpec((3, 1)))
    result = train(model, train_set, val_set, TrainConfig(eta=0.1, batch_size=8, max_epochs=200, seed=4))
    assert result.history[-1].train_loss < 1e-4


def test_train_deterministic(regression):
    model, _, data, val = regression
    cfg = TrainConfig(eta=0.05, batch_size=8, max_epochs=5, seed=3, clip_threshold=0.5)
    a = train(model, data, val, cfg)
    b = train(model, data, val, cfg)
    assert a.history == b.history
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])


def test_train_with_dropout_deterministic(regression):
    _, _, data, val = regression
    model = MLPModel(ModelSpec((4, 8, 1), "relu", dropout_prob=0.5))
    cfg = TrainConfig(eta=0.05, batch_size=8, max_epochs=3, seed=3)
    assert train(model, data, val, cfg).history == train(model, data, val, cfg).history


def test_train_config_validation():
    with pytest.raises(DomainError):
        TrainConfig(eta=0.0, batch_size=1, max_epochs=1, seed=0)
    with pytest.raises(DomainError):
        TrainConfig(eta=0.1, batch_size=1, max_epochs=1, seed=0, clip_threshold=-1.0)
