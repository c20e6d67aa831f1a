import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.linear_model import LogisticRegression

from hetero_mia.errors import ConfigError
from hetero_mia.model import (
    Architecture,
    ModelParams,
    TrainConfig,
    accuracy,
    init_model,
    loss_and_grad,
    predict,
    predict_proba,
    train,
)

from conftest import blobs
from oracles import finite_difference_check


def test_gradient_matches_finite_differences():
    worst, count = finite_difference_check(Architecture((5, 7, 6, 3)), seed=1)
    assert count >= 100
    assert worst < 1e-4


def test_gradient_with_l2():
    worst, _ = finite_difference_check(Architecture((4, 8, 2)), seed=2, l2=0.1)
    assert worst < 1e-4


# --------------------------------------------------------------------------- init / predict


def test_init_deterministic_and_bounded():
    arch = Architecture.mlp(6, 3, (10, 4))
    a, b = init_model(arch, 5), init_model(arch, 5)
    assert a.flatten().tobytes() == b.flatten().tobytes()
    for w, bias in zip(a.weights, a.biases):
        assert np.all(bias == 0)
        assert np.abs(w).max() <= math.sqrt(6.0 / w.shape[0])
    assert init_model(arch, 6).flatten().tobytes() != a.flatten().tobytes()


def test_zero_width_rejected():
    with pytest.raises(ConfigError):
        Architecture((3, 0, 2))


def test_zero_weights_give_uniform():
    arch = Architecture.mlp(4, 3, (5,))
    p = init_model(arch, 0)
    zero = p.from_flat(np.zeros_like(p.flatten()))
    np.testing.assert_array_equal(predict(zero, np.ones(4)), np.full(3, 1 / 3))


@given(st.integers(0, 2**32 - 1), st.floats(-1e3, 1e3))
@settings(max_examples=60, deadline=None)
def test_softmax_normalized(seed, scale):
    p = init_model(Architecture.mlp(3, 4, (6,)), seed)
    x = np.random.default_rng(seed).normal(size=(5, 3)) * scale
    probs = predict_proba(p, x)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(probs >= 0) and np.all(probs <= 1)
    loss, _ = loss_and_grad(p, x, np.zeros(5, dtype=int))
    assert loss >= 0


def test_probabilities_strictly_inside_unit_interval():
    p = init_model(Architecture.mlp(3, 2, (4,)), 1)
    probs = predict(p, np.array([0.3, -0.2, 1.0]))
    assert probs.shape == (2,) and np.all((probs > 0) & (probs < 1))


def test_predict_dimension_mismatch():
    with pytest.raises(ValueError, match="features"):
        predict(init_model(Architecture.mlp(3, 2), 0), np.zeros(4))


# --------------------------------------------------------------------------- loss


def test_uniform_loss_is_ln2():
    p = init_model(Architecture.mlp(2, 2, (3,)), 0)
    zero = p.from_flat(np.zeros_like(p.flatten()))
    loss, _ = loss_and_grad(zero, np.ones((4, 2)), [0, 1, 1, 0])
    assert loss == pytest.approx(math.log(2), abs=1e-15)


def test_confident_prediction_loss_near_zero():
    arch = Architecture((1, 2))
    p = ModelParams(arch, (np.array([[-30.0, 30.0]]),), (np.zeros(2),))
    loss, _ = loss_and_grad(p, np.ones((1, 1)), [1])
    assert 0 <= loss < 1e-20


def test_label_out_of_range():
    with pytest.raises(ValueError, match="labels"):
        loss_and_grad(init_model(Architecture.mlp(2, 2), 0), np.zeros((1, 2)), [2])


# --------------------------------------------------------------------------- train


@pytest.fixture(scope="module")
def separable():
    return blobs([("g", 0, [-2, -2], 0.5, 200), ("g", 1, [2, 2], 0.5, 200)], seed=3)


def test_logistic_regression_oracle_separates(separable):
    clf = LogisticRegression().fit(separable.features, separable.labels)
    assert clf.score(separable.features, separable.labels) >= 0.95


def test_train_separable_blobs(separable):
    params = init_model(Architecture.mlp(2, 2, (16,)), 0)
    cfg = TrainConfig(lr=0.05, epochs=200, batch_size=16, seed=1)
    params, history = train(params, separable.features, separable.labels, cfg)
    assert accuracy(params, separable.features, separable.labels) >= 0.95
    assert history[-1] < history[0]
    assert len(history) == 200


def test_train_deterministic(separable):
    cfg = TrainConfig(epochs=5, seed=4)
    init = init_model(Architecture.mlp(2, 2, (8,)), 2)
    a, ha = train(init, separable.features, separable.labels, cfg)
    b, hb = train(init, separable.features, separable.labels, cfg)
    assert a.flatten().tobytes() == b.flatten().tobytes() and ha == hb


def test_train_chunks_equal_one_run(separable):
    cfg = TrainConfig(epochs=6, seed=4)
    init = init_model(Architecture.mlp(2, 2, (8,)), 2)
    whole, _ = train(init, separable.features, separable.labels, cfg)
    half = TrainConfig(epochs=3, seed=4)
    p, _ = train(init, separable.features, separable.labels, half)
    p, _ = train(p, separable.features, separable.labels, half, start_epoch=3)
    assert whole.flatten().tobytes() == p.flatten().tobytes()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_aborts_on_divergence(separable):
    from hetero_mia.errors import TrainingError

    init = init_model(Architecture.mlp(2, 2, (8,)), 0)
    with pytest.raises(TrainingError):
        train(init, separable.features * 1e150, separable.labels, TrainConfig(lr=1e10, epochs=3))


def test_train_config_validation():
    for kwargs in ({"lr": -1}, {"epochs": 0}, {"batch_size": 0}):
        with pytest.raises(ConfigError):
            TrainConfig(**kwargs)


def test_params_json_roundtrip(tmp_path):
    p = init_model(Architecture.mlp(3, 2, (4,)), 9)
    p.save(tmp_path / "m.json")
    q = ModelParams.load(tmp_path / "m.json")
    assert q.arch == p.arch
    assert q.flatten().tobytes() == p.flatten().tobytes()
    raw = p.to_dict()
    assert np.asarray(raw["layers"][0]["weight"]).shape == (3, 4)
